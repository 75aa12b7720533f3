//! Learner hyper-parameters from a TOML file. Every key is optional:
//!
//! ```toml
//! clip = 0.001        # predictions are clipped to [clip, 1 - clip]
//! pool_below = 50     # training cells smaller than this are pooled across strata
//!
//! [gbt]
//! n_trees = 100
//! max_depth = 3
//! learning_rate = 0.1
//! min_leaf = 10
//!
//! [ridge]
//! penalty = 1.0
//! max_iter = 100
//! tol = 1e-8
//! ```

use std::path::Path;

use ldte::{GbtParams, LearnerSpec, RidgeParams};
use serde::Deserialize;

use crate::args::LearnerKind;
use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GbtSection {
    n_trees: Option<usize>,
    max_depth: Option<usize>,
    learning_rate: Option<f64>,
    min_leaf: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RidgeSection {
    penalty: Option<f64>,
    max_iter: Option<usize>,
    tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    clip: Option<f64>,
    pool_below: Option<usize>,
    #[serde(default)]
    gbt: GbtSection,
    #[serde(default)]
    ridge: RidgeSection,
}

impl LearnerConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("learner config {}: {e}", path.display())))
    }

    pub fn gbt_params(&self) -> GbtParams {
        let d = GbtParams::default();
        GbtParams {
            n_trees: self.gbt.n_trees.unwrap_or(d.n_trees),
            max_depth: self.gbt.max_depth.unwrap_or(d.max_depth),
            learning_rate: self.gbt.learning_rate.unwrap_or(d.learning_rate),
            min_leaf: self.gbt.min_leaf.unwrap_or(d.min_leaf),
        }
    }

    pub fn ridge_params(&self) -> RidgeParams {
        let d = RidgeParams::default();
        RidgeParams {
            penalty: self.ridge.penalty.unwrap_or(d.penalty),
            max_iter: self.ridge.max_iter.unwrap_or(d.max_iter),
            tol: self.ridge.tol.unwrap_or(d.tol),
        }
    }

    pub fn spec(&self, kind: LearnerKind) -> Result<LearnerSpec, CliError> {
        let mut spec = match kind {
            LearnerKind::Zero => LearnerSpec::zero(),
            LearnerKind::Ridge => LearnerSpec::ridge(self.ridge_params()),
            LearnerKind::Gbt => LearnerSpec::gbt(self.gbt_params()),
        };
        if let Some(clip) = self.clip {
            spec.clip = clip;
        }
        if let Some(pool_below) = self.pool_below {
            spec.pool_below = pool_below;
        }
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }
}
