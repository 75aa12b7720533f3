//! Synthetic experiment with nonlinear outcome and compliance models, a
//! latent-complier ground truth, and a Monte Carlo runner.
//!
//! Units draw `W ~ U(0,1)`, `X ~ N(0, I_d)` and `eps ~ N(0,1)`; the stratum is
//! the equal-width bin of `W`. With
//!
//! ```text
//! b(X, W) = sin(pi X1 X2) + 2 (X3 - 0.5)^2 + X4 + 0.5 X5 + 0.1 W
//! c(X, W) = 0.1 (X1 + log(1 + exp(X2)) + W)
//! ```
//!
//! potential outcomes are `Y(d) = a_d + b + eps`, `D(0) = 1{b0 + c > c0 eps}`
//! and `D(1) = 1` if `D(0) = 1`, else `1{b1 + c > c1 eps}`. Covariates beyond
//! the configured dimension enter `b` and `c` as zero.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{compute_stratum_stats, nearest_rank_quantile, ExperimentSample, ThresholdGrid};
use crate::error::{LdteError, Result};
use crate::estimator::{estimate_ldte, EstimatorConfig, LdteResult};
use crate::inference::{analytic_band, analytic_variance};
use crate::nuisance::logistic::softplus;
use crate::nuisance::{fit_cross_fitted, GbtParams, LearnerSpec, RidgeParams};
use crate::randomization::{assign, CarScheme, SchemeKind, Targets};
use crate::seed;

/// Missing fields take their default when deserialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub a1: f64,
    pub a0: f64,
    pub b1: f64,
    pub b0: f64,
    pub c1: f64,
    pub c0: f64,
    pub n_strata: usize,
    pub covariate_dim: usize,
    pub target_pi1: f64,
    pub scheme: SchemeKind,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            a1: 2.0,
            a0: 1.0,
            b1: 1.0,
            b0: -1.0,
            c1: 3.0,
            c0: 3.0,
            n_strata: 4,
            covariate_dim: 20,
            target_pi1: 0.5,
            scheme: SchemeKind::SimpleRandom,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_strata == 0 {
            return Err(LdteError::InvalidConfig("n_strata must be >= 1".into()));
        }
        if !(self.target_pi1 > 0.0 && self.target_pi1 < 1.0) {
            return Err(LdteError::InvalidConfig(format!(
                "target_pi1 {} is not in (0, 1)",
                self.target_pi1
            )));
        }
        let finite = [self.a1, self.a0, self.b1, self.b0, self.c1, self.c0]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(LdteError::InvalidConfig("structural constants must be finite".into()));
        }
        self.car_scheme().map(|_| ())
    }

    pub fn car_scheme(&self) -> Result<CarScheme> {
        CarScheme::new(self.scheme.clone(), Targets::All(self.target_pi1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compliance {
    NeverTaker,
    Complier,
    AlwaysTaker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub sample: ExperimentSample,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub d0: Vec<u8>,
    pub d1: Vec<u8>,
    pub compliance: Vec<Compliance>,
}

struct Unit {
    w: f64,
    stratum: usize,
    y0: f64,
    y1: f64,
    d0: u8,
    d1: u8,
}

fn draw_unit<R: Rng>(config: &DgpConfig, rng: &mut R, x: &mut [f64]) -> Unit {
    let w: f64 = rng.random();
    for v in x.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let eps: f64 = rng.sample(StandardNormal);
    let xk = |k: usize| x.get(k).copied().unwrap_or(0.0);
    let b = (PI * xk(0) * xk(1)).sin() + 2.0 * (xk(2) - 0.5).powi(2) + xk(3) + 0.5 * xk(4) + 0.1 * w;
    let c = 0.1 * (xk(0) + softplus(xk(1)) + w);
    let d0 = u8::from(config.b0 + c > config.c0 * eps);
    let d1 = if d0 == 1 { 1 } else { u8::from(config.b1 + c > config.c1 * eps) };
    let stratum = ((w * config.n_strata as f64) as usize).min(config.n_strata - 1);
    Unit {
        w,
        stratum,
        y0: config.a0 + b + eps,
        y1: config.a1 + b + eps,
        d0,
        d1,
    }
}

/// Draws `n` units and assigns them with the configured scheme.
pub fn generate(config: &DgpConfig, n: usize, seed: u64) -> Result<GeneratedSample> {
    config.validate()?;
    if n == 0 {
        return Err(LdteError::EmptyDataset);
    }
    let dim = config.covariate_dim;
    let mut rng = seed::rng(seed, &[seed::TAG_DGP]);
    let mut covariates = vec![0.0; n * dim];
    let mut units = Vec::with_capacity(n);
    for i in 0..n {
        units.push(draw_unit(config, &mut rng, &mut covariates[i * dim..(i + 1) * dim]));
    }
    let strata: Vec<usize> = units.iter().map(|u| u.stratum).collect();
    let z = assign(&config.car_scheme()?, &strata, seed::derive(seed, &[seed::TAG_ASSIGN]))?;
    let d: Vec<u8> = units.iter().zip(&z).map(|(u, &zi)| if zi == 1 { u.d1 } else { u.d0 }).collect();
    let y: Vec<f64> = units.iter().zip(&d).map(|(u, &di)| if di == 1 { u.y1 } else { u.y0 }).collect();
    debug_assert!(units.iter().all(|u| u.w < 1.0));
    // encode strata present in this draw; labels are 1-based bin numbers
    let labels: Vec<String> = strata.iter().map(|s| (s + 1).to_string()).collect();
    let (codes, stratum_labels) = crate::data::encode_labels(&labels);
    let sample = ExperimentSample::from_parts(y, d, z, codes, stratum_labels, covariates, dim)?;
    Ok(GeneratedSample {
        sample,
        y0: units.iter().map(|u| u.y0).collect(),
        y1: units.iter().map(|u| u.y1).collect(),
        d0: units.iter().map(|u| u.d0).collect(),
        d1: units.iter().map(|u| u.d1).collect(),
        compliance: units
            .iter()
            .map(|u| match (u.d0, u.d1) {
                (0, 0) => Compliance::NeverTaker,
                (0, 1) => Compliance::Complier,
                _ => Compliance::AlwaysTaker,
            })
            .collect(),
    })
}

/// Large reference draw: sorted observed outcomes and complier potential
/// outcomes, without storing covariates.
pub struct ReferenceDraw {
    pub observed_sorted: Vec<f64>,
    pub complier_y0_sorted: Vec<f64>,
    pub complier_y1_sorted: Vec<f64>,
}

impl ReferenceDraw {
    pub fn new(config: &DgpConfig, n_ref: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_ref == 0 {
            return Err(LdteError::EmptyDataset);
        }
        let mut rng = seed::rng(seed, &[seed::TAG_DGP]);
        let mut x = vec![0.0; config.covariate_dim];
        let units: Vec<Unit> = (0..n_ref).map(|_| draw_unit(config, &mut rng, &mut x)).collect();
        let strata: Vec<usize> = units.iter().map(|u| u.stratum).collect();
        let z = assign(&config.car_scheme()?, &strata, seed::derive(seed, &[seed::TAG_ASSIGN]))?;
        let mut observed: Vec<f64> = units
            .iter()
            .zip(&z)
            .map(|(u, &zi)| {
                let di = if zi == 1 { u.d1 } else { u.d0 };
                if di == 1 {
                    u.y1
                } else {
                    u.y0
                }
            })
            .collect();
        observed.sort_by(f64::total_cmp);
        let compliers = units.iter().filter(|u| u.d1 > u.d0);
        let mut y0: Vec<f64> = compliers.clone().map(|u| u.y0).collect();
        let mut y1: Vec<f64> = compliers.map(|u| u.y1).collect();
        y0.sort_by(f64::total_cmp);
        y1.sort_by(f64::total_cmp);
        Ok(Self {
            observed_sorted: observed,
            complier_y0_sorted: y0,
            complier_y1_sorted: y1,
        })
    }

    /// Nearest-rank quantiles of the observed outcome.
    pub fn thresholds(&self, levels: &[f64]) -> Result<ThresholdGrid> {
        let mut values: Vec<f64> = levels
            .iter()
            .map(|&p| nearest_rank_quantile(&self.observed_sorted, p))
            .collect();
        values.dedup();
        ThresholdGrid::new(values)
    }

    /// Complier CDF difference `F_{Y(1)}(y) - F_{Y(0)}(y)` at each threshold.
    pub fn truth(&self, grid: &ThresholdGrid) -> Result<Vec<f64>> {
        let m = self.complier_y0_sorted.len();
        if m == 0 {
            return Err(LdteError::NoCompliers);
        }
        let ecdf = |sorted: &[f64], y: f64| sorted.partition_point(|&v| v <= y) as f64 / m as f64;
        Ok(grid
            .values()
            .iter()
            .map(|&y| ecdf(&self.complier_y1_sorted, y) - ecdf(&self.complier_y0_sorted, y))
            .collect())
    }
}

/// True LDTE on the grid, from the compliers of a reference draw.
pub fn ground_truth(config: &DgpConfig, grid: &ThresholdGrid, n_ref: usize, seed: u64) -> Result<Vec<f64>> {
    ReferenceDraw::new(config, n_ref, seed)?.truth(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum McEstimator {
    Unadjusted,
    /// Ridge logistic nuisance models with a negligible penalty.
    LinearAdjusted,
    MlAdjusted { learner: LearnerSpec },
}

impl McEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            McEstimator::Unadjusted => "unadjusted",
            McEstimator::LinearAdjusted => "linear",
            McEstimator::MlAdjusted { .. } => "ml",
        }
    }

    pub fn learner(&self) -> LearnerSpec {
        match self {
            McEstimator::Unadjusted => LearnerSpec::zero(),
            McEstimator::LinearAdjusted => LearnerSpec::ridge(RidgeParams {
                penalty: 1e-6,
                ..RidgeParams::default()
            }),
            McEstimator::MlAdjusted { learner } => *learner,
        }
    }

    /// The three estimators of the default study.
    pub fn standard_set() -> Vec<Self> {
        vec![
            McEstimator::Unadjusted,
            McEstimator::LinearAdjusted,
            McEstimator::MlAdjusted {
                learner: LearnerSpec::gbt(GbtParams::default()),
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub dgp: DgpConfig,
    pub n: usize,
    pub reps: usize,
    pub levels: Vec<f64>,
    pub estimators: Vec<McEstimator>,
    pub seed: u64,
    pub n_ref: usize,
    pub folds: usize,
    pub level: f64,
}

impl McConfig {
    pub fn new(n: usize, reps: usize, seed: u64) -> Self {
        Self {
            dgp: DgpConfig::default(),
            n,
            reps,
            levels: (1..=9).map(|k| f64::from(k) / 10.0).collect(),
            estimators: McEstimator::standard_set(),
            seed,
            n_ref: 1_000_000,
            folds: 2,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub name: String,
    pub learner: LearnerSpec,
    pub rmse: Vec<f64>,
    pub ci_length: Vec<f64>,
    pub coverage: Vec<f64>,
    pub mean_beta: Vec<f64>,
    /// Replications excluded because estimation failed.
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub n: usize,
    pub reps: usize,
    pub levels: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub truth: Vec<f64>,
    pub estimators: Vec<EstimatorSummary>,
}

impl McReport {
    pub fn estimator(&self, name: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.name == name)
    }
}

/// One replication's point estimates and band for one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub beta: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn replicate(
    sample: &ExperimentSample,
    grid: &ThresholdGrid,
    estimator: &McEstimator,
    folds: usize,
    fold_seed: u64,
    level: f64,
) -> Result<ReplicationOutcome> {
    let stats = compute_stratum_stats(sample);
    let fit = fit_cross_fitted(sample, grid, &estimator.learner(), folds, fold_seed)?;
    let result: LdteResult = estimate_ldte(sample, &fit, &stats, grid, &EstimatorConfig::default())?;
    let variance = analytic_variance(sample, &fit, &stats, grid, &result)?;
    let band = analytic_band(&result, &variance, level)?;
    Ok(ReplicationOutcome {
        beta: result.beta,
        lower: band.lower,
        upper: band.upper,
    })
}

/// Runs every replication and returns the raw outcomes per estimator
/// (`outcomes[estimator][rep]`).
pub fn run_replications(
    config: &McConfig,
    grid: &ThresholdGrid,
) -> Result<Vec<Vec<std::result::Result<ReplicationOutcome, String>>>> {
    config.dgp.validate()?;
    if config.reps == 0 {
        return Err(LdteError::InvalidConfig("reps must be >= 1".into()));
    }
    let per_rep: Vec<Vec<std::result::Result<ReplicationOutcome, String>>> = (0..config.reps as u64)
        .into_par_iter()
        .map(|r| {
            let data_seed = seed::derive(config.seed, &[seed::TAG_MC, r, 0]);
            let fold_seed = seed::derive(config.seed, &[seed::TAG_MC, r, 1]);
            let generated = generate(&config.dgp, config.n, data_seed).map_err(|e| e.to_string());
            config
                .estimators
                .iter()
                .map(|est| {
                    let g = generated.as_ref().map_err(Clone::clone)?;
                    replicate(&g.sample, grid, est, config.folds, fold_seed, config.level).map_err(|e| e.to_string())
                })
                .collect()
        })
        .collect();
    let mut by_estimator: Vec<Vec<_>> = config.estimators.iter().map(|_| Vec::with_capacity(config.reps)).collect();
    for rep in per_rep {
        for (k, outcome) in rep.into_iter().enumerate() {
            by_estimator[k].push(outcome);
        }
    }
    Ok(by_estimator)
}

pub fn run_monte_carlo(config: &McConfig) -> Result<McReport> {
    let reference = ReferenceDraw::new(&config.dgp, config.n_ref, seed::derive(config.seed, &[seed::TAG_MC, u64::MAX]))?;
    let grid = reference.thresholds(&config.levels)?;
    let truth = reference.truth(&grid)?;
    let outcomes = run_replications(config, &grid)?;
    let j_count = grid.len();
    let mut estimators = Vec::new();
    for (est, reps) in config.estimators.iter().zip(outcomes) {
        let failures: Vec<&String> = reps.iter().filter_map(|r| r.as_ref().err()).collect();
        if failures.len() * 100 > config.reps {
            return Err(LdteError::TooManyFailedReplications {
                estimator: est.name().to_string(),
                failed: failures.len(),
                reps: config.reps,
                last: failures.last().map(|s| s.to_string()).unwrap_or_default(),
            });
        }
        let ok: Vec<&ReplicationOutcome> = reps.iter().filter_map(|r| r.as_ref().ok()).collect();
        let m = ok.len() as f64;
        let mut summary = EstimatorSummary {
            name: est.name().to_string(),
            learner: est.learner(),
            rmse: vec![0.0; j_count],
            ci_length: vec![0.0; j_count],
            coverage: vec![0.0; j_count],
            mean_beta: vec![0.0; j_count],
            failed: failures.len(),
        };
        for j in 0..j_count {
            let mut sq = 0.0;
            let mut len = 0.0;
            let mut hit = 0usize;
            let mut total = 0.0;
            for o in &ok {
                let err = o.beta[j] - truth[j];
                sq += err * err;
                len += o.upper[j] - o.lower[j];
                hit += usize::from(o.lower[j] <= truth[j] && truth[j] <= o.upper[j]);
                total += o.beta[j];
            }
            summary.rmse[j] = (sq / m).sqrt();
            summary.ci_length[j] = len / m;
            summary.coverage[j] = hit as f64 / m;
            summary.mean_beta[j] = total / m;
        }
        estimators.push(summary);
    }
    Ok(McReport {
        n: config.n,
        reps: config.reps,
        levels: config.levels.clone(),
        thresholds: grid.values().to_vec(),
        truth,
        estimators,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_units_are_consistent() {
        let g = generate(&DgpConfig::default(), 5000, 11).unwrap();
        let s = &g.sample;
        for i in 0..s.len() {
            assert!(g.d1[i] >= g.d0[i], "defier at {i}");
            let z = s.assignment()[i];
            let d = if z == 1 { g.d1[i] } else { g.d0[i] };
            assert_eq!(s.treatment()[i], d);
            let y = if d == 1 { g.y1[i] } else { g.y0[i] };
            assert_eq!(s.outcome()[i], y);
            assert!((g.y1[i] - g.y0[i] - 1.0).abs() < 1e-12);
        }
        assert_eq!(s.covariate_dim(), 20);
        assert_eq!(s.n_strata(), 4);
        assert_eq!(g, generate(&DgpConfig::default(), 5000, 11).unwrap());
    }

    #[test]
    fn stratum_shares_are_uniform() {
        let g = generate(&DgpConfig::default(), 100_000, 2).unwrap();
        let stats = compute_stratum_stats(&g.sample);
        for p in &stats.p_hat {
            assert!((p - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn low_dimensional_config_runs() {
        let cfg = DgpConfig {
            covariate_dim: 2,
            n_strata: 1,
            ..DgpConfig::default()
        };
        let g = generate(&cfg, 100, 0).unwrap();
        assert_eq!(g.sample.covariate_dim(), 2);
        assert!(DgpConfig { n_strata: 0, ..DgpConfig::default() }.validate().is_err());
        assert!(DgpConfig { target_pi1: 1.0, ..DgpConfig::default() }.validate().is_err());
    }

    #[test]
    fn everyone_always_takes_with_huge_b0() {
        let cfg = DgpConfig {
            b0: 1e9,
            ..DgpConfig::default()
        };
        let g = generate(&cfg, 2000, 4).unwrap();
        assert!(g.compliance.iter().all(|&c| c == Compliance::AlwaysTaker));
        let stats = compute_stratum_stats(&g.sample);
        let grid = ThresholdGrid::new(vec![1.0]).unwrap();
        let err = crate::estimator::estimate_unadjusted(&g.sample, &stats, &grid, &Default::default()).unwrap_err();
        assert!(matches!(err, LdteError::WeakFirstStage { .. }));
        assert!(matches!(ground_truth(&cfg, &grid, 1000, 1), Err(LdteError::NoCompliers)));
    }

    #[test]
    fn truth_is_a_location_shift_among_compliers() {
        let reference = ReferenceDraw::new(&DgpConfig::default(), 200_000, 8).unwrap();
        let grid = reference.thresholds(&[0.1, 0.5, 0.9]).unwrap();
        let truth = reference.truth(&grid).unwrap();
        let m = reference.complier_y0_sorted.len() as f64;
        let f0 = |y: f64| reference.complier_y0_sorted.partition_point(|&v| v <= y) as f64 / m;
        for (j, &y) in grid.values().iter().enumerate() {
            // Y(1) = Y(0) + 1 exactly, so F1(y) = F0(y - 1)
            assert!((truth[j] - (f0(y - 1.0) - f0(y))).abs() < 1e-12);
            assert!(truth[j] <= 0.0);
        }
        let far = ThresholdGrid::new(vec![1e6]).unwrap();
        assert_eq!(reference.truth(&far).unwrap(), vec![0.0]);
    }

    #[test]
    fn single_replication_rmse_is_absolute_error() {
        let mut cfg = McConfig::new(400, 1, 3);
        cfg.n_ref = 100_000;
        cfg.estimators = vec![McEstimator::Unadjusted];
        let report = run_monte_carlo(&cfg).unwrap();
        let reference = ReferenceDraw::new(&cfg.dgp, cfg.n_ref, seed::derive(3, &[seed::TAG_MC, u64::MAX])).unwrap();
        let grid = reference.thresholds(&cfg.levels).unwrap();
        let outcomes = run_replications(&cfg, &grid).unwrap();
        let beta = &outcomes[0][0].as_ref().unwrap().beta;
        let est = report.estimator("unadjusted").unwrap();
        for j in 0..grid.len() {
            assert!((est.rmse[j] - (beta[j] - report.truth[j]).abs()).abs() < 1e-15);
            assert!(est.coverage[j] == 0.0 || est.coverage[j] == 1.0);
        }
    }
}
