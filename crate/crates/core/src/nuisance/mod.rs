//! Cross-fitted nuisance estimates: the conditional outcome distribution
//! `mu_z(y, s, x) = P(Y <= y | Z = z, S = s, X = x)` on every threshold and
//! the conditional treatment probability `eta_z(s, x) = P(D = 1 | Z = z, S = s, X = x)`.
//!
//! Models are trained per `(arm, stratum, held-out fold)` cell and predict
//! the held-out fold of that stratum. Cells whose training set is smaller
//! than [`LearnerSpec::pool_below`] are replaced by a model trained on all
//! strata of that arm, with stratum dummies appended to the covariates.

pub mod gbt;
pub mod logistic;

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{compute_stratum_stats, ExperimentSample, ThresholdGrid};
use crate::error::{LdteError, Result};
use crate::seed;

pub use gbt::GbtParams;
pub use logistic::RidgeParams;

/// Row-major feature matrix of one training cell, with lazily computed
/// per-feature sort orders shared by all targets fitted on the cell.
#[derive(Debug)]
pub struct Design {
    x: Vec<f64>,
    dim: usize,
    rows: usize,
    sorted: OnceLock<Vec<Vec<(u32, f64)>>>,
}

impl Design {
    pub fn new(x: Vec<f64>, dim: usize) -> Self {
        let rows = x.len().checked_div(dim).unwrap_or(0);
        Self {
            x,
            dim,
            rows,
            sorted: OnceLock::new(),
        }
    }

    /// A design with `rows` rows and no features.
    pub fn empty(rows: usize) -> Self {
        Self {
            x: Vec::new(),
            dim: 0,
            rows,
            sorted: OnceLock::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.x[i * self.dim + k]
    }

    /// Per feature, `(row, value)` pairs in ascending value order.
    pub(crate) fn sorted(&self) -> &[Vec<(u32, f64)>] {
        self.sorted.get_or_init(|| {
            (0..self.dim)
                .map(|k| {
                    let mut order: Vec<(u32, f64)> =
                        (0..self.rows as u32).map(|i| (i, self.value(i as usize, k))).collect();
                    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                    order
                })
                .collect()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Learner {
    /// Predicts 0 everywhere; reduces the adjusted estimator to the
    /// unadjusted one.
    Zero,
    RidgeLogistic(RidgeParams),
    GradientBoostedTrees(GbtParams),
}

impl Learner {
    pub fn name(&self) -> &'static str {
        match self {
            Learner::Zero => "zero",
            Learner::RidgeLogistic(_) => "ridge_logistic",
            Learner::GradientBoostedTrees(_) => "gradient_boosted_trees",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub learner: Learner,
    /// Predictions are clipped to `[clip, 1 - clip]`.
    pub clip: f64,
    /// Training cells smaller than this are pooled across strata.
    pub pool_below: usize,
}

impl LearnerSpec {
    pub const DEFAULT_CLIP: f64 = 1e-3;
    pub const DEFAULT_POOL_BELOW: usize = 50;

    pub fn new(learner: Learner) -> Self {
        Self {
            learner,
            clip: Self::DEFAULT_CLIP,
            pool_below: Self::DEFAULT_POOL_BELOW,
        }
    }

    pub fn zero() -> Self {
        Self::new(Learner::Zero)
    }

    pub fn gbt(params: GbtParams) -> Self {
        Self::new(Learner::GradientBoostedTrees(params))
    }

    pub fn ridge(params: RidgeParams) -> Self {
        Self::new(Learner::RidgeLogistic(params))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LdteError::InvalidLearner(msg));
        if !(0.0..0.5).contains(&self.clip) {
            return bad(format!("clip {} is not in [0, 0.5)", self.clip));
        }
        match self.learner {
            Learner::Zero => {}
            Learner::RidgeLogistic(p) => {
                if !(p.penalty >= 0.0 && p.penalty.is_finite()) {
                    return bad(format!("penalty {} must be finite and >= 0", p.penalty));
                }
                if p.max_iter == 0 || !(p.tol > 0.0) {
                    return bad("max_iter must be >= 1 and tol > 0".into());
                }
            }
            Learner::GradientBoostedTrees(p) => {
                if p.n_trees == 0 || p.max_depth == 0 || p.min_leaf == 0 {
                    return bad("n_trees, max_depth and min_leaf must be >= 1".into());
                }
                if !(p.learning_rate > 0.0 && p.learning_rate <= 1.0) {
                    return bad(format!("learning rate {} is not in (0, 1]", p.learning_rate));
                }
            }
        }
        Ok(())
    }
}

/// A model fitted on one training cell for one binary target.
#[derive(Debug, Clone, PartialEq)]
pub enum CellModel {
    Constant(f64),
    Logistic(logistic::LogisticModel),
    Boosted(gbt::BoostedTrees),
}

impl CellModel {
    /// Prediction clipped to `[clip, 1 - clip]`.
    pub fn predict(&self, x: &[f64], clip: f64) -> f64 {
        let raw = match self {
            CellModel::Constant(v) => *v,
            CellModel::Logistic(m) => m.predict(x),
            CellModel::Boosted(m) => m.predict(x),
        };
        raw.clamp(clip, 1.0 - clip)
    }
}

/// Fits `learner` to a binary `target` on `design`. The boolean is true when
/// the optimiser failed and the model fell back to the target mean.
pub fn fit_cell(learner: &Learner, design: &Design, target: &[f64]) -> (CellModel, bool) {
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    if target.iter().all(|&t| t == target[0]) {
        return (CellModel::Constant(mean), false);
    }
    match learner {
        Learner::Zero => (CellModel::Constant(0.0), false),
        Learner::RidgeLogistic(p) => match logistic::fit(design, target, p) {
            Some(m) => (CellModel::Logistic(m), false),
            None => (CellModel::Constant(mean), true),
        },
        Learner::GradientBoostedTrees(p) => {
            if design.dim() == 0 {
                (CellModel::Constant(mean), false)
            } else {
                (CellModel::Boosted(gbt::fit(design, target, p)), false)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCell {
    pub arm: u8,
    pub stratum: String,
    pub fold: usize,
    pub size: usize,
    pub pooled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergedFit {
    pub arm: u8,
    /// Stratum label, or `None` for a pooled model.
    pub stratum: Option<String>,
    pub fold: usize,
    /// `None` for the treatment model, `Some(j)` for threshold `j` (0-based).
    pub threshold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub learner: LearnerSpec,
    pub folds: usize,
    pub training_cells: Vec<TrainingCell>,
    pub pooled: bool,
    pub diverged: Vec<DivergedFit>,
}

/// Cross-fitted predictions for every unit, arm and threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    /// `mu[z][j][i]`
    mu: [Vec<Vec<f64>>; 2],
    /// `eta[z][i]`
    eta: [Vec<f64>; 2],
    fold_of: Vec<usize>,
    meta: FitMeta,
}

impl NuisanceFit {
    /// All-zero predictions (no adjustment).
    pub fn zero(n: usize, thresholds: usize) -> Self {
        let mu = vec![vec![0.0; n]; thresholds];
        Self {
            mu: [mu.clone(), mu],
            eta: [vec![0.0; n], vec![0.0; n]],
            fold_of: vec![0; n],
            meta: FitMeta {
                learner: LearnerSpec::zero(),
                folds: 1,
                training_cells: Vec::new(),
                pooled: false,
                diverged: Vec::new(),
            },
        }
    }

    /// Wraps externally supplied predictions (`mu[z][j][i]`, `eta[z][i]`).
    /// Only shapes and finiteness are checked.
    pub fn from_predictions(mu: [Vec<Vec<f64>>; 2], eta: [Vec<f64>; 2]) -> Result<Self> {
        let n = eta[0].len();
        let j = mu[0].len();
        let shapes_ok = eta[1].len() == n
            && mu[1].len() == j
            && mu.iter().all(|arm| arm.iter().all(|col| col.len() == n));
        if !shapes_ok {
            return Err(LdteError::LengthMismatch("nuisance prediction shapes disagree".into()));
        }
        let finite = mu.iter().flatten().flatten().chain(eta.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(LdteError::NonFiniteValue {
                column: "nuisance prediction".into(),
                row: 0,
                value: "non-finite".into(),
            });
        }
        let mut fit = Self::zero(n, j);
        fit.mu = mu;
        fit.eta = eta;
        fit.meta.learner.learner = Learner::Zero;
        Ok(fit)
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    pub fn n_thresholds(&self) -> usize {
        self.mu[0].len()
    }

    /// `mu_hat[z][j]` over units.
    pub fn mu(&self, arm: usize, j: usize) -> &[f64] {
        &self.mu[arm][j]
    }

    pub fn eta(&self, arm: usize) -> &[f64] {
        &self.eta[arm]
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn meta(&self) -> &FitMeta {
        &self.meta
    }

    /// Probability of the interval `(y_{j-1}, y_j]` for both arms, `j` 1-based,
    /// with `mu` at `y_0 = -inf` taken as 0.
    pub fn predict_interval_mu(&self, j: usize) -> Result<[Vec<f64>; 2]> {
        let len = self.n_thresholds();
        if j == 0 || j > len {
            return Err(LdteError::IndexOutOfRange { index: j, len });
        }
        Ok([0, 1].map(|z| {
            let upper = &self.mu[z][j - 1];
            if j == 1 {
                upper.clone()
            } else {
                upper.iter().zip(&self.mu[z][j - 2]).map(|(u, l)| u - l).collect()
            }
        }))
    }
}

/// Folds stratified by `(z, s)`: each cell is shuffled and dealt round-robin.
pub fn fold_assign(sample: &ExperimentSample, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(LdteError::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    let mut cells = vec![[Vec::new(), Vec::new()]; sample.n_strata()];
    for (i, (&z, &s)) in sample.assignment().iter().zip(sample.strata()).enumerate() {
        cells[s][z as usize].push(i);
    }
    let mut fold_of = vec![0usize; sample.len()];
    for (s, arms) in cells.iter_mut().enumerate() {
        for (z, units) in arms.iter_mut().enumerate() {
            if units.len() < folds {
                return Err(LdteError::CellTooSmall {
                    arm: z as u8,
                    stratum: sample.stratum_label(s).to_string(),
                    size: units.len(),
                    folds,
                });
            }
            units.shuffle(&mut seed::rng(seed, &[seed::TAG_FOLDS, z as u64, s as u64]));
            for (k, &i) in units.iter().enumerate() {
                fold_of[i] = k % folds;
            }
        }
    }
    Ok(fold_of)
}

/// One model-fitting job: an arm, a held-out fold, the training rows and the
/// rows to predict.
struct Task {
    arm: u8,
    fold: usize,
    /// `Some(s)` for a per-stratum cell, `None` for a pooled model.
    stratum: Option<usize>,
    train: Vec<usize>,
    predict: Vec<usize>,
}

struct TaskOutput {
    /// `[eta, mu_0, .., mu_{J-1}]` predictions for `task.predict`.
    predictions: Vec<Vec<f64>>,
    diverged: Vec<Option<usize>>,
}

fn features(sample: &ExperimentSample, i: usize, dummies: Option<usize>, out: &mut Vec<f64>) {
    out.extend_from_slice(sample.covariate_row(i));
    if let Some(n_strata) = dummies {
        // reference coding: stratum 0 is the baseline
        for s in 1..n_strata {
            out.push(f64::from(u8::from(sample.strata()[i] == s)));
        }
    }
}

fn run_task(
    sample: &ExperimentSample,
    grid: &ThresholdGrid,
    spec: &LearnerSpec,
    task: &Task,
) -> TaskOutput {
    let dummies = task.stratum.is_none().then_some(sample.n_strata());
    let dim = sample.covariate_dim() + dummies.map_or(0, |s| s - 1);
    let mut x = Vec::with_capacity(task.train.len() * dim);
    for &i in &task.train {
        features(sample, i, dummies, &mut x);
    }
    let design = if dim == 0 {
        Design::empty(task.train.len())
    } else {
        Design::new(x, dim)
    };
    let mut rows = Vec::with_capacity(task.predict.len() * dim);
    for &i in &task.predict {
        features(sample, i, dummies, &mut rows);
    }

    let y = sample.outcome();
    let targets = std::iter::once(None).chain((0..grid.len()).map(Some));
    let mut predictions = Vec::with_capacity(grid.len() + 1);
    let mut diverged = Vec::new();
    for target_index in targets {
        let target: Vec<f64> = match target_index {
            None => task.train.iter().map(|&i| f64::from(sample.treatment()[i])).collect(),
            Some(j) => {
                let cut = grid.values()[j];
                task.train.iter().map(|&i| f64::from(u8::from(y[i] <= cut))).collect()
            }
        };
        let (model, failed) = fit_cell(&spec.learner, &design, &target);
        if failed {
            diverged.push(target_index);
        }
        predictions.push(
            (0..task.predict.len())
                .map(|k| model.predict(&rows[k * dim..(k + 1) * dim], spec.clip))
                .collect(),
        );
    }
    TaskOutput { predictions, diverged }
}

/// Cross-fitted nuisance predictions. For each held-out fold, arm and
/// stratum, one model per threshold (target `1{Y <= y}`) and one for the
/// treatment indicator are trained on the units of that arm and stratum
/// outside the fold, then predict every unit of the stratum inside the fold.
/// Threshold predictions are made monotone per unit by a running maximum.
pub fn fit_cross_fitted(
    sample: &ExperimentSample,
    grid: &ThresholdGrid,
    spec: &LearnerSpec,
    folds: usize,
    seed: u64,
) -> Result<NuisanceFit> {
    spec.validate()?;
    let stats = compute_stratum_stats(sample);
    stats.require_valid(sample.stratum_labels())?;
    if matches!(spec.learner, Learner::Zero) {
        let mut fit = NuisanceFit::zero(sample.len(), grid.len());
        fit.meta.learner = *spec;
        return Ok(fit);
    }
    let fold_of = fold_assign(sample, folds, seed)?;
    fit_with_folds(sample, grid, spec, fold_of, folds)
}

/// As [`fit_cross_fitted`] with a caller-supplied fold partition.
pub fn fit_with_folds(
    sample: &ExperimentSample,
    grid: &ThresholdGrid,
    spec: &LearnerSpec,
    fold_of: Vec<usize>,
    folds: usize,
) -> Result<NuisanceFit> {
    spec.validate()?;
    let n = sample.len();
    let n_strata = sample.n_strata();
    if fold_of.len() != n {
        return Err(LdteError::LengthMismatch(format!("{} fold labels for {n} units", fold_of.len())));
    }

    let mut tasks = Vec::new();
    let mut cells = Vec::new();
    for fold in 0..folds {
        for arm in 0..2u8 {
            let mut small = Vec::new();
            for s in 0..n_strata {
                let train: Vec<usize> = (0..n)
                    .filter(|&i| {
                        sample.assignment()[i] == arm && sample.strata()[i] == s && fold_of[i] != fold
                    })
                    .collect();
                if train.is_empty() {
                    return Err(LdteError::EmptyTrainingCell {
                        arm,
                        stratum: sample.stratum_label(s).to_string(),
                        fold,
                    });
                }
                let pooled = train.len() < spec.pool_below;
                cells.push(TrainingCell {
                    arm,
                    stratum: sample.stratum_label(s).to_string(),
                    fold,
                    size: train.len(),
                    pooled,
                });
                let predict: Vec<usize> =
                    (0..n).filter(|&i| sample.strata()[i] == s && fold_of[i] == fold).collect();
                if pooled {
                    small.push(predict);
                } else {
                    tasks.push(Task {
                        arm,
                        fold,
                        stratum: Some(s),
                        train,
                        predict,
                    });
                }
            }
            if !small.is_empty() {
                let train: Vec<usize> = (0..n)
                    .filter(|&i| sample.assignment()[i] == arm && fold_of[i] != fold)
                    .collect();
                let mut predict: Vec<usize> = small.into_iter().flatten().collect();
                predict.sort_unstable();
                tasks.push(Task {
                    arm,
                    fold,
                    stratum: None,
                    train,
                    predict,
                });
            }
        }
    }

    let outputs: Vec<TaskOutput> = tasks.par_iter().map(|t| run_task(sample, grid, spec, t)).collect();

    let j_count = grid.len();
    let mut mu = [vec![vec![0.0; n]; j_count], vec![vec![0.0; n]; j_count]];
    let mut eta = [vec![0.0; n], vec![0.0; n]];
    let mut diverged = Vec::new();
    for (task, out) in tasks.iter().zip(outputs) {
        let z = task.arm as usize;
        for (k, &i) in task.predict.iter().enumerate() {
            eta[z][i] = out.predictions[0][k];
            for j in 0..j_count {
                mu[z][j][i] = out.predictions[j + 1][k];
            }
        }
        diverged.extend(out.diverged.into_iter().map(|threshold| DivergedFit {
            arm: task.arm,
            stratum: task.stratum.map(|s| sample.stratum_label(s).to_string()),
            fold: task.fold,
            threshold,
        }));
    }
    for arm in &mut mu {
        for i in 0..n {
            let mut running = f64::NEG_INFINITY;
            for col in arm.iter_mut() {
                running = running.max(col[i]);
                col[i] = running;
            }
        }
    }
    if !diverged.is_empty() {
        log::warn!("{} nuisance fits did not converge and fell back to the cell mean", diverged.len());
    }
    let pooled = cells.iter().any(|c| c.pooled);
    Ok(NuisanceFit {
        mu,
        eta,
        fold_of,
        meta: FitMeta {
            learner: *spec,
            folds,
            training_cells: cells,
            pooled,
            diverged,
        },
    })
}
