//! Regression-adjusted LDTE / LPTE point estimates.
//!
//! For each arm `z` and unit `i` the augmented terms are
//!
//! ```text
//! Xi^Y_{z,i}(y) = 1{Z_i = z} (1{Y_i <= y} - mu_z(y, S_i, X_i)) / pi_z(S_i) + mu_z(y, S_i, X_i)
//! Xi^D_{z,i}    = 1{Z_i = z} (D_i - eta_z(S_i, X_i)) / pi_z(S_i) + eta_z(S_i, X_i)
//! ```
//!
//! with empirical assignment shares `pi_z(s) = n_z(s) / n(s)`, and
//! `beta(y) = mean(Xi^Y_1 - Xi^Y_0) / mean(Xi^D_1 - Xi^D_0)`.

use serde::{Deserialize, Serialize};

use crate::data::{ExperimentSample, StratumStats, ThresholdGrid};
use crate::error::{LdteError, Result};
use crate::nuisance::{FitMeta, NuisanceFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    /// Cumulative effect at `y`: indicators `1{Y <= y}`.
    Ldte,
    /// Interval effect on `(y_{j-1}, y_j]` with `y_0 = -inf`.
    Lpte,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Minimum `|B|` accepted as an identified first stage.
    pub weak_floor: f64,
}

impl EstimatorConfig {
    pub const DEFAULT_WEAK_FLOOR: f64 = 0.01;
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            weak_floor: Self::DEFAULT_WEAK_FLOOR,
        }
    }
}

/// Outcome indicators and matching nuisance predictions for one effect kind.
pub(crate) struct OutcomeTargets {
    /// `indicator[j][i]`
    pub indicator: Vec<Vec<f64>>,
    /// `mu[z][j][i]`
    pub mu: [Vec<Vec<f64>>; 2],
}

impl OutcomeTargets {
    pub fn build(sample: &ExperimentSample, fit: &NuisanceFit, grid: &ThresholdGrid, kind: EffectKind) -> Result<Self> {
        check_shapes(sample, fit, grid)?;
        let y = sample.outcome();
        let cuts = grid.values();
        let indicator = (0..cuts.len())
            .map(|j| {
                let upper = cuts[j];
                y.iter()
                    .map(|&v| {
                        let below = v <= upper;
                        let inside = match kind {
                            EffectKind::Ldte => below,
                            EffectKind::Lpte => below && (j == 0 || v > cuts[j - 1]),
                        };
                        f64::from(u8::from(inside))
                    })
                    .collect()
            })
            .collect();
        let mu = match kind {
            EffectKind::Ldte => [0, 1].map(|z| (0..cuts.len()).map(|j| fit.mu(z, j).to_vec()).collect()),
            EffectKind::Lpte => {
                let mut out = [Vec::new(), Vec::new()];
                for j in 1..=cuts.len() {
                    let [m0, m1] = fit.predict_interval_mu(j)?;
                    out[0].push(m0);
                    out[1].push(m1);
                }
                out
            }
        };
        Ok(Self { indicator, mu })
    }
}

fn check_shapes(sample: &ExperimentSample, fit: &NuisanceFit, grid: &ThresholdGrid) -> Result<()> {
    if fit.len() != sample.len() || fit.n_thresholds() != grid.len() {
        return Err(LdteError::LengthMismatch(format!(
            "nuisance fit covers {} units x {} thresholds; data has {} units x {} thresholds",
            fit.len(),
            fit.n_thresholds(),
            sample.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// Augmented terms for every arm, threshold and unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiTerms {
    /// `xi_y[z][j][i]`
    pub xi_y: [Vec<Vec<f64>>; 2],
    /// `xi_d[z][i]`
    pub xi_d: [Vec<f64>; 2],
}

#[inline]
pub(crate) fn augmented(assigned: bool, observed: f64, predicted: f64, pi: f64) -> f64 {
    if assigned {
        (observed - predicted) / pi + predicted
    } else {
        predicted
    }
}

fn xi_from_targets(sample: &ExperimentSample, fit: &NuisanceFit, stats: &StratumStats, targets: &OutcomeTargets) -> XiTerms {
    let z = sample.assignment();
    let s = sample.strata();
    let d = sample.treatment();
    let xi_y = [0usize, 1].map(|arm| {
        targets
            .indicator
            .iter()
            .zip(&targets.mu[arm])
            .map(|(ind, mu)| {
                (0..sample.len())
                    .map(|i| augmented(z[i] as usize == arm, ind[i], mu[i], stats.pi_hat[s[i]][arm]))
                    .collect()
            })
            .collect()
    });
    let xi_d = [0usize, 1].map(|arm| {
        let eta = fit.eta(arm);
        (0..sample.len())
            .map(|i| augmented(z[i] as usize == arm, f64::from(d[i]), eta[i], stats.pi_hat[s[i]][arm]))
            .collect()
    });
    XiTerms { xi_y, xi_d }
}

pub fn compute_xi_terms(
    sample: &ExperimentSample,
    fit: &NuisanceFit,
    stats: &StratumStats,
    grid: &ThresholdGrid,
) -> Result<XiTerms> {
    stats.require_valid(sample.stratum_labels())?;
    let targets = OutcomeTargets::build(sample, fit, grid, EffectKind::Ldte)?;
    Ok(xi_from_targets(sample, fit, stats, &targets))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub learner: String,
    pub folds: usize,
    pub pooled_strata: bool,
    pub diverged_fits: usize,
    /// Assignment shares used in the augmented terms.
    pub assignment_probability: String,
    pub n: usize,
    pub n_strata: usize,
}

impl Diagnostics {
    fn new(meta: &FitMeta, sample: &ExperimentSample) -> Self {
        Self {
            learner: meta.learner.learner.name().to_string(),
            folds: meta.folds,
            pooled_strata: meta.pooled,
            diverged_fits: meta.diverged.len(),
            assignment_probability: "empirical".into(),
            n: sample.len(),
            n_strata: sample.n_strata(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdteResult {
    pub effect: EffectKind,
    pub thresholds: Vec<f64>,
    pub beta: Vec<f64>,
    pub first_stage: f64,
    pub numerator: Vec<f64>,
    pub diagnostics: Diagnostics,
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

pub(crate) fn first_stage(xi_d: &[Vec<f64>; 2]) -> f64 {
    let n = xi_d[0].len();
    mean(xi_d[1].iter().zip(&xi_d[0]).map(|(a, b)| a - b), n)
}

pub(crate) fn check_first_stage(b: f64, config: &EstimatorConfig) -> Result<()> {
    if !(b.abs() >= config.weak_floor) {
        return Err(LdteError::WeakFirstStage {
            first_stage: b,
            floor: config.weak_floor,
        });
    }
    Ok(())
}

pub fn estimate(
    sample: &ExperimentSample,
    fit: &NuisanceFit,
    stats: &StratumStats,
    grid: &ThresholdGrid,
    kind: EffectKind,
    config: &EstimatorConfig,
) -> Result<LdteResult> {
    stats.require_valid(sample.stratum_labels())?;
    let targets = OutcomeTargets::build(sample, fit, grid, kind)?;
    let xi = xi_from_targets(sample, fit, stats, &targets);
    let n = sample.len();
    let b = first_stage(&xi.xi_d);
    check_first_stage(b, config)?;
    let numerator: Vec<f64> = xi.xi_y[1]
        .iter()
        .zip(&xi.xi_y[0])
        .map(|(one, zero)| mean(one.iter().zip(zero).map(|(a, b)| a - b), n))
        .collect();
    Ok(LdteResult {
        effect: kind,
        thresholds: grid.values().to_vec(),
        beta: numerator.iter().map(|t| t / b).collect(),
        first_stage: b,
        numerator,
        diagnostics: Diagnostics::new(fit.meta(), sample),
    })
}

/// Adjusted distributional effect at every threshold.
pub fn estimate_ldte(
    sample: &ExperimentSample,
    fit: &NuisanceFit,
    stats: &StratumStats,
    grid: &ThresholdGrid,
    config: &EstimatorConfig,
) -> Result<LdteResult> {
    estimate(sample, fit, stats, grid, EffectKind::Ldte, config)
}

/// Adjusted interval (probability-mass) effect on `(y_{j-1}, y_j]`.
pub fn estimate_lpte(
    sample: &ExperimentSample,
    fit: &NuisanceFit,
    stats: &StratumStats,
    grid: &ThresholdGrid,
    config: &EstimatorConfig,
) -> Result<LdteResult> {
    estimate(sample, fit, stats, grid, EffectKind::Lpte, config)
}

/// Unadjusted estimator computed directly from within-cell means:
/// stratum-weighted arm differences of `P(Y <= y)` over stratum-weighted arm
/// differences of `P(D = 1)`.
pub fn estimate_unadjusted(
    sample: &ExperimentSample,
    stats: &StratumStats,
    grid: &ThresholdGrid,
    config: &EstimatorConfig,
) -> Result<LdteResult> {
    stats.require_valid(sample.stratum_labels())?;
    let n_strata = sample.n_strata();
    let cuts = grid.values();
    // sums[s][z] over (D, 1{Y <= y_1}, .., 1{Y <= y_J})
    let mut sums = vec![[vec![0.0; cuts.len() + 1], vec![0.0; cuts.len() + 1]]; n_strata];
    for i in 0..sample.len() {
        let cell = &mut sums[sample.strata()[i]][sample.assignment()[i] as usize];
        cell[0] += f64::from(sample.treatment()[i]);
        let y = sample.outcome()[i];
        for (j, &c) in cuts.iter().enumerate() {
            if y <= c {
                cell[j + 1] += 1.0;
            }
        }
    }
    let contrast = |k: usize| -> f64 {
        (0..n_strata)
            .map(|s| {
                let [n0, n1] = stats.n_by_arm[s];
                stats.p_hat[s] * (sums[s][1][k] / n1 as f64 - sums[s][0][k] / n0 as f64)
            })
            .sum()
    };
    let b = contrast(0);
    check_first_stage(b, config)?;
    let numerator: Vec<f64> = (1..=cuts.len()).map(contrast).collect();
    Ok(LdteResult {
        effect: EffectKind::Ldte,
        thresholds: cuts.to_vec(),
        beta: numerator.iter().map(|t| t / b).collect(),
        first_stage: b,
        numerator,
        diagnostics: Diagnostics::new(NuisanceFit::zero(0, 0).meta(), sample),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::compute_stratum_stats;

    fn sample(y: Vec<f64>, d: Vec<u8>, z: Vec<u8>, s: Vec<usize>) -> ExperimentSample {
        ExperimentSample::new(y, d, z, &s, vec![]).unwrap()
    }

    #[test]
    fn zero_learner_xi_single_stratum() {
        let s = sample(vec![1.0, 2.0, 3.0, 4.0], vec![1, 0, 1, 0], vec![1, 1, 0, 0], vec![0; 4]);
        let grid = ThresholdGrid::new(vec![2.5]).unwrap();
        let stats = compute_stratum_stats(&s);
        let xi = compute_xi_terms(&s, &NuisanceFit::zero(4, 1), &stats, &grid).unwrap();
        let ind = [1.0, 1.0, 0.0, 0.0];
        for i in 0..4 {
            assert_eq!(xi.xi_y[1][0][i], 2.0 * f64::from(s.assignment()[i]) * ind[i]);
        }
    }

    #[test]
    fn perfect_compliance_is_the_dte() {
        let y = vec![0.5, 1.5, 2.5, 3.5, 0.7, 1.1, 3.0];
        let z = vec![1, 1, 1, 1, 0, 0, 0];
        let s = sample(y.clone(), z.clone(), z, vec![0; 7]);
        let stats = compute_stratum_stats(&s);
        let grid = ThresholdGrid::new(vec![1.0, 2.0, 3.0]).unwrap();
        let r = estimate_ldte(&s, &NuisanceFit::zero(7, 3), &stats, &grid, &Default::default()).unwrap();
        assert_eq!(r.first_stage, 1.0);
        let ecdf = |v: &[f64], t: f64| v.iter().filter(|&&x| x <= t).count() as f64 / v.len() as f64;
        for (j, &t) in grid.values().iter().enumerate() {
            let dte = ecdf(&y[..4], t) - ecdf(&y[4..], t);
            assert!((r.beta[j] - dte).abs() < 1e-15);
        }
    }

    #[test]
    fn beta_vanishes_above_the_sample_maximum() {
        let s = sample(
            vec![0.2, 1.0, 3.0, 2.0, 4.0, 0.1, 1.5],
            vec![1, 1, 0, 0, 1, 0, 1],
            vec![1, 1, 0, 0, 1, 0, 0],
            vec![0, 0, 0, 1, 1, 1, 1],
        );
        let stats = compute_stratum_stats(&s);
        let grid = ThresholdGrid::new(vec![4.0, 10.0]).unwrap();
        let r = estimate_ldte(&s, &NuisanceFit::zero(7, 2), &stats, &grid, &Default::default()).unwrap();
        assert!(r.beta[0].abs() < 1e-15 && r.beta[1].abs() < 1e-15);
    }

    #[test]
    fn weak_first_stage_is_rejected() {
        // D identical across arms within each stratum
        let s = sample(vec![1.0, 2.0, 3.0, 4.0], vec![1, 0, 1, 0], vec![1, 1, 0, 0], vec![0; 4]);
        let stats = compute_stratum_stats(&s);
        let grid = ThresholdGrid::new(vec![2.0]).unwrap();
        assert!(matches!(
            estimate_unadjusted(&s, &stats, &grid, &Default::default()),
            Err(LdteError::WeakFirstStage { .. })
        ));
        assert!(matches!(
            estimate_ldte(&s, &NuisanceFit::zero(4, 1), &stats, &grid, &Default::default()),
            Err(LdteError::WeakFirstStage { .. })
        ));
    }

    #[test]
    fn empty_arm_aborts() {
        let s = sample(vec![1.0, 2.0, 3.0], vec![1, 0, 1], vec![1, 0, 1], vec![0, 0, 1]);
        let stats = compute_stratum_stats(&s);
        let grid = ThresholdGrid::new(vec![2.0]).unwrap();
        assert!(matches!(
            estimate_unadjusted(&s, &stats, &grid, &Default::default()),
            Err(LdteError::InvalidStrata { .. })
        ));
        assert!(matches!(
            compute_xi_terms(&s, &NuisanceFit::zero(3, 1), &stats, &grid),
            Err(LdteError::InvalidStrata { .. })
        ));
    }

    #[test]
    fn oregon_first_stage() {
        // pooled compliance table: 2271 of 8515 offered enrolled, 910 of 8506 not offered
        let n1 = 8515;
        let n0 = 8506;
        let mut z = vec![1u8; n1];
        z.extend(vec![0u8; n0]);
        let mut d = vec![0u8; n1 + n0];
        d[..2271].fill(1);
        d[n1..n1 + 910].fill(1);
        let y: Vec<f64> = (0..n1 + n0).map(|i| (i % 4) as f64).collect();
        let s = sample(y, d, z, vec![0; n1 + n0]);
        let stats = compute_stratum_stats(&s);
        let grid = ThresholdGrid::new(vec![0.0]).unwrap();
        let r = estimate_unadjusted(&s, &stats, &grid, &Default::default()).unwrap();
        let expect = 2271.0 / 8515.0 - 910.0 / 8506.0;
        assert!((r.first_stage - expect).abs() < 1e-15);
        assert!((r.first_stage - 0.15975).abs() < 5e-5);
    }

    #[test]
    fn single_threshold_lpte_equals_ldte() {
        let s = sample(
            vec![0.2, 1.0, 3.0, 2.0, 4.0, 0.1, 1.5, 2.2],
            vec![1, 1, 0, 0, 1, 0, 1, 1],
            vec![1, 1, 0, 0, 1, 0, 0, 1],
            vec![0, 0, 0, 1, 1, 1, 1, 0],
        );
        let stats = compute_stratum_stats(&s);
        let grid = ThresholdGrid::new(vec![1.2]).unwrap();
        let mu = [vec![vec![0.3; 8]], vec![vec![0.6; 8]]];
        let fit = NuisanceFit::from_predictions(mu, [vec![0.2; 8], vec![0.7; 8]]).unwrap();
        let a = estimate_ldte(&s, &fit, &stats, &grid, &Default::default()).unwrap();
        let b = estimate_lpte(&s, &fit, &stats, &grid, &Default::default()).unwrap();
        assert_eq!(a.beta, b.beta);
        assert_eq!(a.first_stage, b.first_stage);
    }
}
