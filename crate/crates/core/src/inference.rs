//! Standard errors and pointwise confidence bands: the plug-in variance of
//! the influence function, and the empirical bootstrap that keeps the
//! original-sample nuisance predictions fixed.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ExperimentSample, StratumStats, ThresholdGrid};
use crate::error::{LdteError, Result};
use crate::estimator::{check_first_stage, estimate, EffectKind, EstimatorConfig, LdteResult, OutcomeTargets};
use crate::normal::two_sided_critical;
use crate::nuisance::NuisanceFit;
use crate::seed;

/// Sample averages making up the variance numerator, per threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    /// `n^-1 sum Z_i phi_1(i)^2`
    pub treated: Vec<f64>,
    /// `n^-1 sum (1 - Z_i) phi_0(i)^2`
    pub control: Vec<f64>,
    /// `n^-1 sum xi_i^2`
    pub strata: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub omega_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub components: VarianceComponents,
}

/// Plug-in asymptotic variance `Omega(y)` and `se = sqrt(Omega / n)`.
///
/// Per unit `i` in stratum `s`, with `m_z = mu_z(y, s, X_i)`, `e_z = eta_z(s, X_i)`
/// and `I = 1{Y_i <= y}` (interval indicator for the LPTE):
///
/// ```text
/// phi~_1 = (1 - 1/pi_1) m_1 - m_0 + I/pi_1 - beta ((1 - 1/pi_1) e_1 - e_0 + D/pi_1)
/// phi~_0 = (1/pi_0 - 1) m_0 + m_1 - I/pi_0 - beta ((1/pi_0 - 1) e_0 + e_1 - D/pi_0)
/// ```
///
/// `phi_z` demeans `phi~_z` within the `(z, s)` cell, `xi(s)` is the arm
/// difference of the cell means of `I - beta D`, and
/// `Omega = mean(Z phi_1^2 + (1 - Z) phi_0^2 + xi^2) / B^2`.
pub fn analytic_variance(
    sample: &ExperimentSample,
    fit: &NuisanceFit,
    stats: &StratumStats,
    grid: &ThresholdGrid,
    result: &LdteResult,
) -> Result<VarianceEstimate> {
    stats.require_valid(sample.stratum_labels())?;
    if result.beta.len() != grid.len() {
        return Err(LdteError::LengthMismatch("result and grid differ in length".into()));
    }
    let targets = OutcomeTargets::build(sample, fit, grid, result.effect)?;
    let n = sample.len();
    let n_strata = sample.n_strata();
    let z = sample.assignment();
    let s = sample.strata();
    let d = sample.treatment();
    let (e0, e1) = (fit.eta(0), fit.eta(1));
    let b2 = result.first_stage * result.first_stage;

    let mut omega_hat = Vec::with_capacity(grid.len());
    let mut components = VarianceComponents {
        treated: Vec::new(),
        control: Vec::new(),
        strata: Vec::new(),
    };
    let mut phi = vec![0.0; n];
    for (j, &beta) in result.beta.iter().enumerate() {
        let ind = &targets.indicator[j];
        let (m0, m1) = (&targets.mu[0][j], &targets.mu[1][j]);
        // cell sums of phi~ (own arm) and of I - beta D
        let mut phi_sum = vec![[0.0f64; 2]; n_strata];
        let mut resid_sum = vec![[0.0f64; 2]; n_strata];
        for i in 0..n {
            let [p0, p1] = stats.pi_hat[s[i]];
            let di = f64::from(d[i]);
            phi[i] = if z[i] == 1 {
                (1.0 - 1.0 / p1) * m1[i] - m0[i] + ind[i] / p1
                    - beta * ((1.0 - 1.0 / p1) * e1[i] - e0[i] + di / p1)
            } else {
                (1.0 / p0 - 1.0) * m0[i] + m1[i] - ind[i] / p0
                    - beta * ((1.0 / p0 - 1.0) * e0[i] + e1[i] - di / p0)
            };
            let arm = z[i] as usize;
            phi_sum[s[i]][arm] += phi[i];
            resid_sum[s[i]][arm] += ind[i] - beta * di;
        }
        let cell_mean = |sums: &[[f64; 2]], st: usize, arm: usize| sums[st][arm] / stats.n_by_arm[st][arm] as f64;
        let xi: Vec<f64> = (0..n_strata)
            .map(|st| cell_mean(&resid_sum, st, 1) - cell_mean(&resid_sum, st, 0))
            .collect();
        let (mut treated, mut control, mut strata) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let arm = z[i] as usize;
            let centred = phi[i] - cell_mean(&phi_sum, s[i], arm);
            if arm == 1 {
                treated += centred * centred;
            } else {
                control += centred * centred;
            }
            strata += xi[s[i]] * xi[s[i]];
        }
        let (treated, control, strata) = (treated / n as f64, control / n as f64, strata / n as f64);
        omega_hat.push((treated + control + strata) / b2);
        components.treated.push(treated);
        components.control.push(control);
        components.strata.push(strata);
    }
    let se = omega_hat.iter().map(|o| (o / n as f64).sqrt()).collect();
    Ok(VarianceEstimate {
        omega_hat,
        se,
        components,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandMethod {
    Analytic,
    Bootstrap,
}

/// Pointwise normal band `estimate +- Phi^{-1}(1 - alpha/2) * se`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub method: BandMethod,
    pub level: f64,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Bootstrap draws, when applicable.
    pub draws: Option<usize>,
    pub rejected_draws: usize,
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(LdteError::InvalidLevel(level));
    }
    Ok(())
}

fn normal_band(method: BandMethod, level: f64, estimate: &[f64], se: Vec<f64>) -> ConfidenceBand {
    let c = two_sided_critical(level);
    ConfidenceBand {
        method,
        level,
        estimate: estimate.to_vec(),
        lower: estimate.iter().zip(&se).map(|(b, s)| b - c * s).collect(),
        upper: estimate.iter().zip(&se).map(|(b, s)| b + c * s).collect(),
        se,
        draws: None,
        rejected_draws: 0,
    }
}

pub fn analytic_band(result: &LdteResult, variance: &VarianceEstimate, level: f64) -> Result<ConfidenceBand> {
    check_level(level)?;
    Ok(normal_band(BandMethod::Analytic, level, &result.beta, variance.se.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub draws: usize,
    pub level: f64,
    pub seed: u64,
}

/// Bootstrap estimates, one row per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapReplicates {
    pub beta: Vec<Vec<f64>>,
    pub rejected: usize,
}

/// Unit-level ingredients reused by every draw.
struct DrawInputs<'a> {
    sample: &'a ExperimentSample,
    /// `mu_1 - mu_0` per threshold and unit
    mu_diff: Vec<Vec<f64>>,
    /// `I - mu_{Z_i}` per threshold and unit
    resid: Vec<Vec<f64>>,
    eta_diff: Vec<f64>,
    eta_resid: Vec<f64>,
}

impl<'a> DrawInputs<'a> {
    fn new(sample: &'a ExperimentSample, fit: &NuisanceFit, targets: &OutcomeTargets) -> Self {
        let z = sample.assignment();
        let n = sample.len();
        let mu_diff = targets.mu[1]
            .iter()
            .zip(&targets.mu[0])
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let resid = targets
            .indicator
            .iter()
            .enumerate()
            .map(|(j, ind)| (0..n).map(|i| ind[i] - targets.mu[z[i] as usize][j][i]).collect())
            .collect();
        let eta_diff = fit.eta(1).iter().zip(fit.eta(0)).map(|(a, b)| a - b).collect();
        let eta_resid = (0..n)
            .map(|i| f64::from(sample.treatment()[i]) - fit.eta(z[i] as usize)[i])
            .collect();
        Self {
            sample,
            mu_diff,
            resid,
            eta_diff,
            eta_resid,
        }
    }

    /// Estimate on a resample described by unit multiplicities; `None` when
    /// a `(z, s)` cell is empty or the first stage is below the floor.
    fn estimate(&self, counts: &[u32], config: &EstimatorConfig) -> Option<Vec<f64>> {
        let z = self.sample.assignment();
        let s = self.sample.strata();
        let mut cell = vec![[0usize; 2]; self.sample.n_strata()];
        for (i, &c) in counts.iter().enumerate() {
            cell[s[i]][z[i] as usize] += c as usize;
        }
        if cell.iter().any(|c| c[0] == 0 || c[1] == 0) {
            return None;
        }
        let stats = StratumStats::from_counts(cell);
        let n = counts.len() as f64;
        // sign(Z) / pi_Z(S) for each unit under the resample's assignment shares
        let weight: Vec<f64> = (0..counts.len())
            .map(|i| {
                let arm = z[i] as usize;
                let w = 1.0 / stats.pi_hat[s[i]][arm];
                if arm == 1 {
                    w
                } else {
                    -w
                }
            })
            .collect();
        let contrast = |diff: &[f64], resid: &[f64]| -> f64 {
            let mut total = 0.0;
            for (i, &c) in counts.iter().enumerate() {
                if c != 0 {
                    total += f64::from(c) * (diff[i] + weight[i] * resid[i]);
                }
            }
            total / n
        };
        let b = contrast(&self.eta_diff, &self.eta_resid);
        check_first_stage(b, config).ok()?;
        Some(
            self.mu_diff
                .iter()
                .zip(&self.resid)
                .map(|(diff, resid)| contrast(diff, resid) / b)
                .collect(),
        )
    }
}

/// Bootstrap estimates for the given per-draw seeds. Each draw resamples `n`
/// rows uniformly with replacement; a draw with an empty `(z, s)` cell is
/// rejected and redrawn from the same stream.
pub fn bootstrap_replicates(
    sample: &ExperimentSample,
    fit: &NuisanceFit,
    grid: &ThresholdGrid,
    kind: EffectKind,
    draw_seeds: &[u64],
    config: &EstimatorConfig,
) -> Result<BootstrapReplicates> {
    let targets = OutcomeTargets::build(sample, fit, grid, kind)?;
    let inputs = DrawInputs::new(sample, fit, &targets);
    let n = sample.len();
    let budget = draw_seeds.len() / 10;
    let per_draw: Vec<(Option<Vec<f64>>, usize)> = draw_seeds
        .par_iter()
        .map(|&draw_seed| {
            let mut rng = seed::rng(draw_seed, &[]);
            let mut rejected = 0;
            let mut counts = vec![0u32; n];
            loop {
                counts.fill(0);
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
                if let Some(beta) = inputs.estimate(&counts, config) {
                    return (Some(beta), rejected);
                }
                rejected += 1;
                if rejected > budget {
                    return (None, rejected);
                }
            }
        })
        .collect();
    let rejected: usize = per_draw.iter().map(|(_, r)| r).sum();
    if rejected > budget || per_draw.iter().any(|(b, _)| b.is_none()) {
        return Err(LdteError::DegenerateBootstrapDraw {
            rejected,
            draws: draw_seeds.len(),
        });
    }
    Ok(BootstrapReplicates {
        beta: per_draw.into_iter().map(|(b, _)| b.unwrap()).collect(),
        rejected,
    })
}

fn std_dev(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let count = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / count;
    (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1.0)).sqrt()
}

/// Bootstrap band centred on the original-sample estimate, with the standard
/// deviation of the draws as standard error.
pub fn bootstrap_band(
    sample: &ExperimentSample,
    fit: &NuisanceFit,
    stats: &StratumStats,
    grid: &ThresholdGrid,
    kind: EffectKind,
    options: &BootstrapOptions,
    config: &EstimatorConfig,
) -> Result<ConfidenceBand> {
    check_level(options.level)?;
    if options.draws < 2 {
        return Err(LdteError::InvalidConfig(format!(
            "bootstrap needs at least 2 draws, got {}",
            options.draws
        )));
    }
    let original = estimate(sample, fit, stats, grid, kind, config)?;
    let seeds: Vec<u64> = (0..options.draws as u64)
        .map(|b| seed::derive(options.seed, &[seed::TAG_BOOTSTRAP, b]))
        .collect();
    let reps = bootstrap_replicates(sample, fit, grid, kind, &seeds, config)?;
    let se = (0..grid.len())
        .map(|j| std_dev(reps.beta.iter().map(move |draw| draw[j])))
        .collect();
    let mut band = normal_band(BandMethod::Bootstrap, options.level, &original.beta, se);
    band.draws = Some(options.draws);
    band.rejected_draws = reps.rejected;
    Ok(band)
}
