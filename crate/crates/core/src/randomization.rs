//! Covariate-adaptive assignment schemes.
//!
//! Each stratum is assigned independently, in row order, from its own random
//! stream derived from `(seed, stratum)`. Sequential schemes (biased coins)
//! only look at the running history of their own stratum.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LdteError, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeKind {
    /// Independent Bernoulli(pi_1(s)) draws.
    SimpleRandom,
    /// Permuted blocks of `block_size` holding exactly `block_size * pi_1(s)`
    /// treated units; a trailing partial block is filled by Bernoulli draws.
    StratifiedBlock { block_size: usize },
    /// Efron's biased coin with bias `gamma` in (1/2, 1]. Only defined for
    /// pi_1(s) = 1/2; other targets fall back to simple randomization.
    EfronBiasedCoin { gamma: f64 },
    /// Adaptive biased coin: the next unit is treated with probability
    /// `(1 - strength * imbalance / step) / 2`, clipped to [0, 1], where
    /// `imbalance` is treated minus control so far and `step` the number of
    /// units already assigned. Only defined for pi_1(s) = 1/2.
    WeiAdaptive { strength: f64 },
}

/// Target probability of assignment to treatment, per stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Targets {
    All(f64),
    PerStratum(BTreeMap<usize, f64>),
}

impl Targets {
    pub fn get(&self, stratum: usize) -> Result<f64> {
        match self {
            Targets::All(p) => Ok(*p),
            Targets::PerStratum(map) => map
                .get(&stratum)
                .copied()
                .ok_or_else(|| LdteError::UnknownStratum(stratum.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarScheme {
    pub kind: SchemeKind,
    pub target: Targets,
}

impl CarScheme {
    pub fn new(kind: SchemeKind, target: Targets) -> Result<Self> {
        let scheme = Self { kind, target };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn simple(pi1: f64) -> Self {
        Self {
            kind: SchemeKind::SimpleRandom,
            target: Targets::All(pi1),
        }
    }

    fn validate(&self) -> Result<()> {
        let targets: Vec<f64> = match &self.target {
            Targets::All(p) => vec![*p],
            Targets::PerStratum(map) => map.values().copied().collect(),
        };
        for &p in &targets {
            if !(p > 0.0 && p < 1.0) {
                return Err(LdteError::InvalidScheme(format!("target {p} is not in (0, 1)")));
            }
        }
        match self.kind {
            SchemeKind::SimpleRandom => {}
            SchemeKind::StratifiedBlock { block_size } => {
                if block_size < 2 {
                    return Err(LdteError::InvalidBlockSize(format!(
                        "block size {block_size} is below 2"
                    )));
                }
                for &p in &targets {
                    treated_per_block(block_size, p)?;
                }
            }
            SchemeKind::EfronBiasedCoin { gamma } => {
                if !(gamma > 0.5 && gamma <= 1.0) {
                    return Err(LdteError::InvalidScheme(format!(
                        "biased-coin bias {gamma} is not in (1/2, 1]"
                    )));
                }
            }
            SchemeKind::WeiAdaptive { strength } => {
                if !(strength > 0.0 && strength.is_finite()) {
                    return Err(LdteError::InvalidScheme(format!(
                        "adaptive-coin strength {strength} must be positive"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn treated_per_block(block_size: usize, pi1: f64) -> Result<usize> {
    let k = block_size as f64 * pi1;
    if (k - k.round()).abs() > 1e-9 {
        return Err(LdteError::InvalidBlockSize(format!(
            "block size {block_size} times target {pi1} is not an integer"
        )));
    }
    Ok(k.round() as usize)
}

fn is_half(p: f64) -> bool {
    (p - 0.5).abs() < 1e-12
}

fn assign_stratum<R: Rng>(kind: &SchemeKind, pi1: f64, len: usize, rng: &mut R) -> Result<Vec<u8>> {
    let bernoulli = |rng: &mut R, p: f64| u8::from(rng.random::<f64>() < p);
    let mut out = Vec::with_capacity(len);
    match *kind {
        SchemeKind::SimpleRandom => {
            out.extend((0..len).map(|_| bernoulli(rng, pi1)));
        }
        SchemeKind::StratifiedBlock { block_size } => {
            let treated = treated_per_block(block_size, pi1)?;
            let full = len / block_size;
            let mut block: Vec<u8> = (0..block_size).map(|k| u8::from(k < treated)).collect();
            for _ in 0..full {
                block.shuffle(rng);
                out.extend_from_slice(&block);
            }
            out.extend((full * block_size..len).map(|_| bernoulli(rng, pi1)));
        }
        SchemeKind::EfronBiasedCoin { .. } | SchemeKind::WeiAdaptive { .. } if !is_half(pi1) => {
            log::warn!("biased-coin designs require a target of 1/2; using simple randomization at {pi1}");
            out.extend((0..len).map(|_| bernoulli(rng, pi1)));
        }
        SchemeKind::EfronBiasedCoin { gamma } => {
            let mut imbalance: i64 = 0;
            for _ in 0..len {
                let p = match imbalance.signum() {
                    1 => 1.0 - gamma,
                    -1 => gamma,
                    _ => 0.5,
                };
                let z = bernoulli(rng, p);
                imbalance += if z == 1 { 1 } else { -1 };
                out.push(z);
            }
        }
        SchemeKind::WeiAdaptive { strength } => {
            let mut imbalance: i64 = 0;
            for step in 0..len {
                let p = if step == 0 {
                    0.5
                } else {
                    ((1.0 - strength * imbalance as f64 / step as f64) / 2.0).clamp(0.0, 1.0)
                };
                let z = bernoulli(rng, p);
                imbalance += if z == 1 { 1 } else { -1 };
                out.push(z);
            }
        }
    }
    Ok(out)
}

/// Assigns every unit to treatment (1) or control (0). Deterministic in
/// `(scheme, strata, seed)`.
pub fn assign(scheme: &CarScheme, strata: &[usize], seed: u64) -> Result<Vec<u8>> {
    scheme.validate()?;
    let mut rows: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        rows.entry(s).or_default().push(i);
    }
    let groups: Vec<(usize, Vec<usize>)> = rows.into_iter().collect();
    let assigned = groups
        .par_iter()
        .map(|(s, idx)| {
            let pi1 = scheme.target.get(*s)?;
            let mut rng = seed::rng(seed, &[seed::TAG_ASSIGN, *s as u64]);
            assign_stratum(&scheme.kind, pi1, idx.len(), &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![0u8; strata.len()];
    for ((_, idx), z) in groups.iter().zip(assigned) {
        for (&i, zi) in idx.iter().zip(z) {
            out[i] = zi;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceRow {
    pub stratum: usize,
    pub n: usize,
    pub n_treated: usize,
    pub pi_hat: f64,
    pub target: f64,
    pub deviation: f64,
}

pub fn imbalance_report(assignment: &[u8], strata: &[usize], target: &Targets) -> Result<Vec<ImbalanceRow>> {
    if assignment.len() != strata.len() {
        return Err(LdteError::LengthMismatch(format!(
            "{} assignments for {} strata entries",
            assignment.len(),
            strata.len()
        )));
    }
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&z, &s) in assignment.iter().zip(strata) {
        let c = counts.entry(s).or_default();
        c.0 += 1;
        c.1 += usize::from(z == 1);
    }
    counts
        .into_iter()
        .map(|(stratum, (n, n_treated))| {
            let target = target.get(stratum)?;
            let pi_hat = n_treated as f64 / n as f64;
            Ok(ImbalanceRow {
                stratum,
                n,
                n_treated,
                pi_hat,
                target,
                deviation: pi_hat - target,
            })
        })
        .collect()
}
