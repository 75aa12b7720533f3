//! Experiment data model, stratum bookkeeping and CSV ingestion.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LdteError, Result};

/// Observed experiment data `(Y, D, Z, S, X)` for `n` units.
///
/// Strata are stored densely as `0..n_strata`; the original labels are kept
/// in `stratum_labels` so that `stratum_labels[strata[i]]` recovers row `i`'s
/// label.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSample {
    outcome: Vec<f64>,
    treatment: Vec<u8>,
    assignment: Vec<u8>,
    strata: Vec<usize>,
    stratum_labels: Vec<String>,
    covariates: Vec<f64>,
    covariate_dim: usize,
}

impl ExperimentSample {
    /// Builds a sample from raw columns. `stratum` holds arbitrary labels,
    /// `covariates` is one row per unit (all rows the same width).
    pub fn new<L: ToString>(
        outcome: Vec<f64>,
        treatment: Vec<u8>,
        assignment: Vec<u8>,
        stratum: &[L],
        covariates: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let labels: Vec<String> = stratum.iter().map(ToString::to_string).collect();
        let (strata, stratum_labels) = encode_labels(&labels);
        let n = outcome.len();
        let covariate_dim = covariates.first().map_or(0, Vec::len);
        if !covariates.is_empty() && covariates.len() != n {
            return Err(LdteError::LengthMismatch(format!(
                "{} covariate rows for {n} outcomes",
                covariates.len()
            )));
        }
        let mut flat = Vec::with_capacity(n * covariate_dim);
        for (row, values) in covariates.iter().enumerate() {
            if values.len() != covariate_dim {
                return Err(LdteError::LengthMismatch(format!(
                    "covariate row {row} has {} values, expected {covariate_dim}",
                    values.len()
                )));
            }
            flat.extend_from_slice(values);
        }
        Self::from_parts(outcome, treatment, assignment, strata, stratum_labels, flat, covariate_dim)
    }

    /// Builds a sample from already-encoded strata and a row-major covariate
    /// matrix of width `covariate_dim`.
    pub fn from_parts(
        outcome: Vec<f64>,
        treatment: Vec<u8>,
        assignment: Vec<u8>,
        strata: Vec<usize>,
        stratum_labels: Vec<String>,
        covariates: Vec<f64>,
        covariate_dim: usize,
    ) -> Result<Self> {
        let n = outcome.len();
        if n == 0 {
            return Err(LdteError::EmptyDataset);
        }
        for (name, len) in [
            ("treatment", treatment.len()),
            ("assignment", assignment.len()),
            ("stratum", strata.len()),
        ] {
            if len != n {
                return Err(LdteError::LengthMismatch(format!(
                    "{name} has {len} rows, outcome has {n}"
                )));
            }
        }
        if covariates.len() != n * covariate_dim {
            return Err(LdteError::LengthMismatch(format!(
                "covariate matrix has {} entries, expected {n} x {covariate_dim}",
                covariates.len()
            )));
        }
        if let Some(row) = outcome.iter().position(|y| !y.is_finite()) {
            return Err(LdteError::NonFiniteValue {
                column: "outcome".into(),
                row,
                value: outcome[row].to_string(),
            });
        }
        if let Some(k) = covariates.iter().position(|x| !x.is_finite()) {
            return Err(LdteError::NonFiniteValue {
                column: format!("covariate {}", k % covariate_dim),
                row: k / covariate_dim,
                value: covariates[k].to_string(),
            });
        }
        for (name, col) in [("treatment", &treatment), ("assignment", &assignment)] {
            if let Some(row) = col.iter().position(|&v| v > 1) {
                return Err(LdteError::NonBinaryColumn {
                    column: name.into(),
                    row,
                    value: col[row].to_string(),
                });
            }
        }
        let mut seen = vec![false; stratum_labels.len()];
        for &s in &strata {
            if s >= stratum_labels.len() {
                return Err(LdteError::UnknownStratum(s.to_string()));
            }
            seen[s] = true;
        }
        if let Some(s) = seen.iter().position(|&hit| !hit) {
            return Err(LdteError::UnknownStratum(stratum_labels[s].clone()));
        }
        Ok(Self {
            outcome,
            treatment,
            assignment,
            strata,
            stratum_labels,
            covariates,
            covariate_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn assignment(&self) -> &[u8] {
        &self.assignment
    }

    /// Dense stratum index of every unit.
    pub fn strata(&self) -> &[usize] {
        &self.strata
    }

    pub fn n_strata(&self) -> usize {
        self.stratum_labels.len()
    }

    pub fn stratum_labels(&self) -> &[String] {
        &self.stratum_labels
    }

    pub fn stratum_label(&self, s: usize) -> &str {
        &self.stratum_labels[s]
    }

    /// Original label of every row.
    pub fn decoded_strata(&self) -> Vec<&str> {
        self.strata.iter().map(|&s| self.stratum_labels[s].as_str()).collect()
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn covariate_row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.covariate_dim..(i + 1) * self.covariate_dim]
    }

    /// Copy of the sample with the outcome column replaced.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        Self::from_parts(
            outcome,
            self.treatment.clone(),
            self.assignment.clone(),
            self.strata.clone(),
            self.stratum_labels.clone(),
            self.covariates.clone(),
            self.covariate_dim,
        )
    }

    /// Copy of the sample with the assignment column replaced.
    pub fn with_assignment(&self, assignment: Vec<u8>) -> Result<Self> {
        Self::from_parts(
            self.outcome.clone(),
            self.treatment.clone(),
            assignment,
            self.strata.clone(),
            self.stratum_labels.clone(),
            self.covariates.clone(),
            self.covariate_dim,
        )
    }
}

/// Dense re-encoding of stratum labels. Labels are ordered numerically when
/// every label parses as a number, lexicographically otherwise.
pub fn encode_labels(labels: &[String]) -> (Vec<usize>, Vec<String>) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.trim().parse::<f64>().ok()).collect();
    let mut unique: Vec<String> = labels.to_vec();
    match numeric {
        Some(_) => unique.sort_by(|a, b| {
            let (x, y) = (a.trim().parse::<f64>().unwrap(), b.trim().parse::<f64>().unwrap());
            x.total_cmp(&y).then_with(|| a.cmp(b))
        }),
        None => unique.sort(),
    }
    unique.dedup();
    let index: BTreeMap<&str, usize> =
        unique.iter().enumerate().map(|(k, l)| (l.as_str(), k)).collect();
    let codes = labels.iter().map(|l| index[l.as_str()]).collect();
    (codes, unique)
}

/// Per-stratum counts and empirical assignment shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumStats {
    pub n: usize,
    pub n_total: Vec<usize>,
    /// `n_by_arm[s][z]`
    pub n_by_arm: Vec<[usize; 2]>,
    /// `pi_hat[s][z] = n_z(s) / n(s)`
    pub pi_hat: Vec<[f64; 2]>,
    /// `p_hat[s] = n(s) / n`
    pub p_hat: Vec<f64>,
    pub valid: bool,
}

impl StratumStats {
    pub(crate) fn from_columns(
        assignment: impl Iterator<Item = u8>,
        strata: impl Iterator<Item = usize>,
        n_strata: usize,
    ) -> Self {
        let mut n_by_arm = vec![[0usize; 2]; n_strata];
        for (z, s) in assignment.zip(strata) {
            n_by_arm[s][z as usize] += 1;
        }
        Self::from_counts(n_by_arm)
    }

    pub(crate) fn from_counts(n_by_arm: Vec<[usize; 2]>) -> Self {
        let n_total: Vec<usize> = n_by_arm.iter().map(|c| c[0] + c[1]).collect();
        let n: usize = n_total.iter().sum();
        let pi_hat = n_by_arm
            .iter()
            .zip(&n_total)
            .map(|(c, &t)| {
                if t == 0 {
                    [0.0, 0.0]
                } else {
                    [c[0] as f64 / t as f64, c[1] as f64 / t as f64]
                }
            })
            .collect();
        let p_hat = n_total.iter().map(|&t| t as f64 / n as f64).collect();
        let valid = n_by_arm.iter().all(|c| c[0] >= 1 && c[1] >= 1);
        Self {
            n,
            n_total,
            n_by_arm,
            pi_hat,
            p_hat,
            valid,
        }
    }

    pub fn n_strata(&self) -> usize {
        self.n_total.len()
    }

    /// Fails with `InvalidStrata` naming the first empty `(z, s)` cell.
    pub fn require_valid(&self, labels: &[String]) -> Result<()> {
        for (s, counts) in self.n_by_arm.iter().enumerate() {
            for arm in 0..2u8 {
                if counts[arm as usize] == 0 {
                    return Err(LdteError::InvalidStrata {
                        stratum: labels.get(s).cloned().unwrap_or_else(|| s.to_string()),
                        arm,
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn compute_stratum_stats(sample: &ExperimentSample) -> StratumStats {
    StratumStats::from_columns(
        sample.assignment.iter().copied(),
        sample.strata.iter().copied(),
        sample.n_strata(),
    )
}

/// Strictly increasing, finite, nonempty evaluation thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdGrid(Vec<f64>);

impl ThresholdGrid {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(LdteError::InvalidGrid("no thresholds".into()));
        }
        if let Some(y) = thresholds.iter().find(|y| !y.is_finite()) {
            return Err(LdteError::InvalidGrid(format!("non-finite threshold {y}")));
        }
        if let Some(w) = thresholds.windows(2).find(|w| w[0] >= w[1]) {
            return Err(LdteError::InvalidGrid(format!(
                "thresholds not strictly increasing at {} >= {}",
                w[0], w[1]
            )));
        }
        Ok(Self(thresholds))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Applies a strictly increasing map to every threshold.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.0.iter().map(|&y| f(y)).collect())
    }
}

impl TryFrom<Vec<f64>> for ThresholdGrid {
    type Error = LdteError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ThresholdGrid> for Vec<f64> {
    fn from(g: ThresholdGrid) -> Self {
        g.0
    }
}

/// Nearest-rank empirical quantile of an ascending slice: the value at rank
/// `ceil(p * n)` (1-based), with rank clamped to `1..=n`.
pub fn nearest_rank_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Empirical `count`-quantiles of the pooled outcome at levels
/// `k / (count + 1)`, `k = 1..=count`, by nearest rank, duplicates removed.
pub fn default_threshold_grid(sample: &ExperimentSample, count: usize) -> Result<ThresholdGrid> {
    if count == 0 {
        return Err(LdteError::InvalidGrid("quantile count must be at least 1".into()));
    }
    let mut sorted = sample.outcome.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if sorted[0] == sorted[n - 1] {
        return Err(LdteError::DegenerateOutcome);
    }
    // rank = ceil(k * n / (count + 1)) in integer arithmetic
    let mut grid: Vec<f64> = (1..=count)
        .map(|k| {
            let rank = (k * n).div_ceil(count + 1).clamp(1, n);
            sorted[rank - 1]
        })
        .collect();
    grid.dedup();
    ThresholdGrid::new(grid)
}

/// Sorted distinct outcome values, optionally restricted to values `<= cap`.
/// Intended for integer-valued (count) outcomes.
pub fn integer_support_grid(sample: &ExperimentSample, cap: Option<f64>) -> Result<ThresholdGrid> {
    let mut values = sample.outcome.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.len() < 2 {
        return Err(LdteError::DegenerateOutcome);
    }
    if let Some(c) = cap {
        values.retain(|&v| v <= c);
    }
    ThresholdGrid::new(values)
}

/// Column names used to read an [`ExperimentSample`] from CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub outcome: String,
    pub treatment: String,
    pub assignment: String,
    pub stratum: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: u8,
}

fn default_delimiter() -> u8 {
    b','
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| LdteError::MissingColumn(name.to_string()))
}

fn parse_real(raw: &str, column: &str, row: usize) -> Result<f64> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(LdteError::NonFiniteValue {
            column: column.to_string(),
            row,
            value: raw.to_string(),
        }),
    }
}

fn parse_binary(raw: &str, column: &str, row: usize) -> Result<u8> {
    match raw.trim().parse::<f64>() {
        Ok(0.0) => Ok(0),
        Ok(1.0) => Ok(1),
        _ => Err(LdteError::NonBinaryColumn {
            column: column.to_string(),
            row,
            value: raw.to_string(),
        }),
    }
}

pub fn load_sample(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<ExperimentSample> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .from_path(path)?;
    read_sample(&mut reader, schema)
}

pub fn read_sample<R: std::io::Read>(
    reader: &mut csv::Reader<R>,
    schema: &CsvSchema,
) -> Result<ExperimentSample> {
    let headers = reader.headers()?.clone();
    let y_col = column_index(&headers, &schema.outcome)?;
    let d_col = column_index(&headers, &schema.treatment)?;
    let z_col = column_index(&headers, &schema.assignment)?;
    let s_col = column_index(&headers, &schema.stratum)?;
    let x_cols = schema
        .covariates
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let mut outcome = Vec::new();
    let mut treatment = Vec::new();
    let mut assignment = Vec::new();
    let mut labels = Vec::new();
    let mut covariates = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |k: usize| record.get(k).unwrap_or("");
        outcome.push(parse_real(field(y_col), &schema.outcome, row)?);
        treatment.push(parse_binary(field(d_col), &schema.treatment, row)?);
        assignment.push(parse_binary(field(z_col), &schema.assignment, row)?);
        labels.push(field(s_col).trim().to_string());
        for (&k, name) in x_cols.iter().zip(&schema.covariates) {
            covariates.push(parse_real(field(k), name, row)?);
        }
    }
    let (strata, stratum_labels) = encode_labels(&labels);
    ExperimentSample::from_parts(
        outcome,
        treatment,
        assignment,
        strata,
        stratum_labels,
        covariates,
        x_cols.len(),
    )
}
