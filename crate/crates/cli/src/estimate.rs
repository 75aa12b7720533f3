use std::path::PathBuf;

use ldte::{
    analytic_band, analytic_variance, bootstrap_band, compute_stratum_stats, default_threshold_grid, estimate,
    fit_cross_fitted, integer_support_grid, load_sample, BandMethod, BootstrapOptions, ConfidenceBand, CsvSchema,
    Diagnostics, EffectKind, EstimatorConfig, ExperimentSample, LdteResult, Learner, LearnerSpec, ThresholdGrid,
};
use serde::{Deserialize, Serialize};

use crate::args::{EffectArg, EstimateArgs, Format};
use crate::learner_config::LearnerConfig;
use crate::output::{delimiter_byte, resolve_seed, sidecar, write_json, Meta};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GridSpec {
    Explicit { thresholds: Vec<f64> },
    Quantiles { count: usize },
    IntegerSupport { cap: Option<f64> },
}

/// Everything that determines the numbers in an estimate artifact.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateConfig {
    pub input: PathBuf,
    pub schema: CsvSchema,
    pub learner: LearnerSpec,
    pub folds: usize,
    pub grid: GridSpec,
    pub effect: EffectKind,
    pub bootstrap_draws: Option<usize>,
    pub level: f64,
    pub weak_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub meta: Meta,
    #[serde(flatten)]
    pub result: LdteResult,
    pub method: BandMethod,
    pub level: f64,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    #[serde(rename = "B")]
    pub bootstrap_draws: Option<usize>,
    pub rejected_draws: usize,
}

#[derive(Serialize)]
struct CsvSidecar<'a> {
    meta: &'a Meta,
    effect: EffectKind,
    first_stage: f64,
    diagnostics: &'a Diagnostics,
    method: BandMethod,
    level: f64,
    #[serde(rename = "B")]
    bootstrap_draws: Option<usize>,
    rejected_draws: usize,
}

fn config_from_args(args: &EstimateArgs) -> Result<EstimateConfig, CliError> {
    let learner = LearnerConfig::load(args.learner_config.as_deref())?.spec(args.learner)?;
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(CliError::Usage(format!("--level {} is not in (0, 1)", args.level)));
    }
    if let Some(b) = args.bootstrap {
        if b < 2 {
            return Err(CliError::Usage(format!("--bootstrap needs at least 2 draws, got {b}")));
        }
    }
    if !matches!(learner.learner, Learner::Zero) && args.folds < 2 {
        return Err(CliError::Usage(format!("--folds must be at least 2, got {}", args.folds)));
    }
    if !(args.weak_floor >= 0.0) {
        return Err(CliError::Usage(format!("--weak-floor {} must be non-negative", args.weak_floor)));
    }
    let grid = if let Some(t) = &args.thresholds {
        ThresholdGrid::new(t.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
        GridSpec::Explicit { thresholds: t.clone() }
    } else if args.integer_support {
        GridSpec::IntegerSupport { cap: args.support_cap }
    } else {
        let count = args.quantiles.unwrap_or(9);
        if count == 0 {
            return Err(CliError::Usage("--quantiles must be at least 1".into()));
        }
        GridSpec::Quantiles { count }
    };
    Ok(EstimateConfig {
        input: args.input.clone(),
        schema: CsvSchema {
            outcome: args.outcome_col.clone(),
            treatment: args.treat_col.clone(),
            assignment: args.assign_col.clone(),
            stratum: args.stratum_col.clone(),
            covariates: args.covariate_cols.clone(),
            delimiter: delimiter_byte(args.delimiter)?,
        },
        learner,
        folds: args.folds,
        grid,
        effect: match args.effect {
            EffectArg::Ldte => EffectKind::Ldte,
            EffectArg::Lpte => EffectKind::Lpte,
        },
        bootstrap_draws: args.bootstrap,
        level: args.level,
        weak_floor: args.weak_floor,
    })
}

fn build_grid(sample: &ExperimentSample, spec: &GridSpec) -> ldte::Result<ThresholdGrid> {
    match spec {
        GridSpec::Explicit { thresholds } => ThresholdGrid::new(thresholds.clone()),
        GridSpec::Quantiles { count } => default_threshold_grid(sample, *count),
        GridSpec::IntegerSupport { cap } => integer_support_grid(sample, *cap),
    }
}

/// Runs the estimation described by `config`.
pub fn run_config(config: &EstimateConfig, seed: u64) -> Result<EstimateReport, CliError> {
    let sample = load_sample(&config.input, &config.schema)?;
    let grid = build_grid(&sample, &config.grid)?;
    let stats = compute_stratum_stats(&sample);
    let estimator = EstimatorConfig {
        weak_floor: config.weak_floor,
    };
    let fit = fit_cross_fitted(&sample, &grid, &config.learner, config.folds, seed)?;
    let result = estimate(&sample, &fit, &stats, &grid, config.effect, &estimator)?;
    let band: ConfidenceBand = match config.bootstrap_draws {
        Some(draws) => {
            let opts = BootstrapOptions {
                draws,
                level: config.level,
                seed,
            };
            bootstrap_band(&sample, &fit, &stats, &grid, config.effect, &opts, &estimator)?
        }
        None => {
            let variance = analytic_variance(&sample, &fit, &stats, &grid, &result)?;
            analytic_band(&result, &variance, config.level)?
        }
    };
    Ok(EstimateReport {
        meta: Meta::new("estimate", seed, config)?,
        result,
        method: band.method,
        level: band.level,
        se: band.se,
        ci_lower: band.lower,
        ci_upper: band.upper,
        bootstrap_draws: band.draws,
        rejected_draws: band.rejected_draws,
    })
}

fn write_csv(path: &std::path::Path, report: &EstimateReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "beta", "se", "ci_lower", "ci_upper"])?;
    let r = &report.result;
    for j in 0..r.thresholds.len() {
        w.write_record([
            r.thresholds[j].to_string(),
            r.beta[j].to_string(),
            report.se[j].to_string(),
            report.ci_lower[j].to_string(),
            report.ci_upper[j].to_string(),
        ])?;
    }
    w.flush()?;
    write_json(
        &sidecar(path),
        &CsvSidecar {
            meta: &report.meta,
            effect: r.effect,
            first_stage: r.first_stage,
            diagnostics: &r.diagnostics,
            method: report.method,
            level: report.level,
            bootstrap_draws: report.bootstrap_draws,
            rejected_draws: report.rejected_draws,
        },
    )
}

fn print_summary(report: &EstimateReport) {
    let r = &report.result;
    let d = &r.diagnostics;
    let effect = match r.effect {
        EffectKind::Ldte => "LDTE",
        EffectKind::Lpte => "LPTE",
    };
    println!(
        "{effect}: n = {}, {} strata, learner {}, {} folds, first stage {:.6}",
        d.n, d.n_strata, d.learner, d.folds, r.first_stage
    );
    if d.pooled_strata || d.diverged_fits > 0 {
        println!("pooled strata: {}, diverged fits: {}", d.pooled_strata, d.diverged_fits);
    }
    let method = match report.bootstrap_draws {
        Some(b) => format!("bootstrap ({b} draws, {} redrawn)", report.rejected_draws),
        None => "analytic".to_string(),
    };
    println!("{:.0}% bands, {method}", 100.0 * report.level);
    println!("{:>14} {:>12} {:>12} {:>12} {:>12}", "threshold", "estimate", "se", "lower", "upper");
    for j in 0..r.thresholds.len() {
        println!(
            "{:>14.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            r.thresholds[j], r.beta[j], report.se[j], report.ci_lower[j], report.ci_upper[j]
        );
    }
}

pub fn run(args: &EstimateArgs) -> Result<(), CliError> {
    let config = config_from_args(args)?;
    let seed = resolve_seed(args.seed);
    let report = run_config(&config, seed)?;
    print_summary(&report);
    if let Some(path) = &args.output {
        match args.format {
            Format::Json => write_json(path, &report)?,
            Format::Csv => write_csv(path, &report)?,
        }
    }
    Ok(())
}
