use ldte::{run_monte_carlo, DgpConfig, McConfig, McEstimator, McReport};
use serde::{Deserialize, Serialize};

use crate::args::{EstimatorArg, LearnerKind, SimulateArgs};
use crate::learner_config::LearnerConfig;
use crate::output::{resolve_seed, sidecar, write_json, Meta};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub meta: Meta,
    #[serde(flatten)]
    pub report: McReport,
}

fn config_from_args(args: &SimulateArgs, seed: u64) -> Result<McConfig, CliError> {
    let dgp = match &args.dgp_config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str::<DgpConfig>(&text)
                .map_err(|e| CliError::Usage(format!("dgp config {}: {e}", path.display())))?
        }
        None => DgpConfig::default(),
    };
    dgp.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if args.n == 0 || args.reps == 0 {
        return Err(CliError::Usage("--n and --reps must be positive".into()));
    }
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(CliError::Usage(format!("--level {} is not in (0, 1)", args.level)));
    }
    if args.levels.is_empty() || args.levels.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(CliError::Usage("--levels must lie in (0, 1)".into()));
    }
    let learner = LearnerConfig::load(args.learner_config.as_deref())?.spec(LearnerKind::Gbt)?;
    let mut estimators: Vec<McEstimator> = Vec::new();
    for e in &args.estimators {
        let est = match e {
            EstimatorArg::Unadjusted => McEstimator::Unadjusted,
            EstimatorArg::Linear => McEstimator::LinearAdjusted,
            EstimatorArg::Ml => McEstimator::MlAdjusted { learner },
        };
        if !estimators.contains(&est) {
            estimators.push(est);
        }
    }
    Ok(McConfig {
        dgp,
        n: args.n,
        reps: args.reps,
        levels: args.levels.clone(),
        estimators,
        seed,
        n_ref: args.n_ref,
        folds: args.folds,
        level: args.level,
    })
}

fn write_csv(path: &std::path::Path, report: &McReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["estimator", "quantile", "rmse", "ci_length", "coverage"])?;
    for est in &report.estimators {
        for (j, level) in report.levels.iter().enumerate() {
            w.write_record([
                est.name.clone(),
                level.to_string(),
                est.rmse[j].to_string(),
                est.ci_length[j].to_string(),
                est.coverage[j].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn print_summary(report: &McReport) {
    println!("n = {}, {} replications, {} thresholds", report.n, report.reps, report.thresholds.len());
    println!(
        "{:<12} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "estimator", "quantile", "threshold", "truth", "rmse", "ci_length", "coverage"
    );
    for est in &report.estimators {
        for j in 0..report.thresholds.len() {
            println!(
                "{:<12} {:>8.2} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.3}",
                est.name,
                report.levels[j],
                report.thresholds[j],
                report.truth[j],
                est.rmse[j],
                est.ci_length[j],
                est.coverage[j]
            );
        }
        if est.failed > 0 {
            println!("{:<12} {} replications failed and were excluded", est.name, est.failed);
        }
    }
}

pub fn run(args: &SimulateArgs) -> Result<(), CliError> {
    let seed = resolve_seed(args.seed);
    let config = config_from_args(args, seed)?;
    let report = run_monte_carlo(&config)?;
    print_summary(&report);
    let out = SimulateReport {
        meta: Meta::new("simulate", seed, &config)?,
        report,
    };
    if let Some(path) = &args.output {
        write_json(path, &out)?;
    }
    if let Some(path) = &args.csv {
        write_csv(path, &out.report)?;
        if args.output.is_none() {
            write_json(&sidecar(path), &out.meta)?;
        }
    }
    Ok(())
}
