use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ldte", version, about = "Local distributional treatment effects for randomized experiments")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate LDTE/LPTE with confidence bands on a CSV dataset.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo study on the synthetic design.
    Simulate(SimulateArgs),
    /// Assign treatment within strata of a CSV file.
    Randomize(RandomizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LearnerKind {
    Zero,
    Ridge,
    Gbt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EffectArg {
    Ldte,
    Lpte,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("grid").args(["thresholds", "quantiles", "integer_support"])))]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub outcome_col: String,
    #[arg(long)]
    pub treat_col: String,
    #[arg(long)]
    pub assign_col: String,
    #[arg(long)]
    pub stratum_col: String,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub covariate_cols: Vec<String>,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,

    #[arg(long, value_enum, default_value_t = LearnerKind::Gbt)]
    pub learner: LearnerKind,
    /// TOML file with learner hyper-parameters (see README).
    #[arg(long)]
    pub learner_config: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub folds: usize,

    /// Explicit comma-separated thresholds.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Number of equally spaced quantiles of the observed outcome (default 9).
    #[arg(long)]
    pub quantiles: Option<usize>,
    /// Every integer between the smallest outcome and the cap.
    #[arg(long)]
    pub integer_support: bool,
    #[arg(long, requires = "integer_support")]
    pub support_cap: Option<f64>,

    #[arg(long, value_enum, default_value_t = EffectArg::Ldte)]
    pub effect: EffectArg,
    /// Bootstrap draws; analytic standard errors when omitted.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Drawn from system entropy and printed when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long, default_value_t = 0.01)]
    pub weak_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Unadjusted,
    Linear,
    Ml,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Use the default structural constants (also the behaviour without --dgp-config).
    #[arg(long, conflicts_with = "dgp_config")]
    pub paper_defaults: bool,
    /// TOML file overriding fields of the data-generating process.
    #[arg(long)]
    pub dgp_config: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub reps: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Quantile levels of the reference outcome used as thresholds.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub levels: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "unadjusted,linear,ml")]
    pub estimators: Vec<EstimatorArg>,
    /// TOML hyper-parameters for the ml estimator's boosted trees.
    #[arg(long)]
    pub learner_config: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub folds: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub n_ref: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// JSON report path.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Long-format CSV path (estimator, quantile, rmse, ci_length, coverage).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Simple,
    Block,
    Efron,
    Wei,
}

#[derive(Debug, Args)]
pub struct RandomizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub stratum_col: String,
    #[arg(long, value_enum, default_value_t = SchemeArg::Simple)]
    pub scheme: SchemeArg,
    /// Treated share: one value, or `label=p` pairs separated by commas.
    #[arg(long, default_value = "0.5")]
    pub target: String,
    #[arg(long)]
    pub block_size: Option<usize>,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub strength: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "assignment")]
    pub assign_col: String,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long)]
    pub output: PathBuf,
}
