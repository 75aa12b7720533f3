//! Local distributional and probability treatment effects for experiments
//! with covariate-adaptive randomization and imperfect compliance.
//!
//! The pipeline is: load an [`ExperimentSample`], compute [`StratumStats`],
//! choose a [`ThresholdGrid`], cross-fit nuisance models with
//! [`fit_cross_fitted`], then call [`estimate`] and build a band with
//! [`analytic_variance`]/[`analytic_band`] or [`bootstrap_band`].

pub mod data;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod normal;
pub mod nuisance;
pub mod randomization;
pub mod seed;
pub mod simulation;

pub use data::{
    compute_stratum_stats, default_threshold_grid, integer_support_grid, load_sample, read_sample, CsvSchema,
    ExperimentSample, StratumStats, ThresholdGrid,
};
pub use error::{LdteError, Result};
pub use estimator::{
    compute_xi_terms, estimate, estimate_ldte, estimate_lpte, estimate_unadjusted, Diagnostics, EffectKind,
    EstimatorConfig, LdteResult, XiTerms,
};
pub use inference::{
    analytic_band, analytic_variance, bootstrap_band, bootstrap_replicates, BandMethod, BootstrapOptions,
    BootstrapReplicates, ConfidenceBand, VarianceComponents, VarianceEstimate,
};
pub use nuisance::{
    fit_cross_fitted, fit_with_folds, fold_assign, FitMeta, GbtParams, Learner, LearnerSpec, NuisanceFit, RidgeParams,
};
pub use randomization::{assign, imbalance_report, CarScheme, ImbalanceRow, SchemeKind, Targets};
pub use simulation::{generate, ground_truth, run_monte_carlo, DgpConfig, GeneratedSample, McConfig, McEstimator, McReport};
