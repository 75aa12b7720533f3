use thiserror::Error;

pub type Result<T, E = LdteError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LdteError {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("column `{column}` row {row}: value `{value}` is not 0 or 1")]
    NonBinaryColumn {
        column: String,
        row: usize,
        value: String,
    },

    #[error("column `{column}` row {row}: non-finite or unparsable value `{value}`")]
    NonFiniteValue {
        column: String,
        row: usize,
        value: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("column length mismatch: {0}")]
    LengthMismatch(String),

    #[error("outcome is constant; no threshold grid can be formed")]
    DegenerateOutcome,

    #[error("invalid threshold grid: {0}")]
    InvalidGrid(String),

    #[error("no target probability for stratum {0}")]
    UnknownStratum(String),

    #[error("invalid block size: {0}")]
    InvalidBlockSize(String),

    #[error("invalid randomization scheme: {0}")]
    InvalidScheme(String),

    #[error("invalid learner specification: {0}")]
    InvalidLearner(String),

    #[error("cell (z={arm}, stratum {stratum}) has {size} units, fewer than the {folds} folds requested")]
    CellTooSmall {
        arm: u8,
        stratum: String,
        size: usize,
        folds: usize,
    },

    #[error("no training rows for arm z={arm}, stratum {stratum}, held-out fold {fold}")]
    EmptyTrainingCell {
        arm: u8,
        stratum: String,
        fold: usize,
    },

    #[error("stratum {stratum} has no units with assignment z={arm}")]
    InvalidStrata { stratum: String, arm: u8 },

    #[error("first stage {first_stage:.6} is below the weak-instrument floor {floor}")]
    WeakFirstStage { first_stage: f64, floor: f64 },

    #[error("threshold index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("confidence level {0} is not in (0, 1)")]
    InvalidLevel(f64),

    #[error("{rejected} of {draws} bootstrap draws had an empty (arm, stratum) cell")]
    DegenerateBootstrapDraw { rejected: usize, draws: usize },

    #[error("reference sample contains no compliers")]
    NoCompliers,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{failed} of {reps} replications failed for estimator `{estimator}`: {last}")]
    TooManyFailedReplications {
        estimator: String,
        failed: usize,
        reps: usize,
        last: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
