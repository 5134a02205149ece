use thiserror::Error;

/// Every contract violation the library can report.
#[derive(Debug, Error)]
pub enum BanditError {
    #[error("input-shape error: {what} expected length {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("action index {index} out of range for {k} actions")]
    ActionOutOfRange { index: usize, k: usize },

    #[error("cluster index {index} out of range for {k} clusters")]
    ClusterOutOfRange { index: usize, k: usize },

    #[error("reward {0} outside [0, 1]")]
    RewardOutOfRange(f64),

    #[error("empty estimate vector")]
    EmptyEstimates,

    #[error("propensity {0} is not positive (exploration floor broken upstream)")]
    NonPositivePropensity(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite parameter vector entry at index {0}")]
    NonFinite(usize),

    #[error("environment has no analytic reward means")]
    NotAnalytic,

    #[error("unknown context id {0}")]
    UnknownContext(usize),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("label {label} on line {line} outside 1..={k}")]
    LabelOutOfRange { label: i64, line: usize, k: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BanditError>;
