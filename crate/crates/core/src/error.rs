use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite reward encountered")]
    InvalidReward,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("action element {index} = {value} outside [-1, 1]")]
    ActionBounds { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("value {value} on line {line} outside [{lo}, {hi}]")]
    Range { line: usize, value: f64, lo: f64, hi: f64 },

    #[error("numerical failure: {0}")]
    Numerics(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("insufficient data: need {needed}, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("q has zero mass at bin {0} where p is positive")]
    Support(usize),

    #[error("environment is not at the expected state")]
    StateMismatch,

    #[error("expert average return {achieved} below qualification threshold {required}")]
    ExpertTooWeak { achieved: f64, required: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(expected: usize, got: usize) -> Self {
        Error::Dimension { expected, got }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
