use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain of the operation (negative depth,
    /// time going backwards, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("frame kind error: {0}")]
    Kind(String),

    #[error("insufficient constraints: {valid} valid residuals, need at least {required}")]
    InsufficientConstraints { valid: usize, required: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("tracking failure: {0}")]
    TrackingFailure(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
