use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("extrapolation error: {0}")]
    Extrapolation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("unsupported specification: {0}")]
    Unsupported(String),

    #[error("rule evaluation error: {0}")]
    RuleEvaluation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("spec mismatch: {0}")]
    SpecMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
