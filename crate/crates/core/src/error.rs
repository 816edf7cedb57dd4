use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate variance: the aggregate P&L has zero sample variance")]
    DegenerateVariance,

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("constituent index {index} out of range for d = {d}")]
    IndexOutOfRange { index: usize, d: usize },

    #[error("invalid sample size n = {0}: at least 2 observations are required")]
    InvalidN(usize),

    #[error("root search did not converge: {0}")]
    NoConvergence(String),

    #[error("corrupt b_n cache {path}: {reason}")]
    CorruptCache { path: String, reason: String },

    #[error("matrix factorization failed: {0}")]
    FactorizationFailure(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("missing value at line {line}, column {column}")]
    MissingValue { line: usize, column: usize },

    #[error("dates not strictly increasing at line {line}")]
    NonMonotoneDates { line: usize },

    #[error("boundary date {0} is outside the panel's date range")]
    BoundaryOutOfRange(String),

    #[error("estimator failed on backtest day {day}: {source}")]
    EstimatorFailed {
        day: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::DegenerateVariance => "DegenerateVariance",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::InvalidN(_) => "InvalidN",
            Error::NoConvergence(_) => "NoConvergence",
            Error::CorruptCache { .. } => "CorruptCache",
            Error::FactorizationFailure(_) => "FactorizationFailure",
            Error::Parse { .. } => "ParseError",
            Error::MissingValue { .. } => "MissingValue",
            Error::NonMonotoneDates { .. } => "NonMonotoneDates",
            Error::BoundaryOutOfRange(_) => "BoundaryOutOfRange",
            Error::EstimatorFailed { .. } => "EstimatorFailed",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
