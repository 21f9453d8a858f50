use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry: {0}")]
    NonFinite(String),

    #[error("rank deficiency in factor {factor}: {detail}")]
    RankDeficient { factor: &'static str, detail: String },

    #[error("optimization diverged: loss {current:.3e} exceeds {limit:.3e} (initial {initial:.3e})")]
    Divergence {
        initial: f64,
        current: f64,
        limit: f64,
        /// Loss trace up to the point of divergence.
        trace: Vec<f64>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
