use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("array capacitors are not discharged; call reset() before the next operation")]
    NotReset,

    #[error("bundle needs an odd number of vectors, got {0}")]
    EvenBundle(usize),

    #[error("associative memory is empty")]
    EmptyCodebook,

    #[error("duplicate label `{0}` in codebook")]
    DuplicateLabel(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("workload is infeasible: {0}")]
    Infeasible(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParams(msg.into())
    }
}
