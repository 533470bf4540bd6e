use thiserror::Error;

/// Errors raised by every fallible operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} index {index} out of range ({count} available)")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        count: usize,
    },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("table with {entries} entries exceeds the cap of {cap}")]
    TooLarge { entries: usize, cap: usize },
    #[error("feature map is not universal: {0}")]
    NonUniversal(String),
    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("non-monotone verdict sequence: {0}")]
    NonMonotone(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
