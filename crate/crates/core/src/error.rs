use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("cannot build {classes} distinct rows from {bits} bits (2^K < C); increase K")]
    TooFewBits { classes: usize, bits: usize },

    #[error("class count {classes} exceeds 2K = {limit} rows available from [H; -H]")]
    TooManyClasses { classes: usize, limit: usize },

    #[error("no duplicate-free codebook after {0} resamples")]
    RetryBudgetExhausted(usize),

    #[error("entry {index} is {value}, expected -1 or +1")]
    NotASign { index: usize, value: i64 },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("row {0} has zero norm")]
    ZeroNorm(usize),

    #[error("row {row} is not unit norm (norm {norm})")]
    NotUnitNorm { row: usize, norm: f64 },

    #[error("target row {row} sums to {sum}, expected 1")]
    TargetsNotNormalized { row: usize, sum: f64 },

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("backward requires a cache from a train-mode forward pass")]
    ModeMismatch,

    #[error("parameters became non-finite in epoch {0}")]
    Diverged(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error("unrecognized magic {0:?}")]
    UnknownMagic(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn ensure_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, actual })
    }
}
