use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("time index {t} out of range 0..={max}")]
    TimeOutOfRange { t: usize, max: usize },

    #[error("embedding dimension must be even, got {0}")]
    OddEmbedDim(usize),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: u64, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
