use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter shapes differ: {0}")]
    ShapeMismatch(String),

    #[error("tape was recorded for parameter version {tape}, parameters are now at version {current}")]
    StaleTape { tape: u64, current: u64 },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
