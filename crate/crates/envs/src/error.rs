use alloc_layers::AllocError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("target allocation is infeasible: {0}")]
    InfeasibleTarget(String),

    #[error("invalid environment config: {0}")]
    Config(String),

    #[error("step called on a finished episode")]
    EpisodeOver,

    #[error(transparent)]
    Alloc(#[from] AllocError),
}

pub type Result<T> = std::result::Result<T, EnvError>;
