use alloc_envs::EnvError;
use alloc_layers::AllocError;
use alloc_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid trainer config: {0}")]
    Config(String),

    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    ReplayCold { have: usize, need: usize },

    #[error("executed action is infeasible: {0}")]
    InfeasibleAction(String),

    #[error(transparent)]
    Layer(#[from] AllocError),

    #[error(transparent)]
    Net(#[from] NnError),

    #[error(transparent)]
    Env(#[from] EnvError),

    #[error("i/o: {0}")]
    Io(String),
}

impl RlError {
    /// True for broken internal invariants (as opposed to bad inputs).
    pub fn is_internal(&self) -> bool {
        match self {
            RlError::InfeasibleAction(_) => true,
            RlError::Layer(e) => e.is_internal(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, RlError>;
