//! Deep deterministic policy gradient with constrained actions.
//!
//! Every executed action is a feasible integer allocation: the actor's
//! output goes through the method's constraint path and is then rounded.
//! Replay stores the rounded action, and the critic always scores
//! allocations in fraction units.

pub mod agent;
pub mod config;
pub mod error;
pub mod replay;
pub mod train;

pub use agent::{
    actor_head, actor_objective, ActionMap, ActionValue, ActorObjective, AgentSnapshot, Ddpg, LayerOutput,
    NeuralCritic, StepStats, OBS_CLIP,
};
pub use config::{penalty_lambda, TrainMethod, TrainerConfig};
pub use error::{Result, RlError};
pub use replay::{ReplayBuffer, Transition};
pub use train::{episode_seed, evaluate, train, write_learning_curve, write_training_log, EpisodeRecord, LOG_HEADER};

use std::path::Path;

/// Saves the agent's networks and normalizers as a versioned JSON file.
pub fn save_checkpoint(agent: &Ddpg, path: &Path) -> Result<()> {
    Ok(alloc_nn::checkpoint::save(path, &agent.snapshot())?)
}

pub fn load_checkpoint(path: &Path) -> Result<AgentSnapshot> {
    Ok(alloc_nn::checkpoint::load(path)?)
}
