//! Dense networks with layer norm and hand-written backpropagation, plus the
//! optimizer, target-update and exploration-noise pieces of actor-critic
//! training.

pub mod checkpoint;
pub mod error;
pub mod matrix;
pub mod moments;
pub mod net;
pub mod optim;

pub use error::{NnError, Result};
pub use matrix::Matrix;
pub use moments::RunningMoments;
pub use net::{
    backward, forward, init_params, Activation, Gradients, LayerParams, Mlp, NetSpec, OutputActivation, ParamSet,
    SideInput, Tape, TensorKind,
};
pub use optim::{action_divergence, adam_step, perturb_params, soft_update, AdamConfig, AdamState, AdaptiveNoise};
