//! Process exit codes: 0 success, 2 bad input, 3 a checked threshold was
//! missed, 4 an internal invariant broke.

use alloc_envs::EnvError;
use alloc_layers::AllocError;
use alloc_nn::NnError;
use alloc_rl::RlError;
use thiserror::Error;

pub const OK: i32 = 0;
pub const INPUT: i32 = 2;
pub const THRESHOLD: i32 = 3;
pub const INTERNAL: i32 = 4;

/// A measurement fell outside its acceptance threshold.
#[derive(Debug, Error)]
#[error("threshold not met: {0}")]
pub struct ThresholdFailure(pub String);

/// An output failed a check that should hold by construction.
#[derive(Debug, Error)]
#[error("internal check failed: {0}")]
pub struct InternalFailure(pub String);

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ThresholdFailure>() {
            return THRESHOLD;
        }
        if cause.is::<InternalFailure>() {
            return INTERNAL;
        }
        if let Some(e) = cause.downcast_ref::<AllocError>() {
            return if e.is_internal() { INTERNAL } else { INPUT };
        }
        if let Some(e) = cause.downcast_ref::<RlError>() {
            return if e.is_internal() { INTERNAL } else { INPUT };
        }
        if let Some(EnvError::Alloc(e)) = cause.downcast_ref::<EnvError>() {
            return if e.is_internal() { INTERNAL } else { INPUT };
        }
        if let Some(NnError::StaleTape { .. }) = cause.downcast_ref::<NnError>() {
            return INTERNAL;
        }
    }
    INPUT
}
