//! Batch command-line front end: projections, gradient checks, training,
//! evaluation and baselines. Every command is deterministic given its seeds.

pub mod checks;
pub mod commands;
pub mod exit;
pub mod manifest;
