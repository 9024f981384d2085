//! Seeded resource-allocation environments.
//!
//! Every environment advances in frames. At the start of a frame the agent
//! names a target allocation of the `C` resources over `n` entities; the
//! simulator realizes it (relocating ambulances, moving bikes), runs the
//! frame's demand and reports a reward. All randomness for an episode is
//! drawn from a ChaCha8 stream seeded by the episode seed, so a seed plus an
//! action sequence reproduces a trace exactly.

pub mod bandit;
pub mod baseline;
pub mod bss;
mod demand;
pub mod error;
pub mod ers;
mod geometry;
pub mod hungarian;
pub mod preprocess;
pub mod spec;
pub mod trace;

use alloc_layers::{check_feasibility, ConstraintSet, DiscreteAllocation, FEASIBILITY_TOL};

pub use bandit::{BanditConfig, BanditEnv};
pub use baseline::{do_nothing_episode, evaluate_static, greedy_static_baseline};
pub use bss::{BssConfig, BssEnv};
pub use error::{EnvError, Result};
pub use ers::{AmbulanceStatus, ErsConfig, ErsEnv, SurgeConfig};
pub use preprocess::{input_dim, Preprocessor};
pub use spec::{EnvSpec, PRESETS};
pub use trace::{run_episode, EpisodeTrace, FrameRecord};

/// What the agent sees after a frame, every component in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Demand observed per entity during the last frame, scaled.
    pub demand: Vec<f64>,
    /// Fraction of the resources available at each entity at the frame end.
    pub allocation: Vec<f64>,
    /// Elapsed fraction of the episode.
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    /// Raw demand per entity this frame (incidents or pickup attempts).
    pub demand: Vec<u32>,
}

pub trait Environment {
    fn name(&self) -> &str;

    /// Fraction-unit bounds and region tree; `total` holds the resource count.
    fn constraints(&self) -> &ConstraintSet;

    fn n_resources(&self) -> u32;

    fn frames_per_episode(&self) -> usize;

    fn reset(&mut self, seed: u64) -> Observation;

    /// Advances one frame with `target` realized at its start, without
    /// checking the bounds. The total must still equal `n_resources`.
    fn step_unchecked(&mut self, target: &[u32]) -> Result<Step>;

    /// Current resource counts per entity (assigned, including busy ones).
    fn allocation(&self) -> Vec<u32>;

    /// Total reward of one episode with `counts` held fixed every frame.
    /// `counts` may hold any number of resources, bounds are ignored.
    fn static_episode(&self, counts: &[u32], seed: u64) -> Result<f64>;

    fn n_entities(&self) -> usize {
        self.constraints().bounds.len()
    }

    /// Advances one frame after checking the target against every bound.
    fn step(&mut self, target: &DiscreteAllocation) -> Result<Step> {
        check_target(self.constraints(), self.n_resources(), target)?;
        self.step_unchecked(target.counts())
    }
}

pub(crate) fn check_target(cs: &ConstraintSet, total: u32, target: &DiscreteAllocation) -> Result<()> {
    if target.total() != total || target.len() != cs.bounds.len() {
        return Err(EnvError::InfeasibleTarget(format!(
            "expected {} entities holding {total}, got {} holding {}",
            cs.bounds.len(),
            target.len(),
            target.total()
        )));
    }
    let z = target.normalize();
    let report = check_feasibility(&z, &cs.bounds, Some(&cs.tree), FEASIBILITY_TOL)?;
    if !report.feasible {
        return Err(EnvError::InfeasibleTarget(format!("{report:?}")));
    }
    Ok(())
}

pub(crate) fn spread_evenly(total: u32, n: usize) -> Vec<u32> {
    let base = total / n as u32;
    let extra = (total % n as u32) as usize;
    (0..n).map(|i| base + u32::from(i < extra)).collect()
}
