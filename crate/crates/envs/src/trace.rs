use std::io::Write;

use alloc_layers::DiscreteAllocation;

use crate::error::{EnvError, Result};
use crate::{Environment, Observation};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    pub demand: Vec<u32>,
    pub allocation: Vec<u32>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub frames: Vec<FrameRecord>,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.frames.iter().map(|f| f.reward).sum()
    }

    pub fn total_demand(&self) -> u64 {
        self.frames.iter().flat_map(|f| &f.demand).map(|&d| d as u64).sum()
    }

    /// Writes `frame, demand_0.., alloc_0.., reward`, one row per frame.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| EnvError::Config(format!("trace export failed: {e}"));
        let n = self.frames.first().map_or(0, |f| f.demand.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["frame".to_string()];
        header.extend((0..n).map(|i| format!("demand_{i}")));
        header.extend((0..n).map(|i| format!("alloc_{i}")));
        header.push("reward".into());
        w.write_record(&header).map_err(io)?;
        for f in &self.frames {
            let mut row = vec![f.frame.to_string()];
            row.extend(f.demand.iter().map(u32::to_string));
            row.extend(f.allocation.iter().map(u32::to_string));
            row.push(f.reward.to_string());
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| EnvError::Config(format!("trace export failed: {e}")))?;
        Ok(())
    }
}

/// Plays one episode, asking `policy` for a target before every frame.
pub fn run_episode<P>(env: &mut dyn Environment, seed: u64, mut policy: P) -> Result<EpisodeTrace>
where
    P: FnMut(&Observation) -> Result<DiscreteAllocation>,
{
    let mut obs = env.reset(seed);
    let mut trace = EpisodeTrace { seed, frames: Vec::new() };
    for frame in 0..env.frames_per_episode() {
        let target = policy(&obs)?;
        let step = env.step(&target)?;
        trace.frames.push(FrameRecord {
            frame,
            demand: step.demand,
            allocation: target.counts().to_vec(),
            reward: step.reward,
        });
        obs = step.observation;
        if step.done {
            break;
        }
    }
    Ok(trace)
}
