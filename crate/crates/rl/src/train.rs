//! The training loop, evaluation rollouts and the per-episode log.

use std::io::Write;
use std::time::Instant;

use alloc_envs::{Environment, Preprocessor};

use crate::agent::Ddpg;
use crate::error::{Result, RlError};
use crate::replay::Transition;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub seed: u64,
    pub explore: bool,
    pub frames: usize,
    pub reward: f64,
    pub critic_loss_mean: f64,
    pub violation_mean: f64,
    /// Mean projection gap of the executed actions (single-layer ApprOpt).
    pub gap_mean: Option<f64>,
    pub sigma: f64,
    pub wall_ms: u128,
}

/// Environment seed of training episode `episode` for run `seed`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (episode as u64).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `episodes` training episodes. Every `exploit_every`-th episode is
/// played with the unperturbed actor. `on_episode` sees each record as it
/// completes.
pub fn train<F>(
    agent: &mut Ddpg,
    env: &mut dyn Environment,
    episodes: usize,
    seed: u64,
    mut on_episode: F,
) -> Result<Vec<EpisodeRecord>>
where
    F: FnMut(&EpisodeRecord),
{
    let n = env.n_entities();
    if agent.obs_dim() != alloc_envs::input_dim(n) {
        return Err(RlError::Config(format!(
            "agent expects {} inputs, environment gives {}",
            agent.obs_dim(),
            alloc_envs::input_dim(n)
        )));
    }
    let every = agent.config().exploit_every;
    let train_every = agent.config().train_every;
    let batch = agent.config().batch;
    let mut pre = Preprocessor::new(n);
    let mut records = Vec::with_capacity(episodes);
    let mut frame_count = 0usize;
    for episode in 0..episodes {
        let start = Instant::now();
        let explore = (episode + 1) % every != 0;
        let ep_seed = episode_seed(seed, episode);
        agent.begin_episode(explore)?;
        pre.reset();
        let mut state = pre.push(&env.reset(ep_seed));
        agent.observe_state(&state)?;
        let (mut reward, mut frames, mut losses, mut violations) = (0.0, 0, Vec::new(), Vec::new());
        let mut gaps = Vec::new();
        loop {
            let (out, action, raw) = agent.act(&state, explore)?;
            violations.push(out.violation);
            if let Some(g) = agent.action_map().projection_gap(&raw) {
                gaps.push(g);
            }
            let step = env.step(&action)?;
            let next = pre.push(&step.observation);
            agent.observe_state(&next)?;
            agent.remember(Transition {
                state: std::mem::take(&mut state),
                action: action.normalize().into_inner(),
                reward: step.reward,
                next_state: next.clone(),
                terminal: step.done,
            })?;
            state = next;
            reward += step.reward;
            frames += 1;
            frame_count += 1;
            if frame_count.is_multiple_of(train_every) && agent.replay().len() >= batch {
                losses.push(agent.train_step()?.critic_loss);
            }
            if step.done {
                break;
            }
        }
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let record = EpisodeRecord {
            episode,
            seed: ep_seed,
            explore,
            frames,
            reward,
            critic_loss_mean: mean(&losses),
            violation_mean: mean(&violations),
            gap_mean: (!gaps.is_empty()).then(|| mean(&gaps)),
            sigma: agent.noise.sigma,
            wall_ms: start.elapsed().as_millis(),
        };
        log::debug!("episode {episode} reward {reward:.3} sigma {:.4}", record.sigma);
        on_episode(&record);
        records.push(record);
    }
    Ok(records)
}

/// Total reward of one exploiting episode per seed; the agent is unchanged.
pub fn evaluate(agent: &Ddpg, env: &mut dyn Environment, seeds: &[u64]) -> Result<Vec<f64>> {
    let mut pre = Preprocessor::new(env.n_entities());
    seeds
        .iter()
        .map(|&seed| {
            pre.reset();
            let mut state = pre.push(&env.reset(seed));
            let mut total = 0.0;
            loop {
                let (_, action, _) = agent.act(&state, false)?;
                let step = env.step(&action)?;
                total += step.reward;
                state = pre.push(&step.observation);
                if step.done {
                    return Ok(total);
                }
            }
        })
        .collect()
}

pub const LOG_HEADER: [&str; 8] =
    ["episode", "frames", "reward", "critic_loss_mean", "violation_mean", "sigma", "explore", "gap_mean"];

/// Per-episode training log. Wall time is left out so identical runs write
/// identical files.
pub fn write_training_log<W: Write>(out: W, records: &[EpisodeRecord]) -> Result<()> {
    let io = |e: csv::Error| RlError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER).map_err(io)?;
    for r in records {
        w.write_record([
            r.episode.to_string(),
            r.frames.to_string(),
            r.reward.to_string(),
            r.critic_loss_mean.to_string(),
            r.violation_mean.to_string(),
            r.sigma.to_string(),
            u8::from(r.explore).to_string(),
            r.gap_mean.map(|g| g.to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| RlError::Io(e.to_string()))
}

/// Rewards of the exploiting episodes only, the learning curve.
pub fn write_learning_curve<W: Write>(out: W, records: &[EpisodeRecord]) -> Result<()> {
    let io = |e: csv::Error| RlError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "reward"]).map_err(io)?;
    for r in records.iter().filter(|r| !r.explore) {
        w.write_record([r.episode.to_string(), r.reward.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| RlError::Io(e.to_string()))
}
