//! Static reference policies.

use alloc_layers::DiscreteAllocation;

use crate::error::Result;
use crate::Environment;

/// Mean static-episode reward of `counts` over `seeds`.
pub fn evaluate_static(env: &dyn Environment, counts: &[u32], seeds: &[u64]) -> Result<Vec<f64>> {
    seeds.iter().map(|&s| env.static_episode(counts, s)).collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Places resources one at a time, each on the entity with the largest mean
/// gain over `seeds` given those already placed. Ties go to the lowest index.
/// Entity bounds are not consulted.
pub fn greedy_static_baseline(env: &dyn Environment, n_resources: u32, seeds: &[u64]) -> Result<DiscreteAllocation> {
    let n = env.n_entities();
    let mut counts = vec![0u32; n];
    for _ in 0..n_resources {
        let mut best = (f64::NEG_INFINITY, 0);
        for i in 0..n {
            counts[i] += 1;
            let score = mean(&evaluate_static(env, &counts, seeds)?);
            counts[i] -= 1;
            if score > best.0 {
                best = (score, i);
            }
        }
        counts[best.1] += 1;
    }
    Ok(DiscreteAllocation::new(counts, n_resources)?)
}

/// Total reward of an episode in which every frame keeps the current
/// distribution, bypassing the bound checks.
pub fn do_nothing_episode(env: &mut dyn Environment, seed: u64) -> Result<f64> {
    env.reset(seed);
    let mut total = 0.0;
    for _ in 0..env.frames_per_episode() {
        let current = env.allocation();
        total += env.step_unchecked(&current)?.reward;
    }
    Ok(total)
}
