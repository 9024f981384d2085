//! One-frame sanity environment: the reward is minus the L1 distance between
//! the executed allocation and a fixed feasible optimum.

use alloc_layers::{BoundSpec, ConstraintSet, Method, RegionTree};
use serde::{Deserialize, Serialize};

use crate::error::{EnvError, Result};
use crate::{check_target, Environment, Observation, Step};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    pub n_resources: u32,
    /// Optimal allocation in fractions of the total.
    pub optimum: Vec<f64>,
    pub lower: Vec<u32>,
    pub upper: Vec<u32>,
    #[serde(default)]
    pub method: Method,
}

impl BanditConfig {
    pub fn toy() -> Self {
        BanditConfig {
            n_resources: 20,
            optimum: vec![0.45, 0.3, 0.15, 0.1],
            lower: vec![1, 1, 1, 1],
            upper: vec![10, 10, 10, 10],
            method: Method::AppOpt,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BanditEnv {
    cfg: BanditConfig,
    constraints: ConstraintSet,
    allocation: Vec<u32>,
    done: bool,
}

impl BanditEnv {
    pub fn new(cfg: BanditConfig) -> Result<Self> {
        let bounds = BoundSpec::from_counts(&cfg.lower, &cfg.upper, cfg.n_resources)?;
        let n = bounds.len();
        if cfg.optimum.len() != n {
            return Err(EnvError::Config("optimum needs one entry per entity".into()));
        }
        let opt_ok = (cfg.optimum.iter().sum::<f64>() - 1.0).abs() < 1e-9
            && cfg.optimum.iter().zip(bounds.lower().iter().zip(bounds.upper())).all(|(&o, (&l, &u))| o >= l && o <= u);
        if !opt_ok {
            return Err(EnvError::Config("optimum must be feasible".into()));
        }
        let constraints =
            ConstraintSet { tree: RegionTree::flat(bounds.clone(), cfg.method), bounds, total: Some(cfg.n_resources) };
        let allocation = crate::spread_evenly(cfg.n_resources, n);
        Ok(BanditEnv { cfg, constraints, allocation, done: false })
    }

    fn reward(&self, counts: &[u32]) -> f64 {
        let c = self.cfg.n_resources as f64;
        -counts.iter().zip(&self.cfg.optimum).map(|(&k, &o)| (k as f64 / c - o).abs()).sum::<f64>()
    }

    fn observation(&self) -> Observation {
        let n = self.cfg.optimum.len();
        Observation { demand: vec![0.0; n], allocation: vec![0.0; n], time: 0.0 }
    }
}

impl Environment for BanditEnv {
    fn name(&self) -> &str {
        "bandit"
    }

    fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    fn n_resources(&self) -> u32 {
        self.cfg.n_resources
    }

    fn frames_per_episode(&self) -> usize {
        1
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.done = false;
        self.observation()
    }

    fn step_unchecked(&mut self, target: &[u32]) -> Result<Step> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let alloc = alloc_layers::DiscreteAllocation::new(target.to_vec(), self.cfg.n_resources)
            .map_err(|e| EnvError::InfeasibleTarget(e.to_string()))?;
        if alloc.len() != self.cfg.optimum.len() {
            return Err(EnvError::InfeasibleTarget("wrong number of entities".into()));
        }
        self.allocation = target.to_vec();
        self.done = true;
        Ok(Step {
            observation: self.observation(),
            reward: self.reward(target),
            done: true,
            demand: vec![0; target.len()],
        })
    }

    fn allocation(&self) -> Vec<u32> {
        self.allocation.clone()
    }

    fn static_episode(&self, counts: &[u32], _seed: u64) -> Result<f64> {
        Ok(self.reward(counts))
    }

    fn step(&mut self, target: &alloc_layers::DiscreteAllocation) -> Result<Step> {
        check_target(&self.constraints, self.cfg.n_resources, target)?;
        self.step_unchecked(target.counts())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc_layers::DiscreteAllocation;

    #[test]
    fn optimum_scores_zero() {
        let mut env = BanditEnv::new(BanditConfig::toy()).unwrap();
        env.reset(0);
        let s = env.step(&DiscreteAllocation::new(vec![9, 6, 3, 2], 20).unwrap()).unwrap();
        assert!(s.reward.abs() < 1e-12);
        assert!(s.done);
        assert!(matches!(env.step_unchecked(&[5, 5, 5, 5]), Err(EnvError::EpisodeOver)));
    }

    #[test]
    fn infeasible_target_rejected() {
        let mut env = BanditEnv::new(BanditConfig::toy()).unwrap();
        env.reset(0);
        let bad = DiscreteAllocation::new(vec![17, 1, 1, 1], 20).unwrap();
        assert!(matches!(env.step(&bad), Err(EnvError::InfeasibleTarget(_))));
    }
}
