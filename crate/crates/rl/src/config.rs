//! Trainer hyperparameters, read from flat TOML files where every key is a
//! field name; missing keys take the defaults below.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use alloc_nn::Activation;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RlError};

/// How the actor output is turned into a feasible allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMethod {
    /// Project infeasible outputs when acting; penalize violations in training.
    Cp,
    /// Constrained softmax layer, trained end to end.
    Cs,
    /// Clamping approximation of the projection, trained end to end.
    #[serde(rename = "appropt")]
    AppOpt,
}

impl TrainMethod {
    pub const ALL: [TrainMethod; 3] = [TrainMethod::Cp, TrainMethod::Cs, TrainMethod::AppOpt];

    pub fn is_end_to_end(self) -> bool {
        !matches!(self, TrainMethod::Cp)
    }
}

impl fmt::Display for TrainMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMethod::Cp => "cp",
            TrainMethod::Cs => "cs",
            TrainMethod::AppOpt => "appropt",
        })
    }
}

impl FromStr for TrainMethod {
    type Err = RlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cp" => Ok(TrainMethod::Cp),
            "cs" => Ok(TrainMethod::Cs),
            "appropt" => Ok(TrainMethod::AppOpt),
            other => Err(RlError::Config(format!("unknown method {other:?} (expected cp, cs or appropt)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub method: TrainMethod,
    pub gamma: f64,
    pub tau: f64,
    pub critic_lr: f64,
    pub actor_lr: f64,
    /// L2 coefficient on the critic's hidden weights.
    pub critic_l2: f64,
    pub batch: usize,
    pub replay_capacity: usize,
    /// Frames between gradient steps.
    pub train_every: usize,
    pub penalty_lambda: f64,
    /// Target action divergence; `1 / C` when absent.
    pub noise_target: Option<f64>,
    pub noise_adapt: f64,
    pub initial_sigma: f64,
    /// Every `exploit_every`-th episode is played without exploration.
    pub exploit_every: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub activation: Activation,
    pub layer_norm: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            method: TrainMethod::AppOpt,
            gamma: 0.99,
            tau: 1e-3,
            critic_lr: 1e-3,
            actor_lr: 1e-4,
            critic_l2: 1e-2,
            batch: 128,
            replay_capacity: 1_000_000,
            train_every: 2,
            penalty_lambda: 1e3,
            noise_target: None,
            noise_adapt: 1.05,
            initial_sigma: 0.1,
            exploit_every: 4,
            actor_hidden: vec![128, 96],
            critic_hidden: vec![128, 96],
            activation: Activation::Relu,
            layer_norm: true,
        }
    }
}

impl TrainerConfig {
    /// Smaller networks and batches for the toy environments.
    pub fn desk(method: TrainMethod) -> Self {
        TrainerConfig {
            method,
            gamma: 0.9,
            tau: 1e-2,
            actor_lr: 1e-3,
            batch: 64,
            replay_capacity: 100_000,
            actor_hidden: vec![64, 48],
            critic_hidden: vec![64, 48],
            ..TrainerConfig::default()
        }
    }

    /// Reference setup for an environment family (`"ers"`, `"bss"`):
    /// network widths and violation penalty differ per domain.
    pub fn reference_for(method: TrainMethod, env: &str) -> Self {
        let mut cfg = TrainerConfig { method, penalty_lambda: penalty_lambda(method, env, false), ..Self::default() };
        if env == "bss" {
            cfg.actor_hidden = vec![400, 300];
            cfg.critic_hidden = vec![400, 300];
        }
        cfg
    }

    /// [`TrainerConfig::desk`] with the domain's penalty.
    pub fn desk_for(method: TrainMethod, env: &str) -> Self {
        TrainerConfig { penalty_lambda: penalty_lambda(method, env, true), ..Self::desk(method) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RlError::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        for (name, v) in [
            ("critic_lr", self.critic_lr),
            ("actor_lr", self.actor_lr),
            ("noise_adapt", self.noise_adapt),
            ("initial_sigma", self.initial_sigma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.critic_l2 >= 0.0 && self.penalty_lambda >= 0.0) {
            return bad("critic_l2 and penalty_lambda must be non-negative".into());
        }
        if let Some(t) = self.noise_target {
            if t.is_nan() || t <= 0.0 {
                return bad(format!("noise_target must be positive, got {t}"));
            }
        }
        if self.batch == 0 || self.replay_capacity < self.batch || self.train_every == 0 || self.exploit_every == 0 {
            return bad("batch, train_every and exploit_every must be positive, capacity >= batch".into());
        }
        if self.actor_hidden.is_empty() || self.critic_hidden.len() < 2 {
            return bad("actor needs a hidden layer, critic needs two (actions enter the second)".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainerConfig = toml::from_str(text).map_err(|e| RlError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RlError::Io(format!("{}: {e}", path.display())))?;
        TrainerConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("trainer config serializes")
    }
}

/// Violation penalty per method and domain. The desk CP value is lower:
/// with the larger desk actor learning rate, 1e3 lets the L1 penalty's
/// alternating subgradient swamp the critic's signal on the toy ERS.
pub fn penalty_lambda(method: TrainMethod, env: &str, desk: bool) -> f64 {
    match (method, env) {
        (TrainMethod::Cs, _) => 0.0,
        (TrainMethod::Cp, "bss") => 1e5,
        (TrainMethod::AppOpt, "bss") => 1e4,
        (TrainMethod::Cp, _) if desk => 1e2,
        _ => 1e3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = TrainerConfig::default();
        assert_eq!((c.tau, c.critic_lr, c.actor_lr, c.critic_l2), (1e-3, 1e-3, 1e-4, 1e-2));
        assert_eq!((c.batch, c.replay_capacity, c.train_every), (128, 1_000_000, 2));
        assert_eq!(c.noise_adapt, 1.05);
        c.validate().unwrap();
    }

    #[test]
    fn flat_toml_round_trip_and_partial_files() {
        let c = TrainerConfig::desk(TrainMethod::Cs);
        assert_eq!(TrainerConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = TrainerConfig::from_toml("method = \"cp\"\ngamma = 0.5\n").unwrap();
        assert_eq!(partial.method, TrainMethod::Cp);
        assert_eq!(partial.batch, 128);
        assert!(TrainerConfig::from_toml("gamma = 1.5").is_err());
        assert!(TrainerConfig::from_toml("gama = 0.5").is_err());
    }

    #[test]
    fn method_names() {
        for m in TrainMethod::ALL {
            assert_eq!(m.to_string().parse::<TrainMethod>().unwrap(), m);
        }
        assert!("softmax".parse::<TrainMethod>().is_err());
    }
}
