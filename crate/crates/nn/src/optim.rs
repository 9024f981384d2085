//! Adam, soft target updates and parameter-space noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::net::{ParamSet, TensorKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one entry per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &ParamSet, config: AdamConfig) -> Self {
        let n = params.len();
        AdamState { config, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam step: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState, lr: f64) -> Result<()> {
    params.check_shape(grads)?;
    if state.m.len() != params.len() {
        return Err(NnError::ShapeMismatch("optimizer state".into()));
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    let g = grads.to_flat();
    let (m, v) = (&mut state.m, &mut state.v);
    let mut off = 0;
    params.for_each_tensor_mut(|_, t| {
        for p in t.iter_mut() {
            let gi = g[off];
            m[off] = beta1 * m[off] + (1.0 - beta1) * gi;
            v[off] = beta2 * v[off] + (1.0 - beta2) * gi * gi;
            let mh = m[off] / c1;
            let vh = v[off] / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
            off += 1;
        }
    });
    Ok(())
}

/// `target <- tau * main + (1 - tau) * target`.
pub fn soft_update(target: &mut ParamSet, main: &ParamSet, tau: f64) -> Result<()> {
    target.check_shape(main)?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(NnError::InvalidSpec(format!("tau must lie in (0, 1], got {tau}")));
    }
    let src = main.to_flat();
    let mut off = 0;
    target.for_each_tensor_mut(|_, t| {
        for p in t.iter_mut() {
            *p = tau * src[off] + (1.0 - tau) * *p;
            off += 1;
        }
    });
    Ok(())
}

/// Copy of `params` with `N(0, sigma^2)` noise on every weight and bias;
/// layer-norm parameters are left untouched.
pub fn perturb_params(params: &ParamSet, sigma: f64, seed: u64) -> Result<ParamSet> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(NnError::InvalidSpec(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut out = params.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    out.for_each_tensor_mut(|kind, t| {
        if matches!(kind, TensorKind::Weight | TensorKind::Bias) {
            t.iter_mut().for_each(|p| *p += normal.sample(&mut rng));
        }
    });
    Ok(out)
}

/// Scale of parameter noise, adapted so the action divergence it causes
/// tracks a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveNoise {
    pub sigma: f64,
    pub target: f64,
    pub factor: f64,
}

impl AdaptiveNoise {
    pub fn new(initial: f64, target: f64, factor: f64) -> Self {
        AdaptiveNoise { sigma: initial, target, factor }
    }

    /// Shrinks sigma if the measured divergence overshoots, grows it otherwise.
    pub fn adapt(&mut self, divergence: f64) {
        if divergence > self.target {
            self.sigma /= self.factor;
        } else {
            self.sigma *= self.factor;
        }
    }
}

/// Mean L2 distance between matching rows of two action batches.
pub fn action_divergence(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let total: f64 =
        a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()).sum();
    total / a.len() as f64
}
