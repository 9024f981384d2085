//! Randomized Jacobian checks shared by the `gradcheck` command and the
//! acceptance suite.

use alloc_layers::gradcheck::{guarded_check, GradCheck};
use alloc_layers::sampling::{random_bounds, random_point_in_box, random_raw, random_tree};
use alloc_layers::{appropt_layer, build_context, cs_layer, BoundSpec, ConstraintSet, CsMode, Method, RegionTree};
use alloc_nn::{init_params, Activation, Matrix, NetSpec};
use alloc_rl::{actor_head, actor_objective, ActionMap, ActionValue, TrainMethod};
use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step for the layer checks.
pub const LAYER_STEP: f64 = 1e-7;
/// Step for the network check; halved once to detect kinks.
pub const NET_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradTarget {
    /// Constrained softmax, squash included.
    Cs,
    /// Prescale plus clamping projection.
    Appropt,
    /// Random region trees of both layer kinds.
    Tree,
    /// Actor network, constraint layer and a linear critic, w.r.t. the actor's parameters.
    Net,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradStats {
    pub trials: usize,
    pub compared: usize,
    /// Samples skipped because a kink sat inside the stencil.
    pub kinks: usize,
    /// Largest elementwise error relative to `max(1, |finite difference|)`.
    pub max_error: f64,
}

impl GradStats {
    fn record(&mut self, check: GradCheck) {
        self.trials += 1;
        match check {
            GradCheck::Compared(e) => {
                self.compared += 1;
                self.max_error = self.max_error.max(e);
            }
            GradCheck::Kink => self.kinks += 1,
        }
    }
}

/// Bounds on which the constrained softmax applies in its regular mode.
pub fn cs_bounds(rng: &mut ChaCha8Rng, n: usize) -> BoundSpec {
    loop {
        let b = random_bounds(rng, n);
        if build_context(&b).is_ok_and(|c| c.mode() == CsMode::Regular) {
            return b;
        }
    }
}

/// A random tree and pins at which every node's layer applies. With CS a
/// node's budget can leave the range its children's bounds allow.
fn usable_tree(rng: &mut ChaCha8Rng) -> (RegionTree, Vec<f64>) {
    loop {
        let n = rng.random_range(2..=10);
        let method = if rng.random_bool(0.5) { Method::Cs } else { Method::AppOpt };
        let tree = random_tree(rng, n, 2, method);
        for _ in 0..20 {
            let pins = random_raw(rng, tree.n_pins(), 1.0);
            if tree.evaluate(&pins, false).is_ok() {
                return (tree, pins);
            }
        }
    }
}

pub fn gradcheck(target: GradTarget, trials: usize, seed: u64) -> anyhow::Result<GradStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = GradStats::default();
    for _ in 0..trials {
        let check = match target {
            GradTarget::Cs => {
                let n = rng.random_range(2..=12);
                let ctx = build_context(&cs_bounds(&mut rng, n))?;
                let x = random_raw(&mut rng, n, 3.0);
                guarded_check(|v| cs_layer(v, &ctx).map(|(z, j)| (z.into_inner(), j)), &x, LAYER_STEP)?
            }
            GradTarget::Appropt => {
                let n = rng.random_range(2..=12);
                let b = random_bounds(&mut rng, n);
                // half inside the box (no prescale), half raw
                let x =
                    if rng.random_bool(0.5) { random_point_in_box(&mut rng, &b) } else { random_raw(&mut rng, n, 1.0) };
                guarded_check(|v| appropt_layer(v, &b).map(|(z, j)| (z.into_inner(), j)), &x, LAYER_STEP)?
            }
            GradTarget::Tree => {
                let (tree, pins) = usable_tree(&mut rng);
                match guarded_check(|p| tree.nested_forward(p).map(|(z, j)| (z.into_inner(), j)), &pins, LAYER_STEP) {
                    Ok(c) => c,
                    // the stencil crossed the edge of the domain, which is a kink too
                    Err(e) if !e.is_internal() => GradCheck::Kink,
                    Err(e) => return Err(e.into()),
                }
            }
            GradTarget::Net => net_trial(&mut rng)?,
        };
        stats.record(check);
    }
    Ok(stats)
}

/// `Q = w . z`.
struct Linear(Vec<f64>);

impl ActionValue for Linear {
    fn q_and_grad(&self, _: &Matrix, actions: &[Vec<f64>]) -> alloc_rl::Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let q = actions.iter().map(|a| a.iter().zip(&self.0).map(|(x, w)| x * w).sum()).collect();
        Ok((q, vec![self.0.clone(); actions.len()]))
    }
}

fn net_trial(rng: &mut ChaCha8Rng) -> anyhow::Result<GradCheck> {
    let n = rng.random_range(2..=6);
    let method = if rng.random_bool(0.5) { TrainMethod::Cs } else { TrainMethod::AppOpt };
    let bounds = match method {
        TrainMethod::Cs => cs_bounds(rng, n),
        _ => random_bounds(rng, n),
    };
    let cons = ConstraintSet { tree: RegionTree::flat(bounds.clone(), Method::AppOpt), bounds, total: None };
    let map = ActionMap::new(method, &cons.tree);
    let mut spec = NetSpec::mlp(4, &[6, 5], map.raw_width(), actor_head(method));
    spec.activation = Activation::Tanh;
    let params = init_params(&spec, rng.random())?;
    let states = Matrix::from_vec(2, 4, (0..8).map(|_| rng.random_range(-2.0..2.0)).collect())?;
    let critic = Linear((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    let lambda = if method == TrainMethod::AppOpt { 1.0 } else { 0.0 };
    let obj = actor_objective(&spec, &params, &map, lambda, &states, &critic, true)?;
    let analytic = obj.grads.expect("gradient requested").to_flat();
    let base = params.to_flat();
    let loss = |flat: &[f64]| -> anyhow::Result<f64> {
        let mut p = params.clone();
        p.set_flat(flat)?;
        Ok(actor_objective(&spec, &p, &map, lambda, &states, &critic, false)?.loss)
    };
    let fd = |i: usize, h: f64| -> anyhow::Result<f64> {
        let mut p = base.clone();
        p[i] = base[i] + h;
        let up = loss(&p)?;
        p[i] = base[i] - h;
        Ok((up - loss(&p)?) / (2.0 * h))
    };
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let (f1, f2) = (fd(i, NET_STEP)?, fd(i, NET_STEP / 2.0)?);
        if (f1 - f2).abs() > 1e-6 * f1.abs().max(1.0) {
            return Ok(GradCheck::Kink);
        }
        worst = worst.max((a - f1).abs() / f1.abs().max(1.0));
    }
    Ok(GradCheck::Compared(worst))
}
