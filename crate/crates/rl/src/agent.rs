//! Actor, critic, their target copies and normalizers, with the three actor
//! updates.
//!
//! The actor's raw output `x` reaches the environment along one of three
//! paths:
//!
//! * CP: `x` has one entry per entity; acting projects it onto the feasible
//!   set, training takes the policy gradient at `x` itself and adds
//!   `lambda * grad nu(x)`.
//! * CS and ApprOpt: `x` has one entry per pin of the region tree and the
//!   tree's layers map it to a feasible `z`; the policy gradient flows back
//!   through the layer Jacobians. ApprOpt also penalizes `nu` of the
//!   unscaled pins.

use alloc_layers::{
    check_feasibility, cp_project, prescale, projection_gap, round_to_discrete_tree, violation_cost, ConstraintSet,
    DiscreteAllocation, JacobianMatrix, Method, RegionTree, FEASIBILITY_TOL,
};
use alloc_nn::{
    action_divergence, adam_step, backward, forward, init_params, perturb_params, soft_update, AdamState,
    AdaptiveNoise, Matrix, Mlp, NetSpec, OutputActivation, ParamSet, RunningMoments,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{TrainMethod, TrainerConfig};
use crate::error::{Result, RlError};
use crate::replay::{ReplayBuffer, Transition};

/// Normalized observations are clipped to this range, so rarely seen
/// feature values cannot blow up the first layer.
pub const OBS_CLIP: f64 = 5.0;

/// Something that scores actions: Q values and `dQ/da` per batch row.
/// States arrive normalized; actions are in fraction units.
pub trait ActionValue {
    fn q_and_grad(&self, states: &Matrix, actions: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)>;
}

/// A critic network whose action input is normalized by `moments`.
pub struct NeuralCritic<'a> {
    pub net: &'a Mlp,
    pub moments: &'a RunningMoments,
}

impl ActionValue for NeuralCritic<'_> {
    fn q_and_grad(&self, states: &Matrix, actions: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let side = normalized_rows(self.moments, actions)?;
        let (q, tape) = self.net.forward(states, Some(&side))?;
        let ones = Matrix::from_vec(q.rows(), 1, vec![1.0; q.rows()])?;
        let g = self.net.backward(&tape, &ones)?;
        let scale = self.moments.normalize_scale();
        let side_grad = g.side.expect("critic has an action input");
        let grads =
            (0..side_grad.rows()).map(|r| side_grad.row(r).iter().zip(&scale).map(|(g, s)| g * s).collect()).collect();
        Ok((q.into_vec(), grads))
    }
}

fn normalized_rows(m: &RunningMoments, rows: &[Vec<f64>]) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| m.normalize(r)).collect();
    Ok(Matrix::from_rows(&rows)?)
}

/// Result of mapping one raw actor output to an allocation.
#[derive(Debug, Clone)]
pub struct LayerOutput {
    /// Feasible continuous allocation.
    pub z: Vec<f64>,
    /// `dz/dx` for the end-to-end methods.
    pub jacobian: Option<JacobianMatrix>,
    /// Penalized violation of the raw output (0 for CS).
    pub violation: f64,
    pub violation_grad: Vec<f64>,
}

/// The constraint path of one method over a fixed region tree.
#[derive(Debug, Clone)]
pub struct ActionMap {
    method: TrainMethod,
    tree: RegionTree,
}

impl ActionMap {
    pub fn new(method: TrainMethod, tree: &RegionTree) -> Self {
        let tree = match method {
            TrainMethod::Cp => tree.clone(),
            TrainMethod::Cs => tree.with_method(Method::Cs),
            TrainMethod::AppOpt => tree.with_method(Method::AppOpt),
        };
        ActionMap { method, tree }
    }

    pub fn method(&self) -> TrainMethod {
        self.method
    }

    pub fn tree(&self) -> &RegionTree {
        &self.tree
    }

    /// Width of the raw actor output.
    pub fn raw_width(&self) -> usize {
        match self.method {
            TrainMethod::Cp => self.tree.n_entities(),
            _ => self.tree.n_pins(),
        }
    }

    pub fn apply(&self, x: &[f64], with_jacobian: bool) -> Result<LayerOutput> {
        match self.method {
            TrainMethod::Cp => {
                let z = cp_project(x, &self.tree)?.into_inner();
                let (violation, violation_grad) = violation_cost(x, &self.tree)?;
                Ok(LayerOutput { z, jacobian: None, violation, violation_grad })
            }
            TrainMethod::Cs => {
                let ev = self.tree.evaluate(x, with_jacobian)?;
                Ok(LayerOutput { z: ev.z, jacobian: ev.jacobian, violation: 0.0, violation_grad: vec![0.0; x.len()] })
            }
            TrainMethod::AppOpt => {
                let ev = self.tree.evaluate(x, with_jacobian)?;
                let (violation, violation_grad) = if self.tree.is_flat() {
                    violation_cost(x, &self.tree)?
                } else {
                    self.tree.pin_violation(x, &ev.budgets)?
                };
                Ok(LayerOutput { z: ev.z, jacobian: ev.jacobian, violation, violation_grad })
            }
        }
    }

    /// Distance excess of the clamping approximation over the exact
    /// projection, for single-layer ApprOpt.
    pub fn projection_gap(&self, x: &[f64]) -> Option<f64> {
        if self.method != TrainMethod::AppOpt || !self.tree.is_flat() {
            return None;
        }
        let y = prescale(x, self.tree.bounds()).ok()?;
        projection_gap(&y, self.tree.bounds()).ok().map(|g| g.gap)
    }
}

/// Loss `-mean Q + lambda * mean nu` of the actor on a batch, and its
/// parameter gradient.
#[derive(Debug, Clone)]
pub struct ActorObjective {
    pub loss: f64,
    pub q_mean: f64,
    pub violation_mean: f64,
    pub grads: Option<ParamSet>,
}

/// Evaluates the actor objective for `params` on normalized `states`.
pub fn actor_objective(
    spec: &NetSpec,
    params: &ParamSet,
    map: &ActionMap,
    lambda: f64,
    states: &Matrix,
    critic: &dyn ActionValue,
    with_grad: bool,
) -> Result<ActorObjective> {
    let (x, tape) = forward(params, spec, states, None)?;
    let b = x.rows();
    let bf = b as f64;
    let outs: Vec<LayerOutput> =
        (0..b).map(|r| map.apply(x.row(r), with_grad && map.method.is_end_to_end())).collect::<Result<_>>()?;
    // CP scores the raw output, the others the layer output
    let actions: Vec<Vec<f64>> = match map.method {
        TrainMethod::Cp => (0..b).map(|r| x.row(r).to_vec()).collect(),
        _ => outs.iter().map(|o| o.z.clone()).collect(),
    };
    let (q, dq) = critic.q_and_grad(states, &actions)?;
    let penalized = map.method != TrainMethod::Cs;
    let q_mean = q.iter().sum::<f64>() / bf;
    let violation_mean = outs.iter().map(|o| o.violation).sum::<f64>() / bf;
    let loss = -q_mean + if penalized { lambda * violation_mean } else { 0.0 };
    let grads = if with_grad {
        let mut up = Matrix::zeros(b, x.cols());
        for (r, (o, g)) in outs.iter().zip(&dq).enumerate() {
            let neg: Vec<f64> = g.iter().map(|v| -v / bf).collect();
            let mut row = match &o.jacobian {
                Some(j) => j.vjp(&neg),
                None => neg,
            };
            if penalized {
                for (v, d) in row.iter_mut().zip(&o.violation_grad) {
                    *v += lambda * d / bf;
                }
            }
            up.row_mut(r).copy_from_slice(&row);
        }
        Some(backward(params, spec, &tape, &up)?.params)
    } else {
        None
    };
    Ok(ActorObjective { loss, q_mean, violation_mean, grads })
}

/// Scalars from one gradient step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub violation: f64,
    pub divergence: f64,
}

#[derive(Debug, Clone)]
pub struct Ddpg {
    cfg: TrainerConfig,
    map: ActionMap,
    bounds_tree: RegionTree,
    total: u32,
    pub actor: Mlp,
    pub actor_target: ParamSet,
    pub critic: Mlp,
    pub critic_target: ParamSet,
    actor_opt: AdamState,
    critic_opt: AdamState,
    pub obs_moments: RunningMoments,
    pub action_moments: RunningMoments,
    pub target_action_moments: RunningMoments,
    pub noise: AdaptiveNoise,
    exploration: Option<ParamSet>,
    rng: ChaCha8Rng,
    replay: ReplayBuffer,
}

/// Final activation of the actor for `method`. CS gets negative outputs so
/// its squash `exp(min(0, x))` never sits on the flat branch, where a unit
/// would stop receiving gradient for good.
pub fn actor_head(method: TrainMethod) -> OutputActivation {
    match method {
        TrainMethod::Cp => OutputActivation::TanhUnit,
        TrainMethod::Cs => OutputActivation::NegSoftplus,
        TrainMethod::AppOpt => OutputActivation::Linear,
    }
}

impl Ddpg {
    pub fn new(cfg: TrainerConfig, obs_dim: usize, constraints: &ConstraintSet, total: u32, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let map = ActionMap::new(cfg.method, &constraints.tree);
        let n = constraints.tree.n_entities();
        let mut actor_spec = NetSpec::mlp(obs_dim, &cfg.actor_hidden, map.raw_width(), actor_head(cfg.method));
        let mut critic_spec =
            NetSpec::mlp(obs_dim, &cfg.critic_hidden, 1, OutputActivation::Linear).with_side_input(1, n);
        actor_spec.activation = cfg.activation;
        critic_spec.activation = cfg.activation;
        if !cfg.layer_norm {
            actor_spec = actor_spec.without_layer_norm();
            critic_spec = critic_spec.without_layer_norm();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor_params = init_params(&actor_spec, rng.random())?;
        let critic_params = init_params(&critic_spec, rng.random())?;
        let noise_target = cfg.noise_target.unwrap_or(1.0 / total as f64);
        // one resource unit: finer differences vanish when rounding
        let action_std = 1.0 / total as f64;
        Ok(Ddpg {
            actor_opt: AdamState::new(&actor_params),
            critic_opt: AdamState::new(&critic_params),
            actor_target: actor_params.clone(),
            critic_target: critic_params.clone(),
            actor: Mlp { spec: actor_spec, params: actor_params },
            critic: Mlp { spec: critic_spec, params: critic_params },
            obs_moments: RunningMoments::new(obs_dim),
            action_moments: RunningMoments::with_min_std(n, action_std),
            target_action_moments: RunningMoments::with_min_std(n, action_std),
            noise: AdaptiveNoise::new(cfg.initial_sigma, noise_target, cfg.noise_adapt),
            exploration: None,
            replay: ReplayBuffer::new(cfg.replay_capacity),
            rng,
            bounds_tree: constraints.tree.clone(),
            total,
            map,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn action_map(&self) -> &ActionMap {
        &self.map
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.spec.input_width()
    }

    fn normalize_states<'a, I: IntoIterator<Item = &'a [f64]>>(&self, states: I) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = states
            .into_iter()
            .map(|s| self.obs_moments.normalize(s).into_iter().map(|v| v.clamp(-OBS_CLIP, OBS_CLIP)).collect())
            .collect();
        Ok(Matrix::from_rows(&rows)?)
    }

    /// Draws fresh perturbed actor parameters for an exploring episode, or
    /// clears them for an exploiting one.
    pub fn begin_episode(&mut self, explore: bool) -> Result<()> {
        self.exploration =
            if explore { Some(perturb_params(&self.actor.params, self.noise.sigma, self.rng.random())?) } else { None };
        Ok(())
    }

    /// Raw actor output for one (unnormalized) state.
    pub fn raw_action(&self, state: &[f64], explore: bool) -> Result<Vec<f64>> {
        let params = match (&self.exploration, explore) {
            (Some(p), true) => p,
            _ => &self.actor.params,
        };
        let s = self.normalize_states([state])?;
        Ok(forward(params, &self.actor.spec, &s, None)?.0.into_vec())
    }

    /// Continuous allocation, executed discrete action and the raw output.
    pub fn act(&self, state: &[f64], explore: bool) -> Result<(LayerOutput, DiscreteAllocation, Vec<f64>)> {
        let x = self.raw_action(state, explore)?;
        let out = self.map.apply(&x, false)?;
        let a = round_to_discrete_tree(&out.z, self.total, &self.bounds_tree)?;
        let report =
            check_feasibility(&a.normalize(), self.bounds_tree.bounds(), Some(&self.bounds_tree), FEASIBILITY_TOL)?;
        if !report.feasible {
            return Err(RlError::InfeasibleAction(format!("{:?}: {report:?}", a.counts())));
        }
        Ok((out, a, x))
    }

    /// Stores an executed transition; the action must be feasible.
    pub fn remember(&mut self, t: Transition) -> Result<()> {
        let report = check_feasibility(&t.action, self.bounds_tree.bounds(), Some(&self.bounds_tree), FEASIBILITY_TOL)?;
        if !report.feasible {
            return Err(RlError::InfeasibleAction(format!("{:?}", t.action)));
        }
        self.action_moments.update(&t.action)?;
        self.replay.push(t);
        Ok(())
    }

    pub fn observe_state(&mut self, state: &[f64]) -> Result<()> {
        self.obs_moments.update(state)?;
        Ok(())
    }

    fn target_actions(&self, next: &Matrix) -> Result<Vec<Vec<f64>>> {
        let (x, _) = forward(&self.actor_target, &self.actor.spec, next, None)?;
        (0..x.rows()).map(|r| Ok(self.map.apply(x.row(r), false)?.z)).collect()
    }

    /// One Adam step on the critic toward `r + gamma * Q'(s', mu'(s'))`.
    pub fn critic_update(&mut self, batch: &[&Transition]) -> Result<f64> {
        let s = self.normalize_states(batch.iter().map(|t| t.state.as_slice()))?;
        let s2 = self.normalize_states(batch.iter().map(|t| t.next_state.as_slice()))?;
        let next_actions = self.target_actions(&s2)?;
        let side2 = normalized_rows(&self.target_action_moments, &next_actions)?;
        let (q2, _) = forward(&self.critic_target, &self.critic.spec, &s2, Some(&side2))?;
        let actions: Vec<Vec<f64>> = batch.iter().map(|t| t.action.clone()).collect();
        let side = normalized_rows(&self.action_moments, &actions)?;
        let (q, tape) = self.critic.forward(&s, Some(&side))?;
        let b = batch.len() as f64;
        let mut loss = 0.0;
        let mut up = Matrix::zeros(batch.len(), 1);
        for (i, t) in batch.iter().enumerate() {
            let bootstrap = if t.terminal { 0.0 } else { self.cfg.gamma * q2.get(i, 0) };
            let err = q.get(i, 0) - (t.reward + bootstrap);
            loss += err * err / b;
            up.row_mut(i)[0] = 2.0 * err / b;
        }
        let mut grads = self.critic.backward(&tape, &up)?.params;
        grads.add_weight_decay(&self.critic.params, self.cfg.critic_l2, false)?;
        adam_step(&mut self.critic.params, &grads, &mut self.critic_opt, self.cfg.critic_lr)?;
        Ok(loss)
    }

    /// Actor objective under the current critic.
    pub fn actor_objective(&self, states: &[&[f64]], params: &ParamSet, with_grad: bool) -> Result<ActorObjective> {
        let s = self.normalize_states(states.iter().copied())?;
        let critic = NeuralCritic { net: &self.critic, moments: &self.action_moments };
        actor_objective(&self.actor.spec, params, &self.map, self.cfg.penalty_lambda, &s, &critic, with_grad)
    }

    /// One Adam step on the actor against `critic`; states are unnormalized.
    /// Returns the objective before the step.
    pub fn actor_update_with(&mut self, states: &[&[f64]], critic: &dyn ActionValue) -> Result<ActorObjective> {
        let s = self.normalize_states(states.iter().copied())?;
        let obj = actor_objective(
            &self.actor.spec,
            &self.actor.params,
            &self.map,
            self.cfg.penalty_lambda,
            &s,
            critic,
            true,
        )?;
        let grads = obj.grads.as_ref().expect("gradient requested");
        adam_step(&mut self.actor.params, grads, &mut self.actor_opt, self.cfg.actor_lr)?;
        Ok(obj)
    }

    /// Penalty-at-raw-output update (CP).
    pub fn actor_update_cp(&mut self, states: &[&[f64]]) -> Result<ActorObjective> {
        debug_assert_eq!(self.map.method, TrainMethod::Cp);
        self.actor_update_own_critic(states)
    }

    /// Update through the constraint layers (CS, ApprOpt).
    pub fn actor_update_endtoend(&mut self, states: &[&[f64]]) -> Result<ActorObjective> {
        debug_assert!(self.map.method.is_end_to_end());
        self.actor_update_own_critic(states)
    }

    fn actor_update_own_critic(&mut self, states: &[&[f64]]) -> Result<ActorObjective> {
        let s = self.normalize_states(states.iter().copied())?;
        let critic = NeuralCritic { net: &self.critic, moments: &self.action_moments };
        let obj = actor_objective(
            &self.actor.spec,
            &self.actor.params,
            &self.map,
            self.cfg.penalty_lambda,
            &s,
            &critic,
            true,
        )?;
        let grads = obj.grads.as_ref().expect("gradient requested");
        adam_step(&mut self.actor.params, grads, &mut self.actor_opt, self.cfg.actor_lr)?;
        Ok(obj)
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        let tau = self.cfg.tau;
        soft_update(&mut self.actor_target, &self.actor.params, tau)?;
        soft_update(&mut self.critic_target, &self.critic.params, tau)?;
        self.target_action_moments.soft_update(&self.action_moments, tau)?;
        Ok(())
    }

    /// Measures the action divergence a fresh perturbation causes on
    /// `states` and adapts the noise scale toward the target.
    pub fn adapt_noise(&mut self, states: &[&[f64]]) -> Result<f64> {
        let s = self.normalize_states(states.iter().copied())?;
        let perturbed = perturb_params(&self.actor.params, self.noise.sigma, self.rng.random())?;
        let (a, _) = forward(&self.actor.params, &self.actor.spec, &s, None)?;
        let (b, _) = forward(&perturbed, &self.actor.spec, &s, None)?;
        let za: Vec<Vec<f64>> = (0..a.rows()).map(|r| Ok(self.map.apply(a.row(r), false)?.z)).collect::<Result<_>>()?;
        let zb: Vec<Vec<f64>> = (0..b.rows()).map(|r| Ok(self.map.apply(b.row(r), false)?.z)).collect::<Result<_>>()?;
        let d = action_divergence(&za, &zb);
        self.noise.adapt(d);
        Ok(d)
    }

    /// Critic step, actor step, target updates and noise adaptation on one
    /// replay batch.
    pub fn train_step(&mut self) -> Result<StepStats> {
        let batch: Vec<Transition> = self.replay.sample(&mut self.rng, self.cfg.batch)?.into_iter().cloned().collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let critic_loss = self.critic_update(&refs)?;
        let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let obj = match self.map.method {
            TrainMethod::Cp => self.actor_update_cp(&states)?,
            _ => self.actor_update_endtoend(&states)?,
        };
        self.soft_update_targets()?;
        let divergence = self.adapt_noise(&states)?;
        Ok(StepStats { critic_loss, actor_loss: obj.loss, violation: obj.violation_mean, divergence })
    }

    pub fn snapshot(&self) -> AgentSnapshot {
        AgentSnapshot {
            config: self.cfg.clone(),
            total: self.total,
            actor_spec: self.actor.spec.clone(),
            actor: self.actor.params.clone(),
            actor_target: self.actor_target.clone(),
            critic_spec: self.critic.spec.clone(),
            critic: self.critic.params.clone(),
            critic_target: self.critic_target.clone(),
            obs_moments: self.obs_moments.clone(),
            action_moments: self.action_moments.clone(),
            target_action_moments: self.target_action_moments.clone(),
            noise: self.noise,
        }
    }

    /// Rebuilds an agent from a snapshot. Optimizer state and replay start
    /// empty.
    pub fn from_snapshot(snap: AgentSnapshot, constraints: &ConstraintSet, seed: u64) -> Result<Self> {
        let obs_dim = snap.actor_spec.input_width();
        let mut agent = Ddpg::new(snap.config.clone(), obs_dim, constraints, snap.total, seed)?;
        if snap.actor_spec != agent.actor.spec
            || snap.critic_spec != agent.critic.spec
            || !snap.actor.same_shape(&agent.actor.params)
            || !snap.critic.same_shape(&agent.critic.params)
        {
            return Err(RlError::Config("checkpoint does not match the environment's action layout".into()));
        }
        agent.actor.params = snap.actor;
        agent.actor_target = snap.actor_target;
        agent.critic.params = snap.critic;
        agent.critic_target = snap.critic_target;
        agent.obs_moments = snap.obs_moments;
        agent.action_moments = snap.action_moments;
        agent.target_action_moments = snap.target_action_moments;
        agent.noise = snap.noise;
        Ok(agent)
    }
}

/// Serializable networks and normalizers of a [`Ddpg`] agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub config: TrainerConfig,
    pub total: u32,
    pub actor_spec: NetSpec,
    pub actor: ParamSet,
    pub actor_target: ParamSet,
    pub critic_spec: NetSpec,
    pub critic: ParamSet,
    pub critic_target: ParamSet,
    pub obs_moments: RunningMoments,
    pub action_moments: RunningMoments,
    pub target_action_moments: RunningMoments,
    pub noise: AdaptiveNoise,
}
