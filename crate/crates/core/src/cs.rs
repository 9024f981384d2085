//! Constrained softmax: a closed-form, differentiable map from squashed actor
//! outputs onto `{z : sum z = budget, lower <= z <= upper}`.
//!
//! Lower bounds are handed out first; the remaining budget is split in
//! proportion to `y_k + eps_k`, where the offsets `eps` are chosen so that the
//! share of entity `k` reaches its (reduced) upper bound exactly when
//! `y_k = 1` and every other `y` vanishes. The construction only works when
//! every `eps_k >= 0`.

use crate::error::{AllocError, Result};
use crate::types::{check_finite, check_len, AllocationVector, BoundSpec, JacobianMatrix};

/// Inputs below this are clamped before exponentiation so `y` stays positive.
pub const SQUASH_FLOOR: f64 = -700.0;

/// Width of the band around `sum(reduced_upper) = 1` routed to the vertex case.
pub const VERTEX_BAND: f64 = 1e-9;

/// Offsets this close below zero are rounding noise and are set to zero.
const EPSILON_SLACK: f64 = 1e-12;

/// Free budget at or below this is treated as exactly zero.
const DEGENERATE_TOL: f64 = 1e-12;

/// `y_k = exp(min(0, x_k))`, so `0 < y_k <= 1`.
pub fn squash_outputs(x: &[f64]) -> Result<AllocationVector> {
    check_finite(x)?;
    Ok(AllocationVector::from_vec_unchecked(x.iter().map(|&v| v.clamp(SQUASH_FLOOR, 0.0).exp()).collect()))
}

/// Diagonal of the squash Jacobian. At the kink `x = 0` this takes the
/// left derivative 1, so outputs sitting exactly at zero can still move down.
pub fn squash_derivative(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v <= 0.0 && v > SQUASH_FLOOR { v.exp() } else { 0.0 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsMode {
    /// The proportional split.
    Regular,
    /// Reduced upper bounds sum to one: the only feasible point is `z = upper`.
    UpperVertex,
    /// Budget equals the sum of lower bounds: `z = lower`.
    Degenerate,
    /// A single entity receives the whole budget.
    Single,
}

/// Precomputed offsets for one bound configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CsContext {
    pub epsilon: Vec<f64>,
    pub reduced_upper: Vec<f64>,
    pub min_mass: f64,
    pub budget: f64,
    mode: CsMode,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// `upper - lower`, the width of each entity's interval.
    width: Vec<f64>,
}

impl CsContext {
    pub fn mode(&self) -> CsMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn free_budget(&self) -> f64 {
        self.budget - self.min_mass
    }
}

/// Computes the offsets for `bounds`, or reports the first negative one.
pub fn build_context(bounds: &BoundSpec) -> Result<CsContext> {
    let n = bounds.len();
    let min_mass = bounds.min_mass();
    let budget = bounds.budget();
    let free = budget - min_mass;
    let width: Vec<f64> = bounds.upper().iter().zip(bounds.lower()).map(|(u, l)| u - l).collect();
    let mut ctx = CsContext {
        epsilon: vec![0.0; n],
        reduced_upper: vec![0.0; n],
        min_mass,
        budget,
        mode: CsMode::Regular,
        lower: bounds.lower().to_vec(),
        upper: bounds.upper().to_vec(),
        width,
    };
    if n == 1 {
        ctx.mode = CsMode::Single;
        return Ok(ctx);
    }
    if free <= DEGENERATE_TOL * budget.max(1.0) {
        ctx.mode = CsMode::Degenerate;
        return Ok(ctx);
    }
    ctx.reduced_upper = ctx.width.iter().map(|w| w / free).collect();
    let total: f64 = ctx.reduced_upper.iter().sum();
    if (total - 1.0).abs() <= VERTEX_BAND {
        ctx.mode = CsMode::UpperVertex;
        return Ok(ctx);
    }
    let scale = (n - 1) as f64 / (total - 1.0);
    ctx.epsilon = ctx
        .reduced_upper
        .iter()
        .map(|r| {
            let e = r * scale - 1.0;
            if (-EPSILON_SLACK..0.0).contains(&e) {
                0.0
            } else {
                e
            }
        })
        .collect();
    if let Some((index, &epsilon)) = ctx.epsilon.iter().enumerate().find(|(_, e)| **e < 0.0) {
        return Err(AllocError::CsConditionViolated { index, epsilon, node: None });
    }
    Ok(ctx)
}

/// Feasible allocation `z_k = lower_k + free * (y_k + eps_k) / sum_i (y_i + eps_i)`.
pub fn cs_forward(y: &[f64], ctx: &CsContext) -> Result<AllocationVector> {
    check_len(ctx.len(), y.len())?;
    check_finite(y)?;
    let z = match ctx.mode {
        CsMode::Single => vec![ctx.budget],
        CsMode::Degenerate => ctx.lower.clone(),
        CsMode::UpperVertex => ctx.upper.clone(),
        CsMode::Regular => {
            let free = ctx.free_budget();
            let s: f64 = y.iter().zip(&ctx.epsilon).map(|(y, e)| y + e).sum();
            y.iter().zip(&ctx.epsilon).zip(&ctx.lower).map(|((y, e), l)| l + free * (y + e) / s).collect()
        }
    };
    Ok(AllocationVector::from_vec_unchecked(z))
}

/// Analytic partials of [`cs_forward`] with respect to `y` and to the budget.
///
/// The budget column differentiates through the offsets as well: with
/// `w = upper - lower`, `W = sum w` and `F = budget - sum lower`, the offsets
/// are `eps_k = w_k (n - 1) / (W - F) - 1`, so they move with the budget.
pub fn cs_jacobian(y: &[f64], ctx: &CsContext) -> Result<JacobianMatrix> {
    cs_jacobian_with_budget(y, ctx, &vec![false; y.len()])
}

/// Like [`cs_jacobian`], for bounds whose upper limits were capped at the
/// budget: entities flagged in `capped` have `upper = budget`, so their
/// widths grow one-for-one with it.
pub fn cs_jacobian_with_budget(y: &[f64], ctx: &CsContext, capped: &[bool]) -> Result<JacobianMatrix> {
    check_len(ctx.len(), y.len())?;
    check_len(ctx.len(), capped.len())?;
    let n = y.len();
    let c: Vec<f64> = capped.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    match ctx.mode {
        CsMode::Single => return Ok(JacobianMatrix::zeros(1, 1).with_budget_column(vec![1.0])),
        CsMode::UpperVertex => return Ok(JacobianMatrix::zeros(n, n).with_budget_column(c)),
        CsMode::Degenerate => {
            // One-sided derivative as the free budget grows from zero.
            let w_total: f64 = ctx.width.iter().sum();
            if w_total <= 0.0 {
                return Ok(JacobianMatrix::zeros(n, n).with_budget_column(vec![0.0; n]));
            }
            let a: Vec<f64> = (0..n).map(|k| y[k] + ctx.width[k] * (n - 1) as f64 / w_total - 1.0).collect();
            let s: f64 = a.iter().sum();
            let d_dc = a.iter().map(|v| v / s).collect();
            return Ok(JacobianMatrix::zeros(n, n).with_budget_column(d_dc));
        }
        CsMode::Regular => {}
    }
    let free = ctx.free_budget();
    let a: Vec<f64> = y.iter().zip(&ctx.epsilon).map(|(y, e)| y + e).collect();
    let s: f64 = a.iter().sum();
    let s2 = s * s;
    let mut jac = JacobianMatrix::zeros(n, n);
    for (k, &ak) in a.iter().enumerate() {
        for j in 0..n {
            let v = if k == j { free * (s - ak) / s2 } else { -free * ak / s2 };
            jac.set(k, j, v);
        }
    }
    let w_total: f64 = ctx.width.iter().sum();
    let c_total: f64 = c.iter().sum();
    let d = w_total - free;
    // d eps_i / d budget
    let e: Vec<f64> =
        ctx.width.iter().zip(&c).map(|(w, ci)| (n - 1) as f64 * (ci * d - w * (c_total - 1.0)) / (d * d)).collect();
    let e_total: f64 = e.iter().sum();
    let d_dc = (0..n).map(|k| a[k] / s + free * (e[k] * s - a[k] * e_total) / s2).collect();
    Ok(jac.with_budget_column(d_dc))
}

/// Squash followed by the constrained softmax, with the Jacobian taken with
/// respect to the raw outputs `x`.
pub fn cs_layer(x: &[f64], ctx: &CsContext) -> Result<(AllocationVector, JacobianMatrix)> {
    let y = squash_outputs(x)?;
    let z = cs_forward(&y, ctx)?;
    let mut jac = cs_jacobian(&y, ctx)?;
    let dy = squash_derivative(x);
    for k in 0..jac.rows() {
        for (j, d) in dy.iter().enumerate() {
            jac.set(k, j, jac.get(k, j) * d);
        }
    }
    Ok((z, jac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_jacobian, finite_diff_scalar};

    fn ctx(lower: &[f64], upper: &[f64], budget: f64) -> CsContext {
        build_context(&BoundSpec::new(lower.to_vec(), upper.to_vec(), budget).unwrap()).unwrap()
    }

    #[test]
    fn squash_values() {
        assert_eq!(squash_outputs(&[0.0, 0.0]).unwrap().as_slice(), &[1.0, 1.0]);
        let y = squash_outputs(&[-1.0, 5.0]).unwrap();
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((y[0] - 0.3679).abs() < 1e-4);
        assert_eq!(y[1], 1.0);
        let y = squash_outputs(&[-1e6, 0.0]).unwrap();
        assert!(y[0] > 0.0 && y[0] < 1e-300);
        assert!(squash_outputs(&[f64::NAN]).is_err());
    }

    #[test]
    fn reduced_bounds_and_offsets() {
        let c = ctx(&[0.1, 0.1, 0.1], &[0.4, 0.5, 0.6], 1.0);
        let want_ru = [3.0 / 7.0, 4.0 / 7.0, 5.0 / 7.0];
        let want_eps = [0.2, 0.6, 1.0];
        for k in 0..3 {
            assert!((c.reduced_upper[k] - want_ru[k]).abs() < 1e-12);
            assert!((c.epsilon[k] - want_eps[k]).abs() < 1e-12);
        }
        let c = ctx(&[0.0, 0.0], &[0.6, 0.6], 1.0);
        assert!((c.epsilon[0] - 2.0).abs() < 1e-12 && (c.epsilon[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn negative_offset_is_rejected() {
        let b = BoundSpec::new(vec![0.0; 3], vec![0.2, 0.9, 0.9], 1.0).unwrap();
        match build_context(&b) {
            Err(AllocError::CsConditionViolated { index, epsilon, .. }) => {
                assert_eq!(index, 0);
                assert!((epsilon + 0.6).abs() < 1e-12);
            }
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn forward_on_uniform_input() {
        let c = ctx(&[0.1, 0.1, 0.1], &[0.4, 0.5, 0.6], 1.0);
        let z = cs_forward(&[1.0, 1.0, 1.0], &c).unwrap();
        let want = [0.275, 0.1 + 0.7 * 1.6 / 4.8, 0.1 + 0.7 * 2.0 / 4.8];
        for k in 0..3 {
            assert!((z[k] - want[k]).abs() < 1e-12, "{k}: {} vs {}", z[k], want[k]);
        }
        assert!((z[1] - 0.33333).abs() < 1e-5 && (z[2] - 0.39167).abs() < 1e-5);
        assert!((z.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vertex_attains_upper_bound() {
        let c = ctx(&[0.0, 0.0], &[0.6, 0.6], 1.0);
        let z = cs_forward(&[1.0, 1e-12], &c).unwrap();
        assert!((z[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn upper_bounds_summing_to_budget() {
        let c = ctx(&[0.0, 0.0], &[0.3, 0.7], 1.0);
        assert_eq!(c.mode(), CsMode::UpperVertex);
        for y in [[1.0, 1.0], [0.2, 0.9], [1e-9, 1.0]] {
            assert_eq!(cs_forward(&y, &c).unwrap().as_slice(), &[0.3, 0.7]);
            let j = cs_jacobian(&y, &c).unwrap();
            assert!(j.as_slice().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn degenerate_budget_pins_lower_bounds() {
        let c = ctx(&[0.5, 0.5], &[0.6, 0.7], 1.0);
        assert_eq!(c.mode(), CsMode::Degenerate);
        assert_eq!(cs_forward(&[0.3, 1.0], &c).unwrap().as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = ctx(&[0.0, 0.0], &[0.6, 0.6], 1.0);
        let y = [1.0, 1.0];
        let j = cs_jacobian(&y, &c).unwrap();
        // S = 6: diagonal (S - a_k)/S^2 = 3/36, off-diagonal -a_k/S^2 = -3/36.
        assert!((j.get(0, 0) - 3.0 / 36.0).abs() < 1e-12);
        assert!((j.get(0, 1) + 3.0 / 36.0).abs() < 1e-12);
        let fd = finite_diff_jacobian(|y| cs_forward(y, &c).map(|z| z.into_inner()), &y, 1e-6).unwrap();
        assert!(j.max_rel_error(&fd) < 1e-6);
    }

    #[test]
    fn budget_column_matches_finite_differences() {
        let lower = [0.05, 0.1, 0.0, 0.15];
        let upper = [0.4, 0.45, 0.4, 0.55];
        let y = [0.3, 0.8, 0.5, 0.1];
        let c = ctx(&lower, &upper, 1.0);
        let j = cs_jacobian(&y, &c).unwrap();
        let fd = finite_diff_scalar(
            |b| {
                let c = build_context(&BoundSpec::new(lower.to_vec(), upper.to_vec(), b)?)?;
                cs_forward(&y, &c).map(|z| z.into_inner())
            },
            1.0,
            1e-6,
        )
        .unwrap();
        for (a, f) in j.d_dc().unwrap().iter().zip(&fd) {
            assert!((a - f).abs() < 1e-6, "{a} vs {f}");
        }
        // Budget derivatives of a sum-preserving layer add up to one.
        assert!((j.d_dc().unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_chains_squash() {
        let c = ctx(&[0.1, 0.0, 0.05], &[0.5, 0.6, 0.7], 1.0);
        let x = [-0.4, 0.3, -1.2];
        let (_, j) = cs_layer(&x, &c).unwrap();
        let fd = finite_diff_jacobian(|x| cs_layer(x, &c).map(|(z, _)| z.into_inner()), &x, 1e-6).unwrap();
        assert!(j.max_rel_error(&fd) < 1e-6);
    }

    #[test]
    fn dimension_mismatch() {
        let c = ctx(&[0.0, 0.0], &[0.6, 0.6], 1.0);
        assert!(cs_forward(&[1.0], &c).is_err());
    }
}
