//! Approximate projection onto the bounded simplex by iterative clamping.
//!
//! The unconstrained solution `z = y + (budget - sum y) / n` is computed, then
//! outputs below their lower bound are clamped (LOWER phase) and the remaining
//! budget is redistributed over the unclamped outputs, repeating until nothing
//! new is clamped; the UPPER phase does the same for upper bounds. Clamped
//! outputs stay clamped. The Jacobian falls out of the final unclamped set.
//!
//! Invariants checked on every call (violations surface as
//! [`AllocError::InternalAssertion`]):
//! - at least one output stays unclamped after every pass;
//! - after every LOWER pass the remaining budget fits under the remaining
//!   upper bounds;
//! - the result is feasible.

use crate::error::{AllocError, Require, Result};
use crate::types::{check_finite, check_len, AllocationVector, BoundSpec, JacobianMatrix};

/// Slack for the post-hoc feasibility assertion and for the feasible-input
/// and boundary-budget short-circuits.
const ASSERT_TOL: f64 = 1e-9;
const SHORTCUT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Lower,
    Upper,
    Done,
}

/// Record of one projection, kept only when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct ClampTrace {
    pub unclamped: Vec<usize>,
    pub n_unclamped: usize,
    pub remaining_budget: f64,
    /// Phase of each pass and the indices it clamped.
    pub phase_log: Vec<(Phase, Vec<usize>)>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AppOptOptions {
    pub trace: bool,
}

#[derive(Debug, Clone)]
pub struct AppOptOutput {
    pub z: AllocationVector,
    /// `d_dy` plus the budget column.
    pub jacobian: JacobianMatrix,
    /// Number of passes of the clamping loop.
    pub iterations: usize,
    pub trace: Option<ClampTrace>,
}

/// Maps arbitrary actor outputs into the entity bounds by min-max scaling,
/// but only when some output is out of bounds.
pub fn prescale(x: &[f64], bounds: &BoundSpec) -> Result<AllocationVector> {
    Ok(prescale_with_jacobian(x, bounds)?.0)
}

/// `dy_k / d upper_k` for [`prescale`] (each output depends only on its own
/// upper bound).
pub fn prescale_upper_sensitivity(x: &[f64], bounds: &BoundSpec) -> Vec<f64> {
    let (lo, hi) = (bounds.lower(), bounds.upper());
    if x.iter().enumerate().all(|(k, &v)| lo[k] <= v && v <= hi[k]) {
        return vec![0.0; x.len()];
    }
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= 0.0 {
        return vec![0.5; x.len()];
    }
    x.iter().map(|v| (v - min) / (max - min)).collect()
}

/// [`prescale`] together with `dy/dx`.
pub fn prescale_with_jacobian(x: &[f64], bounds: &BoundSpec) -> Result<(AllocationVector, JacobianMatrix)> {
    check_len(bounds.len(), x.len())?;
    check_finite(x)?;
    let (lo, hi) = (bounds.lower(), bounds.upper());
    let n = x.len();
    let in_bounds = x.iter().enumerate().all(|(k, &v)| lo[k] <= v && v <= hi[k]);
    if in_bounds {
        return Ok((AllocationVector::from_vec_unchecked(x.to_vec()), JacobianMatrix::identity(n)));
    }
    let (mut imin, mut imax) = (0, 0);
    for k in 1..n {
        if x[k] < x[imin] {
            imin = k;
        }
        if x[k] > x[imax] {
            imax = k;
        }
    }
    let range = x[imax] - x[imin];
    if range <= 0.0 {
        let mid = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
        return Ok((AllocationVector::from_vec_unchecked(mid), JacobianMatrix::zeros(n, n)));
    }
    let mut y = Vec::with_capacity(n);
    let mut jac = JacobianMatrix::zeros(n, n);
    for k in 0..n {
        let w = hi[k] - lo[k];
        let t = (x[k] - x[imin]) / range;
        // Clamp so rounding in `lo + w * 1.0` cannot step outside the bounds.
        y.push((lo[k] + w * t).clamp(lo[k], hi[k]));
        let s = w / range;
        jac.set(k, k, jac.get(k, k) + s);
        jac.set(k, imin, jac.get(k, imin) - s + s * t);
        jac.set(k, imax, jac.get(k, imax) - s * t);
    }
    Ok((AllocationVector::from_vec_unchecked(y), jac))
}

fn precondition(require: Require, detail: String) -> AllocError {
    AllocError::Precondition { require, detail }
}

/// Projects `y` (already within the entity bounds) onto the set with
/// `sum z = budget`.
pub fn appropt_forward(y: &[f64], bounds: &BoundSpec, opts: AppOptOptions) -> Result<AppOptOutput> {
    let n = bounds.len();
    check_len(n, y.len())?;
    check_finite(y)?;
    if n < 2 {
        return Err(precondition(Require::AtLeastTwoEntities, format!("n = {n}")));
    }
    let (lo, hi) = (bounds.lower(), bounds.upper());
    if let Some(k) = (0..n).find(|&k| !(lo[k] <= y[k] && y[k] <= hi[k])) {
        return Err(precondition(
            Require::InputWithinBounds,
            format!("y[{k}] = {} outside [{}, {}]", y[k], lo[k], hi[k]),
        ));
    }
    let budget = bounds.budget();
    let tol = SHORTCUT_TOL * budget.max(1.0);
    let mut jac = JacobianMatrix::zeros(n, n);

    // Fixed entities (lower == upper) are assigned up front.
    let free: Vec<usize> = (0..n).filter(|&k| lo[k] < hi[k]).collect();
    let fixed_mass: f64 = (0..n).filter(|&k| lo[k] >= hi[k]).map(|k| lo[k]).sum();
    let budget_free = budget - fixed_mass;
    let lo_free: f64 = free.iter().map(|&k| lo[k]).sum();
    let hi_free: f64 = free.iter().map(|&k| hi[k]).sum();

    if lo_free > budget_free + tol || hi_free < budget_free - tol {
        return Err(precondition(
            Require::BudgetStrictlyInside,
            format!("sum(lower) = {lo_free}, budget = {budget_free}, sum(upper) = {hi_free}"),
        ));
    }
    let pinned = if free.is_empty() || budget_free - lo_free <= tol {
        Some(lo)
    } else if hi_free - budget_free <= tol {
        Some(hi)
    } else {
        None
    };
    if let Some(target) = pinned {
        let z: Vec<f64> = (0..n).map(|k| if lo[k] >= hi[k] { lo[k] } else { target[k] }).collect();
        let trace = opts.trace.then(|| ClampTrace {
            unclamped: Vec::new(),
            n_unclamped: 0,
            remaining_budget: 0.0,
            phase_log: Vec::new(),
        });
        return Ok(AppOptOutput {
            z: AllocationVector::from_vec_unchecked(z),
            jacobian: jac.with_budget_column(vec![0.0; n]),
            iterations: 0,
            trace,
        });
    }

    let mut z = y.to_vec();
    let y_sum_free: f64 = free.iter().map(|&k| y[k]).sum();
    // Fixed entities already hold y_k = lower_k, so only the sum is in question.
    let feasible_input = (y_sum_free - budget_free).abs() <= tol;

    let mut omega = free.clone();
    let mut remaining = budget_free;
    let mut iterations = 0;
    let mut phase_log = Vec::new();

    if !feasible_input {
        let mut phase = Phase::Lower;
        while phase != Phase::Done {
            iterations += 1;
            if iterations > n + 2 {
                return Err(AllocError::InternalAssertion(format!("clamping loop exceeded {} passes", n + 2)));
            }
            let n_cur = omega.len() as f64;
            let y_sum: f64 = omega.iter().map(|&k| y[k]).sum();
            let shift = (remaining - y_sum) / n_cur;
            let mut clamped = Vec::new();
            for &k in &omega {
                let v = y[k] + shift;
                if phase == Phase::Lower && v < lo[k] {
                    z[k] = lo[k];
                    clamped.push(k);
                } else if phase == Phase::Upper && v > hi[k] {
                    z[k] = hi[k];
                    clamped.push(k);
                } else {
                    z[k] = v;
                }
            }
            if clamped.len() == omega.len() {
                return Err(AllocError::InternalAssertion(format!("{phase:?} pass clamped every remaining output")));
            }
            remaining -= clamped.iter().map(|&k| z[k]).sum::<f64>();
            omega.retain(|k| !clamped.contains(k));
            if phase == Phase::Lower {
                let room: f64 = omega.iter().map(|&k| hi[k]).sum();
                if remaining > room + ASSERT_TOL {
                    return Err(AllocError::InternalAssertion(format!(
                        "remaining budget {remaining} exceeds remaining upper bounds {room}"
                    )));
                }
            }
            let advance = clamped.is_empty();
            if opts.trace {
                phase_log.push((phase, clamped));
            }
            if advance {
                phase = if phase == Phase::Lower { Phase::Upper } else { Phase::Done };
            }
        }
        if let Some(k) = (0..n).find(|&k| z[k] < lo[k] - ASSERT_TOL || z[k] > hi[k] + ASSERT_TOL) {
            return Err(AllocError::InternalAssertion(format!(
                "output {k} = {} left its bounds [{}, {}]",
                z[k], lo[k], hi[k]
            )));
        }
        let total: f64 = z.iter().sum();
        if (total - budget).abs() > ASSERT_TOL {
            return Err(AllocError::InternalAssertion(format!("outputs sum to {total}, budget {budget}")));
        }
    }

    let inv = 1.0 / omega.len() as f64;
    for &k in &omega {
        for &j in &omega {
            jac.set(k, j, if k == j { 1.0 - inv } else { -inv });
        }
    }
    let mut d_dc = vec![0.0; n];
    for &k in &omega {
        d_dc[k] = inv;
    }
    let trace = opts.trace.then(|| ClampTrace {
        n_unclamped: omega.len(),
        unclamped: omega.clone(),
        remaining_budget: remaining,
        phase_log,
    });
    Ok(AppOptOutput {
        z: AllocationVector::from_vec_unchecked(z),
        jacobian: jac.with_budget_column(d_dc),
        iterations,
        trace,
    })
}

/// Prescale followed by the clamping projection, with the Jacobian taken with
/// respect to the raw outputs `x`. The budget column is carried through.
pub fn appropt_layer(x: &[f64], bounds: &BoundSpec) -> Result<(AllocationVector, JacobianMatrix)> {
    let (y, dy) = prescale_with_jacobian(x, bounds)?;
    let out = appropt_forward(&y, bounds, AppOptOptions::default())?;
    let d_dc = out.jacobian.d_dc().map(<[f64]>::to_vec).unwrap_or_default();
    let jac = out.jacobian.matmul(&dy).with_budget_column(d_dc);
    Ok((out.z, jac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_jacobian;

    fn bounds(lower: &[f64], upper: &[f64], budget: f64) -> BoundSpec {
        BoundSpec::new(lower.to_vec(), upper.to_vec(), budget).unwrap()
    }

    fn traced(y: &[f64], b: &BoundSpec) -> AppOptOutput {
        appropt_forward(y, b, AppOptOptions { trace: true }).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn prescale_examples() {
        let b = bounds(&[0.0; 3], &[1.0; 3], 1.0);
        assert_close(&prescale(&[-2.0, 0.0, 4.0], &b).unwrap(), &[0.0, 1.0 / 3.0, 1.0], 1e-15);
        let b = bounds(&[0.0; 2], &[1.0; 2], 1.0);
        assert_eq!(prescale(&[0.2, 0.3], &b).unwrap().as_slice(), &[0.2, 0.3]);
        let b = bounds(&[0.0, 0.2], &[1.0, 0.8], 1.0);
        assert_eq!(prescale(&[5.0, 5.0], &b).unwrap().as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn prescale_jacobian_matches_finite_differences() {
        let b = bounds(&[0.0, 0.1, 0.05, 0.0], &[0.6, 0.5, 0.7, 0.4], 1.0);
        let x = [-1.3, 0.4, 2.2, 0.9];
        let (_, j) = prescale_with_jacobian(&x, &b).unwrap();
        let fd = finite_diff_jacobian(|x| prescale(x, &b).map(|y| y.into_inner()), &x, 1e-6).unwrap();
        assert!(j.max_rel_error(&fd) < 1e-6);
    }

    #[test]
    fn lower_clamp_then_redistribute() {
        let b = bounds(&[0.2, 0.0, 0.0], &[1.0; 3], 1.0);
        let out = traced(&[0.2, 0.6, 0.6], &b);
        assert_close(&out.z, &[0.2, 0.4, 0.4], 1e-12);
        let want = [0.0, 0.0, 0.0, 0.0, 0.5, -0.5, 0.0, -0.5, 0.5];
        assert_close(out.jacobian.as_slice(), &want, 1e-15);
        assert_close(out.jacobian.d_dc().unwrap(), &[0.0, 0.5, 0.5], 1e-15);
        let trace = out.trace.unwrap();
        assert_eq!(trace.phase_log[0], (Phase::Lower, vec![0]));
        assert_eq!(trace.n_unclamped, 2);
    }

    #[test]
    fn upper_clamp_leaves_single_output() {
        let b = bounds(&[0.0; 3], &[0.5, 0.4, 1.0], 1.0);
        let out = traced(&[0.5, 0.4, 0.0], &b);
        assert_close(&out.z, &[0.5, 0.4, 0.1], 1e-12);
        assert!(out.jacobian.as_slice().iter().all(|v| *v == 0.0));
        assert_eq!(out.jacobian.d_dc().unwrap(), &[0.0, 0.0, 1.0]);
        let trace = out.trace.unwrap();
        let phases: Vec<Phase> = trace.phase_log.iter().map(|(p, _)| *p).collect();
        assert_eq!(phases, vec![Phase::Lower, Phase::Upper, Phase::Upper]);
        assert_eq!(trace.phase_log[1].1, vec![0, 1]);
    }

    #[test]
    fn feasible_input_is_returned_unchanged() {
        let b = bounds(&[0.0; 3], &[1.0; 3], 1.0);
        let y = [0.25, 0.25, 0.5];
        let out = traced(&y, &b);
        assert_eq!(out.z.as_slice(), &y);
        for k in 0..3 {
            for j in 0..3 {
                let want = if k == j { 2.0 / 3.0 } else { -1.0 / 3.0 };
                assert!((out.jacobian.get(k, j) - want).abs() < 1e-15);
            }
        }
        assert_close(out.jacobian.d_dc().unwrap(), &[1.0 / 3.0; 3], 1e-15);
    }

    #[test]
    fn no_clamping_jacobian_matches_finite_differences() {
        let b = bounds(&[0.0; 4], &[1.0; 4], 1.0);
        let y = [0.1, 0.3, 0.2, 0.25];
        let fd = finite_diff_jacobian(
            |y| appropt_forward(y, &b, AppOptOptions::default()).map(|o| o.z.into_inner()),
            &y,
            1e-6,
        )
        .unwrap();
        for k in 0..4 {
            for j in 0..4 {
                let want = if k == j { 0.75 } else { -0.25 };
                assert!((fd.get(k, j) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fixed_entities_are_removed() {
        let b = bounds(&[0.2, 0.0, 0.0], &[0.2, 1.0, 1.0], 1.0);
        let out = appropt_forward(&[0.2, 0.9, 0.7], &b, AppOptOptions::default()).unwrap();
        assert_close(&out.z, &[0.2, 0.5, 0.3], 1e-12);
        assert_eq!(out.jacobian.row(0), &[0.0, 0.0, 0.0]);
        assert_eq!(out.jacobian.d_dc().unwrap()[0], 0.0);
    }

    #[test]
    fn boundary_budgets_short_circuit() {
        let b = bounds(&[0.5, 0.5], &[0.7, 0.9], 1.0);
        let out = appropt_forward(&[0.6, 0.8], &b, AppOptOptions::default()).unwrap();
        assert_eq!(out.z.as_slice(), &[0.5, 0.5]);
        let b = bounds(&[0.0, 0.0], &[0.3, 0.7], 1.0);
        let out = appropt_forward(&[0.1, 0.1], &b, AppOptOptions::default()).unwrap();
        assert_eq!(out.z.as_slice(), &[0.3, 0.7]);
        assert!(out.jacobian.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn precondition_errors_name_the_requirement() {
        let b = bounds(&[0.0; 2], &[1.0; 2], 1.0);
        match appropt_forward(&[1.2, 0.0], &b, AppOptOptions::default()) {
            Err(AllocError::Precondition { require, .. }) => assert_eq!(require, Require::InputWithinBounds),
            other => panic!("{other:?}"),
        }
        let b = bounds(&[0.0], &[1.0], 1.0);
        match appropt_forward(&[0.5], &b, AppOptOptions::default()) {
            Err(AllocError::Precondition { require, .. }) => assert_eq!(require, Require::AtLeastTwoEntities),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn layer_jacobian_chains_prescale() {
        let b = bounds(&[0.05, 0.0, 0.1], &[0.6, 0.5, 0.7], 1.0);
        let x = [-0.8, 1.7, 0.2];
        let (_, j) = appropt_layer(&x, &b).unwrap();
        let fd = finite_diff_jacobian(|x| appropt_layer(x, &b).map(|(z, _)| z.into_inner()), &x, 1e-7).unwrap();
        assert!(j.max_rel_error(&fd) < 1e-5, "{j:?} vs {fd:?}");
    }
}
