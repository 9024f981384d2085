//! Central finite differences, the reference every analytic Jacobian in the
//! workspace is checked against.

use crate::error::{AllocError, Result};
use crate::types::JacobianMatrix;

pub const DEFAULT_STEP: f64 = 1e-6;

/// Central-difference Jacobian of `f` at `y`: column `j` is
/// `(f(y + h e_j) - f(y - h e_j)) / 2h`.
pub fn finite_diff_jacobian<F, E>(mut f: F, y: &[f64], step: f64) -> Result<JacobianMatrix>
where
    F: FnMut(&[f64]) -> std::result::Result<Vec<f64>, E>,
    E: std::fmt::Display,
{
    if step.is_nan() || step <= 0.0 {
        return Err(AllocError::Evaluation(format!("step must be positive, got {step}")));
    }
    let eval = |f: &mut F, p: &[f64]| f(p).map_err(|e| AllocError::Evaluation(e.to_string()));
    let rows = eval(&mut f, y)?.len();
    let cols = y.len();
    let mut jac = JacobianMatrix::zeros(rows, cols);
    let mut p = y.to_vec();
    for j in 0..cols {
        p[j] = y[j] + step;
        let plus = eval(&mut f, &p)?;
        p[j] = y[j] - step;
        let minus = eval(&mut f, &p)?;
        p[j] = y[j];
        if plus.len() != rows || minus.len() != rows {
            return Err(AllocError::Evaluation("output length changed under perturbation".into()));
        }
        for k in 0..rows {
            jac.set(k, j, (plus[k] - minus[k]) / (2.0 * step));
        }
    }
    Ok(jac)
}

/// Central difference of a vector function of one scalar.
pub fn finite_diff_scalar<F, E>(mut f: F, x: f64, step: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> std::result::Result<Vec<f64>, E>,
    E: std::fmt::Display,
{
    let plus = f(x + step).map_err(|e| AllocError::Evaluation(e.to_string()))?;
    let minus = f(x - step).map_err(|e| AllocError::Evaluation(e.to_string()))?;
    Ok(plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * step)).collect())
}

/// Analytic entries may jump by this much inside the stencil before the
/// sample is treated as straddling a kink.
pub const KINK_JUMP: f64 = 1e-3;

/// Outcome of one guarded comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradCheck {
    /// Largest relative discrepancy between analytic and finite differences.
    Compared(f64),
    /// The analytic Jacobian changes within the stencil, so central
    /// differences straddle a kink and say nothing.
    Kink,
}

/// Compares the analytic Jacobian of `f` at `y` with central differences,
/// skipping samples where the analytic Jacobian itself is not constant over
/// the stencil `y +- step e_j`.
pub fn guarded_check<F>(mut f: F, y: &[f64], step: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<(Vec<f64>, JacobianMatrix)>,
{
    let (_, analytic) = f(y)?;
    let mut p = y.to_vec();
    for j in 0..y.len() {
        for sign in [1.0, -1.0] {
            p[j] = y[j] + sign * step;
            let (_, near) = f(&p)?;
            let jump = near.as_slice().iter().zip(analytic.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if jump > KINK_JUMP {
                return Ok(GradCheck::Kink);
            }
        }
        p[j] = y[j];
    }
    let fd = finite_diff_jacobian(|v| f(v).map(|(z, _)| z), y, step)?;
    Ok(GradCheck::Compared(analytic.max_rel_error(&fd)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    #[test]
    fn identity_map() {
        let j = finite_diff_jacobian(|y| Ok::<_, Infallible>(y.to_vec()), &[0.3, 0.7], DEFAULT_STEP).unwrap();
        assert!(j.max_rel_error(&JacobianMatrix::identity(2)) < 1e-10);
    }

    #[test]
    fn softmax_at_symmetric_point() {
        let softmax = |y: &[f64]| {
            let e: Vec<f64> = y.iter().map(|v| v.exp()).collect();
            let s: f64 = e.iter().sum();
            Ok::<_, Infallible>(e.iter().map(|v| v / s).collect::<Vec<_>>())
        };
        let j = finite_diff_jacobian(softmax, &[0.0, 0.0], DEFAULT_STEP).unwrap();
        let want = JacobianMatrix::from_rows(2, 2, vec![0.25, -0.25, -0.25, 0.25]);
        for k in 0..2 {
            for m in 0..2 {
                assert!((j.get(k, m) - want.get(k, m)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn linear_map_is_recovered() {
        let a = [[1.0, -2.0, 0.5], [0.25, 3.0, -1.0]];
        let f = |y: &[f64]| {
            Ok::<_, Infallible>(a.iter().map(|r| r.iter().zip(y).map(|(p, q)| p * q).sum()).collect::<Vec<f64>>())
        };
        let j = finite_diff_jacobian(f, &[0.1, 0.2, 0.3], 1e-3).unwrap();
        for (k, row) in a.iter().enumerate() {
            for (m, &v) in row.iter().enumerate() {
                assert!((j.get(k, m) - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn failure_is_reported() {
        let f = |y: &[f64]| if y[0] > 0.5 { Err("out of domain") } else { Ok(y.to_vec()) };
        assert!(finite_diff_jacobian(f, &[0.5], 1e-3).is_err());
        assert!(finite_diff_jacobian(|y: &[f64]| Ok::<_, Infallible>(y.to_vec()), &[0.5], 0.0).is_err());
    }

    #[test]
    fn guard_flags_kinks() {
        let relu = |y: &[f64]| -> Result<(Vec<f64>, JacobianMatrix)> {
            let d = if y[0] > 0.0 { 1.0 } else { 0.0 };
            Ok((vec![y[0].max(0.0)], JacobianMatrix::from_rows(1, 1, vec![d])))
        };
        assert_eq!(guarded_check(relu, &[1e-8], 1e-6).unwrap(), GradCheck::Kink);
        match guarded_check(relu, &[0.5], 1e-6).unwrap() {
            GradCheck::Compared(e) => assert!(e < 1e-9),
            GradCheck::Kink => panic!("smooth point flagged"),
        }
    }
}
