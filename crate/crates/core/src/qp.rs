//! Exact Euclidean projection onto the capped simplex, the constraint
//! violation cost used by penalty-based training, and the nested projection
//! that makes raw actor outputs executable.

use std::io::Write;

use serde::Serialize;

use crate::appropt::{appropt_forward, AppOptOptions};
use crate::error::{AllocError, Result};
use crate::region::{signum0, RegionTree};
use crate::types::{check_finite, check_len, AllocationVector, BoundSpec};

const BISECT_TOL: f64 = 1e-12;
const POLISH_SLACK: f64 = 1e-10;

/// Multipliers certifying optimality of an exact projection for
/// `min ||z - y||^2  s.t.  sum z = budget, lower <= z <= upper`.
///
/// The Lagrangian is `||z - y||^2 + lambda (sum z - budget)
/// + alpha . (z - upper) + beta . (lower - z)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktCertificate {
    pub lambda: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Worst violation of each KKT condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub complementarity: f64,
    pub primal: f64,
    /// Most negative multiplier, as a positive number (0 if none).
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.complementarity).max(self.primal).max(self.dual)
    }
}

fn clamp_shift(y: &[f64], b: &BoundSpec, shift: f64) -> Vec<f64> {
    y.iter().zip(b.lower().iter().zip(b.upper())).map(|(&v, (&l, &u))| (v + shift).clamp(l, u)).collect()
}

/// Exact projection: `z_k = clamp(y_k + t, lower_k, upper_k)` with the shift
/// `t` found by bisection and then solved exactly on the detected active set.
pub fn exact_project(y: &[f64], bounds: &BoundSpec) -> Result<(AllocationVector, KktCertificate)> {
    let n = bounds.len();
    check_len(n, y.len())?;
    check_finite(y)?;
    let (lo, hi) = (bounds.lower(), bounds.upper());
    let budget = bounds.budget();
    let within = (0..n).all(|k| lo[k] <= y[k] && y[k] <= hi[k]);
    let sum: f64 = y.iter().sum();
    let shift = if within && (sum - budget).abs() <= BISECT_TOL * budget.max(1.0) {
        0.0
    } else {
        let g = |t: f64| -> f64 { clamp_shift(y, bounds, t).iter().sum() };
        let mut a = (0..n).map(|k| lo[k] - y[k]).fold(f64::INFINITY, f64::min);
        let mut b = (0..n).map(|k| hi[k] - y[k]).fold(f64::NEG_INFINITY, f64::max);
        while b - a > BISECT_TOL {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if g(mid) < budget {
                a = mid;
            } else {
                b = mid;
            }
        }
        polish(y, bounds, 0.5 * (a + b))
    };
    let z = clamp_shift(y, bounds, shift);
    let cert = certificate(y, bounds, &z, shift);
    Ok((AllocationVector::from_vec_unchecked(z), cert))
}

/// Solves for the shift exactly on the active set seen at `t`, keeping `t`
/// if the solved shift does not reproduce that active set.
fn polish(y: &[f64], b: &BoundSpec, t: f64) -> f64 {
    let (lo, hi) = (b.lower(), b.upper());
    let mut fixed_mass = 0.0;
    let mut free = Vec::new();
    for k in 0..y.len() {
        let v = y[k] + t;
        if v <= lo[k] {
            fixed_mass += lo[k];
        } else if v >= hi[k] {
            fixed_mass += hi[k];
        } else {
            free.push(k);
        }
    }
    if free.is_empty() {
        return t;
    }
    let free_y: f64 = free.iter().map(|&k| y[k]).sum();
    let solved = (b.budget() - fixed_mass - free_y) / free.len() as f64;
    let consistent = (0..y.len()).all(|k| {
        let (v, w) = (y[k] + t, y[k] + solved);
        if v <= lo[k] {
            w <= lo[k] + POLISH_SLACK
        } else if v >= hi[k] {
            w >= hi[k] - POLISH_SLACK
        } else {
            w >= lo[k] - POLISH_SLACK && w <= hi[k] + POLISH_SLACK
        }
    });
    if consistent {
        solved
    } else {
        t
    }
}

fn certificate(y: &[f64], b: &BoundSpec, z: &[f64], shift: f64) -> KktCertificate {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    for k in 0..n {
        // alpha_k - beta_k = 2 (y_k + t - z_k) from stationarity
        let r = 2.0 * (y[k] + shift - z[k]);
        if z[k] >= b.upper()[k] && r > 0.0 {
            alpha[k] = r;
        } else if z[k] <= b.lower()[k] && r < 0.0 {
            beta[k] = -r;
        }
    }
    KktCertificate { lambda: -2.0 * shift, alpha, beta }
}

/// Recomputes every KKT residual of `(z, cert)` for the projection of `y`.
pub fn verify_kkt(y: &[f64], bounds: &BoundSpec, z: &[f64], cert: &KktCertificate) -> Result<KktResiduals> {
    let n = bounds.len();
    check_len(n, y.len())?;
    check_len(n, z.len())?;
    check_len(n, cert.alpha.len())?;
    check_len(n, cert.beta.len())?;
    let (lo, hi) = (bounds.lower(), bounds.upper());
    let mut res = KktResiduals {
        stationarity: 0.0,
        complementarity: 0.0,
        primal: (z.iter().sum::<f64>() - bounds.budget()).abs(),
        dual: 0.0,
    };
    for k in 0..n {
        let (a, b) = (cert.alpha[k], cert.beta[k]);
        let stat = 2.0 * (z[k] - y[k]) + cert.lambda + a - b;
        res.stationarity = res.stationarity.max(stat.abs());
        res.complementarity = res.complementarity.max((a * (z[k] - hi[k])).abs()).max((b * (lo[k] - z[k])).abs());
        res.primal = res.primal.max(lo[k] - z[k]).max(z[k] - hi[k]);
        res.dual = res.dual.max(-a).max(-b);
    }
    Ok(res)
}

/// `nu(a) = |budget - sum a| + sum_G max(0, lower_G - a_G) + sum_G max(0, a_G - upper_G)`
/// over every non-root region and every single entity, with its subgradient
/// (zero at kinks).
pub fn violation_cost(a: &[f64], tree: &RegionTree) -> Result<(f64, Vec<f64>)> {
    let bounds = tree.bounds();
    check_len(bounds.len(), a.len())?;
    check_finite(a)?;
    let mut grad = vec![0.0; a.len()];
    let total: f64 = a.iter().sum();
    let mut cost = (bounds.budget() - total).abs();
    let s = signum0(total - bounds.budget());
    grad.iter_mut().for_each(|g| *g = s);
    let mut add = |members: &[usize], sum: f64, lower: f64, upper: f64, cost: &mut f64| {
        let d = if sum < lower {
            *cost += lower - sum;
            -1.0
        } else if sum > upper {
            *cost += sum - upper;
            1.0
        } else {
            0.0
        };
        if d != 0.0 {
            for &k in members {
                grad[k] += d;
            }
        }
    };
    for (k, &v) in a.iter().enumerate() {
        add(&[k], v, bounds.lower()[k], bounds.upper()[k], &mut cost);
    }
    for (node, sum) in tree.region_sums(a).into_iter().skip(1) {
        add(&node.members, sum, node.lower, node.upper, &mut cost);
    }
    Ok((cost, grad))
}

/// Nearest feasible allocation, computed top-down: each node's budget is
/// split by an exact projection of its children's current masses onto their
/// realizable intervals. For a single-level tree this is the exact
/// projection of `a`.
pub fn cp_project(a: &[f64], tree: &RegionTree) -> Result<AllocationVector> {
    let n = tree.n_entities();
    check_len(n, a.len())?;
    check_finite(a)?;
    if tree.is_flat() {
        return Ok(exact_project(a, tree.bounds())?.0);
    }
    let regions = tree.regions();
    let bounds = tree.bounds();
    let mut z = vec![0.0; n];
    // (node index, budget)
    let mut stack = vec![(0usize, bounds.budget())];
    while let Some((idx, budget)) = stack.pop() {
        let node = &regions[idx];
        let children = tree.child_regions(idx);
        let (vals, lower, upper): (Vec<f64>, Vec<f64>, Vec<f64>) = if children.is_empty() {
            let ks = &node.members;
            (
                ks.iter().map(|&k| a[k]).collect(),
                ks.iter().map(|&k| bounds.lower()[k].min(budget)).collect(),
                ks.iter().map(|&k| bounds.upper()[k].min(budget)).collect(),
            )
        } else {
            let mut v = Vec::new();
            let mut l = Vec::new();
            let mut u = Vec::new();
            for &c in &children {
                let r = &regions[c];
                v.push(r.members.iter().map(|&k| a[k]).sum());
                l.push(r.eff_lower.min(budget));
                u.push(r.eff_upper.min(budget));
            }
            (v, l, u)
        };
        let spec = BoundSpec::new(lower, upper, budget).map_err(|e| AllocError::tree(&node.id, e.to_string()))?;
        let (shares, _) = exact_project(&vals, &spec)?;
        if children.is_empty() {
            for (&k, &v) in node.members.iter().zip(shares.iter()) {
                z[k] = v;
            }
        } else {
            for (&c, &v) in children.iter().zip(shares.iter()) {
                stack.push((c, v));
            }
        }
    }
    Ok(AllocationVector::from_vec_unchecked(z))
}

/// Distances from `y` to the clamping approximation and to the exact projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectionGap {
    /// `||appropt(y) - y|| - ||exact(y) - y||`, non-negative up to rounding.
    pub gap: f64,
    pub appropt_distance: f64,
    pub exact_distance: f64,
}

pub fn projection_gap(y: &[f64], bounds: &BoundSpec) -> Result<ProjectionGap> {
    let approx = appropt_forward(y, bounds, AppOptOptions::default())?.z;
    let (exact, _) = exact_project(y, bounds)?;
    let (appropt_distance, exact_distance) = (l2(&approx, y), l2(&exact, y));
    Ok(ProjectionGap { gap: appropt_distance - exact_distance, appropt_distance, exact_distance })
}

pub(crate) fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// One row of a projection-gap study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapRecord {
    pub seed: u64,
    pub n: usize,
    pub gap: f64,
    pub appropt_distance: f64,
    pub exact_distance: f64,
}

pub fn write_gap_csv<W: Write>(out: W, records: &[GapRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()
}
