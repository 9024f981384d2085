//! Domain types shared by every layer.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{AllocError, Result};

/// Slack used when validating bound consistency; fractions derived from
/// integer counts rarely sum exactly.
pub const BOUND_TOL: f64 = 1e-12;

/// A length-n vector of finite fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AllocationVector(Vec<f64>);

impl AllocationVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(AllocError::Empty);
        }
        check_finite(&values)?;
        Ok(AllocationVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Wraps values that the caller has already produced from finite inputs.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        AllocationVector(values)
    }
}

impl Deref for AllocationVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for AllocationVector {
    type Error = AllocError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        AllocationVector::new(v)
    }
}

impl From<AllocationVector> for Vec<f64> {
    fn from(v: AllocationVector) -> Vec<f64> {
        v.0
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(AllocError::NonFinite { index }),
        None => Ok(()),
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(AllocError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Integer resource counts per entity, summing to `total`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscreteAllocation {
    counts: Vec<u32>,
    total: u32,
}

impl DiscreteAllocation {
    pub fn new(counts: Vec<u32>, total: u32) -> Result<Self> {
        if counts.is_empty() {
            return Err(AllocError::Empty);
        }
        if total == 0 {
            return Err(AllocError::InvalidDiscrete("total must be positive".into()));
        }
        let sum: u64 = counts.iter().map(|&c| c as u64).sum();
        if sum != total as u64 {
            return Err(AllocError::InvalidDiscrete(format!("counts sum to {sum}, expected {total}")));
        }
        Ok(DiscreteAllocation { counts, total })
    }

    /// Builds an allocation whose total is the sum of the counts.
    pub fn from_counts(counts: Vec<u32>) -> Result<Self> {
        let total = counts.iter().sum();
        DiscreteAllocation::new(counts, total)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Fraction of the total held by each entity.
    pub fn normalize(&self) -> AllocationVector {
        let total = self.total as f64;
        AllocationVector(self.counts.iter().map(|&c| c as f64 / total).collect())
    }
}

/// Per-entity lower/upper bounds and the total budget, all in fraction units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
    budget: f64,
}

impl BoundSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, budget: f64) -> Result<Self> {
        if lower.is_empty() {
            return Err(AllocError::Empty);
        }
        check_len(lower.len(), upper.len())?;
        check_finite(&lower)?;
        check_finite(&upper)?;
        if !budget.is_finite() || budget < 0.0 {
            return Err(AllocError::InvalidBounds(format!("budget {budget} must be finite and >= 0")));
        }
        let tol = BOUND_TOL * budget.max(1.0);
        for (k, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if lo < 0.0 || lo > hi || hi > budget + tol {
                return Err(AllocError::InvalidBounds(format!(
                    "entity {k}: need 0 <= lower ({lo}) <= upper ({hi}) <= budget ({budget})"
                )));
            }
        }
        let lo_sum: f64 = lower.iter().sum();
        let hi_sum: f64 = upper.iter().sum();
        if lo_sum > budget + tol || hi_sum < budget - tol {
            return Err(AllocError::InvalidBounds(format!(
                "need sum(lower) ({lo_sum}) <= budget ({budget}) <= sum(upper) ({hi_sum})"
            )));
        }
        Ok(BoundSpec { lower, upper, budget })
    }

    /// Bounds `[0, budget]` on every entity.
    pub fn unbounded(n: usize, budget: f64) -> Result<Self> {
        BoundSpec::new(vec![0.0; n], vec![budget; n], budget)
    }

    pub fn uniform(n: usize, lower: f64, upper: f64, budget: f64) -> Result<Self> {
        BoundSpec::new(vec![lower; n], vec![upper; n], budget)
    }

    /// Scales integer bounds on `total` resources into fractions of a unit budget.
    pub fn from_counts(lower: &[u32], upper: &[u32], total: u32) -> Result<Self> {
        let t = total as f64;
        BoundSpec::new(
            lower.iter().map(|&c| c as f64 / t).collect(),
            upper.iter().map(|&c| (c.min(total)) as f64 / t).collect(),
            1.0,
        )
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

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn min_mass(&self) -> f64 {
        self.lower.iter().sum()
    }

    pub fn max_mass(&self) -> f64 {
        self.upper.iter().sum()
    }

    /// Same entity bounds with a different budget.
    pub fn with_budget(&self, budget: f64) -> Result<Self> {
        BoundSpec::new(self.lower.clone(), self.upper.clone(), budget)
    }
}

/// Dense partial derivatives of a layer's outputs with respect to its inputs,
/// plus (optionally) with respect to the budget.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    rows: usize,
    cols: usize,
    d_dy: Vec<f64>,
    d_dc: Option<Vec<f64>>,
}

impl JacobianMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        JacobianMatrix { rows, cols, d_dy: vec![0.0; rows * cols], d_dc: None }
    }

    pub fn identity(n: usize) -> Self {
        let mut j = JacobianMatrix::zeros(n, n);
        for k in 0..n {
            j.set(k, k, 1.0);
        }
        j
    }

    /// Row-major construction.
    pub fn from_rows(rows: usize, cols: usize, d_dy: Vec<f64>) -> Self {
        assert_eq!(d_dy.len(), rows * cols, "jacobian buffer size");
        JacobianMatrix { rows, cols, d_dy, d_dc: None }
    }

    pub fn with_budget_column(mut self, d_dc: Vec<f64>) -> Self {
        assert_eq!(d_dc.len(), self.rows, "budget column length");
        self.d_dc = Some(d_dc);
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.d_dy[k * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, k: usize, j: usize, v: f64) {
        self.d_dy[k * self.cols + j] = v;
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.d_dy[k * self.cols..(k + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d_dy
    }

    pub fn d_dc(&self) -> Option<&[f64]> {
        self.d_dc.as_deref()
    }

    /// Vector-Jacobian product `Jᵀ g`: pulls an output gradient back to the inputs.
    pub fn vjp(&self, grad_out: &[f64]) -> Vec<f64> {
        assert_eq!(grad_out.len(), self.rows, "vjp length");
        let mut out = vec![0.0; self.cols];
        for (k, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (o, &v) in out.iter_mut().zip(self.row(k)) {
                *o += g * v;
            }
        }
        out
    }

    /// Jacobian-vector product `J v`: pushes an input perturbation forward.
    pub fn jvp(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "jvp length");
        (0..self.rows).map(|k| self.row(k).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &JacobianMatrix) -> JacobianMatrix {
        assert_eq!(self.cols, rhs.rows, "jacobian product shapes");
        let mut out = JacobianMatrix::zeros(self.rows, rhs.cols);
        for k in 0..self.rows {
            for m in 0..self.cols {
                let a = self.get(k, m);
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.d_dy[k * rhs.cols + j] += a * rhs.get(m, j);
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.d_dy.iter().all(|v| v.is_finite()) && self.d_dc.as_ref().is_none_or(|c| c.iter().all(|v| v.is_finite()))
    }

    /// Sum of all entries; used as a cheap fingerprint in reports.
    pub fn checksum(&self) -> f64 {
        self.d_dy.iter().sum::<f64>() + self.d_dc.as_ref().map_or(0.0, |c| c.iter().sum())
    }

    /// Largest elementwise discrepancy, relative to `max(1, |reference|)`.
    pub fn max_rel_error(&self, reference: &JacobianMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (reference.rows, reference.cols));
        self.d_dy.iter().zip(&reference.d_dy).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)).fold(0.0, f64::max)
    }
}

/// Outcome of checking an allocation against sum, entity and region constraints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub sum_residual: f64,
    pub bound_violations: Vec<(usize, f64)>,
    pub region_violations: Vec<(String, f64)>,
}
