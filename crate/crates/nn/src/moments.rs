use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

const NORM_EPS: f64 = 1e-8;

/// Streaming per-dimension mean and population variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningMoments {
    count: u64,
    mean: Vec<f64>,
    /// Sum of squared deviations from the mean.
    m2: Vec<f64>,
    /// Variance used by `normalize` is at least this.
    #[serde(default)]
    min_variance: f64,
}

impl RunningMoments {
    pub fn new(dim: usize) -> Self {
        RunningMoments { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim], min_variance: 0.0 }
    }

    /// Normalizes as if every standard deviation were at least `std`, so
    /// inputs that have barely varied yet are not blown up.
    pub fn with_min_std(dim: usize, std: f64) -> Self {
        RunningMoments { min_variance: std * std, ..RunningMoments::new(dim) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim()];
        }
        self.m2.iter().map(|m| (m / self.count as f64).max(0.0)).collect()
    }

    pub fn update(&mut self, v: &[f64]) -> Result<()> {
        self.update_batch(std::slice::from_ref(&v.to_vec()))
    }

    /// Merges a batch with the parallel-variance combination rule.
    pub fn update_batch(&mut self, batch: &[Vec<f64>]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let d = self.dim();
        let nb = batch.len() as f64;
        let mut bmean = vec![0.0; d];
        for row in batch {
            if row.len() != d {
                return Err(NnError::DimensionMismatch { expected: d, got: row.len() });
            }
            bmean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        bmean.iter_mut().for_each(|m| *m /= nb);
        let mut bm2 = vec![0.0; d];
        for row in batch {
            bm2.iter_mut().zip(row.iter().zip(&bmean)).for_each(|(s, (v, m))| *s += (v - m) * (v - m));
        }
        let na = self.count as f64;
        let n = na + nb;
        for k in 0..d {
            let delta = bmean[k] - self.mean[k];
            self.mean[k] += delta * nb / n;
            self.m2[k] += bm2[k] + delta * delta * na * nb / n;
        }
        self.count += batch.len() as u64;
        Ok(())
    }

    /// `(v - mean) / sqrt(max(var, min_var) + 1e-8)`.
    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mean).zip(self.normalize_scale()).map(|((x, m), s)| (x - m) * s).collect()
    }

    /// `d normalize(v)_k / d v_k`.
    pub fn normalize_scale(&self) -> Vec<f64> {
        self.variance().iter().map(|s| 1.0 / (s.max(self.min_variance) + NORM_EPS).sqrt()).collect()
    }

    /// Moves mean and variance toward `other` with rate `tau`.
    pub fn soft_update(&mut self, other: &RunningMoments, tau: f64) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(NnError::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        let (va, vb) = (self.variance(), other.variance());
        self.count = other.count.max(1);
        let c = self.count as f64;
        for k in 0..self.dim() {
            self.mean[k] = tau * other.mean[k] + (1.0 - tau) * self.mean[k];
            self.m2[k] = (tau * vb[k] + (1.0 - tau) * va[k]) * c;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_two_three() {
        let mut m = RunningMoments::new(2);
        for v in [1.0, 2.0, 3.0] {
            m.update(&[v, -v]).unwrap();
        }
        assert!((m.mean()[0] - 2.0).abs() < 1e-15);
        assert!((m.variance()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.normalize(&[2.0, -2.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn single_observation_is_finite() {
        let mut m = RunningMoments::new(1);
        m.update(&[5.0]).unwrap();
        assert_eq!(m.variance(), vec![0.0]);
        assert!(m.normalize(&[6.0])[0].is_finite());
    }

    #[test]
    fn std_floor_caps_the_scale() {
        let mut m = RunningMoments::with_min_std(1, 0.1);
        m.update_batch(&[vec![1.0], vec![1.001]]).unwrap();
        assert!((m.normalize_scale()[0] - 10.0).abs() < 1e-4);
        m.update_batch(&[vec![-3.0], vec![5.0]]).unwrap();
        assert!((m.normalize_scale()[0] - 1.0 / m.variance()[0].sqrt()).abs() < 1e-6);
    }

    #[test]
    fn batches_match_two_pass() {
        let data: Vec<Vec<f64>> = (0..10_000).map(|i| vec![(i as f64 * 0.37).sin() * 10.0 + 3.0]).collect();
        let mut m = RunningMoments::new(1);
        for chunk in data.chunks(37) {
            m.update_batch(chunk).unwrap();
        }
        let mean = data.iter().map(|v| v[0]).sum::<f64>() / data.len() as f64;
        let var = data.iter().map(|v| (v[0] - mean).powi(2)).sum::<f64>() / data.len() as f64;
        assert!((m.mean()[0] - mean).abs() < 1e-10);
        assert!((m.variance()[0] - var).abs() < 1e-10);
    }
}
