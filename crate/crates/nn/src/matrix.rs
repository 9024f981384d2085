//! Row-major dense matrices and the three products the networks need.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NnError::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// One row per inner vector; all rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NnError::DimensionMismatch { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Matrix { rows: 1, cols: v.len(), data: v.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `[self | other]`, side by side.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(NnError::DimensionMismatch { expected: self.rows, got: other.rows });
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix { rows: self.rows, cols, data })
    }

    /// Columns `[from, to)`.
    pub fn columns(&self, from: usize, to: usize) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * (to - from));
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[from..to]);
        }
        Matrix { rows: self.rows, cols: to - from, data }
    }
}

/// `x (b x k) * w (k x n)`.
pub(crate) fn matmul(x: &Matrix, w: &[f64], n: usize) -> Matrix {
    let (b, k) = (x.rows, x.cols);
    debug_assert_eq!(w.len(), k * n);
    let mut out = Matrix::zeros(b, n);
    unsafe {
        matrixmultiply::dgemm(
            b,
            k,
            n,
            1.0,
            x.data.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            n as isize,
            1,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// `x^T (k x b) * g (b x n)`, accumulated into `out` (k x n).
pub(crate) fn matmul_tn_acc(x: &Matrix, g: &Matrix, out: &mut [f64]) {
    let (b, k, n) = (x.rows, x.cols, g.cols);
    debug_assert_eq!(out.len(), k * n);
    unsafe {
        matrixmultiply::dgemm(
            k,
            b,
            n,
            1.0,
            x.data.as_ptr(),
            1,
            k as isize,
            g.data.as_ptr(),
            n as isize,
            1,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `g (b x n) * w^T (n x k)` for `w` stored k x n.
pub(crate) fn matmul_nt(g: &Matrix, w: &[f64], k: usize) -> Matrix {
    let (b, n) = (g.rows, g.cols);
    debug_assert_eq!(w.len(), k * n);
    let mut out = Matrix::zeros(b, k);
    unsafe {
        matrixmultiply::dgemm(
            b,
            n,
            k,
            1.0,
            g.data.as_ptr(),
            n as isize,
            1,
            w.as_ptr(),
            1,
            n as isize,
            0.0,
            out.data.as_mut_ptr(),
            k as isize,
            1,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_agree_with_loops() {
        let x = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = [1.0, 0.5, -1.0, 2.0, 0.0, 1.0];
        let y = matmul(&x, &w, 2);
        assert_eq!(y.as_slice(), &[-1.0, 7.5, -1.0, 18.0]);
        let mut gw = vec![0.0; 6];
        matmul_tn_acc(&x, &y, &mut gw);
        // gw[i][j] = sum_b x[b][i] y[b][j]
        assert_eq!(gw[0], -1.0 - 4.0);
        assert_eq!(gw[5], 3.0 * 7.5 + 6.0 * 18.0);
        let gx = matmul_nt(&y, &w, 3);
        // gx[b][i] = sum_j y[b][j] w[i][j]
        assert_eq!(gx.get(0, 0), -1.0 + 7.5 * 0.5);
        assert_eq!(gx.get(1, 2), 18.0);
    }

    #[test]
    fn hcat_and_columns() {
        let a = Matrix::from_vec(2, 1, vec![1.0, 2.0]).unwrap();
        let b = Matrix::from_vec(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = a.hcat(&b).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        assert_eq!(c.columns(1, 3), b);
    }
}
