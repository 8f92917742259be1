//! Dense row-major `f64` matrix with the handful of products the model needs.
//!
//! Every output element is produced by exactly one task with a fixed
//! summation order, so results do not depend on the rayon thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this many multiply-adds the products run single-threaded.
const PAR_THRESHOLD: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for r in self.iter_rows() {
            data.extend(idx.iter().map(|&c| r[c]));
        }
        Matrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    /// `[self | other]` column-wise.
    pub fn hconcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Dimension {
                expected: self.rows,
                got: other.rows,
            });
        }
        let mut data = Vec::with_capacity(self.rows * (self.cols + other.cols));
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols + other.cols,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_inner(a: usize, b: usize) -> Result<()> {
        if a != b {
            return Err(Error::Dimension {
                expected: a,
                got: b,
            });
        }
        Ok(())
    }

    /// `self · wᵀ + bias`, where `w` is `out × in` and `self` is `n × in`.
    pub fn linear(&self, w: &Matrix, bias: &[f64]) -> Result<Matrix> {
        Self::check_inner(w.cols, self.cols)?;
        Self::check_inner(w.rows, bias.len())?;
        let mut out = Matrix::zeros(self.rows, w.rows);
        let body = |(r, orow): (usize, &mut [f64])| {
            let x = self.row(r);
            for (o, (wrow, b)) in orow.iter_mut().zip(w.iter_rows().zip(bias)) {
                *o = b + dot(x, wrow);
            }
        };
        let work = self.rows * self.cols * w.rows;
        let chunk = w.rows.max(1);
        if work >= PAR_THRESHOLD {
            out.data.par_chunks_mut(chunk).enumerate().for_each(body);
        } else {
            out.data.chunks_mut(chunk).enumerate().for_each(body);
        }
        Ok(out)
    }

    /// `selfᵀ · x`: with `self` = `n × out` upstream gradient and `x` = `n × in`,
    /// gives the `out × in` weight gradient.
    pub fn t_matmul(&self, x: &Matrix) -> Result<Matrix> {
        Self::check_inner(self.rows, x.rows)?;
        let mut out = Matrix::zeros(self.cols, x.cols);
        let body = |(o, orow): (usize, &mut [f64])| {
            for n in 0..self.rows {
                let g = self.get(n, o);
                if g != 0.0 {
                    for (acc, xv) in orow.iter_mut().zip(x.row(n)) {
                        *acc += g * xv;
                    }
                }
            }
        };
        let work = self.rows * self.cols * x.cols;
        let chunk = x.cols.max(1);
        if work >= PAR_THRESHOLD {
            out.data.par_chunks_mut(chunk).enumerate().for_each(body);
        } else {
            out.data.chunks_mut(chunk).enumerate().for_each(body);
        }
        Ok(out)
    }

    /// `self · w` with `self` = `n × out`, `w` = `out × in`; the gradient
    /// flowing back into a linear layer's input.
    pub fn matmul(&self, w: &Matrix) -> Result<Matrix> {
        Self::check_inner(self.cols, w.rows)?;
        let mut out = Matrix::zeros(self.rows, w.cols);
        let body = |(r, orow): (usize, &mut [f64])| {
            for (k, &g) in self.row(r).iter().enumerate() {
                if g != 0.0 {
                    for (acc, wv) in orow.iter_mut().zip(w.row(k)) {
                        *acc += g * wv;
                    }
                }
            }
        };
        let work = self.rows * self.cols * w.cols;
        let chunk = w.cols.max(1);
        if work >= PAR_THRESHOLD {
            out.data.par_chunks_mut(chunk).enumerate().for_each(body);
        } else {
            out.data.chunks_mut(chunk).enumerate().for_each(body);
        }
        Ok(out)
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (s, v) in sums.iter_mut().zip(r) {
                *s += v;
            }
        }
        sums
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn transpose(a: &Matrix) -> Matrix {
        let mut t = Matrix::zeros(a.cols(), a.rows());
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                t.set(j, i, a.get(i, j));
            }
        }
        t
    }

    fn seq(rows: usize, cols: usize, k: f64) -> Matrix {
        let data = (0..rows * cols).map(|i| ((i as f64) * k).sin()).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn products_match_naive() {
        for &(n, i, o) in &[(3, 4, 2), (70, 40, 30)] {
            let x = seq(n, i, 0.37);
            let w = seq(o, i, 0.11);
            let g = seq(n, o, 0.53);
            let b = vec![0.0; o];
            let lin = x.linear(&w, &b).unwrap();
            let want = naive(&x, &transpose(&w));
            for (a, e) in lin.as_slice().iter().zip(want.as_slice()) {
                assert!((a - e).abs() < 1e-12);
            }
            let gw = g.t_matmul(&x).unwrap();
            let want = naive(&transpose(&g), &x);
            for (a, e) in gw.as_slice().iter().zip(want.as_slice()) {
                assert!((a - e).abs() < 1e-12);
            }
            let gx = g.matmul(&w).unwrap();
            let want = naive(&g, &w);
            for (a, e) in gx.as_slice().iter().zip(want.as_slice()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let x = Matrix::zeros(2, 3);
        let w = Matrix::zeros(4, 2);
        assert!(x.linear(&w, &[0.0; 4]).is_err());
        assert!(x.hconcat(&Matrix::zeros(3, 1)).is_err());
    }
}
