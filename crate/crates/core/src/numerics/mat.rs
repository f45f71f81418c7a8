use serde::{Deserialize, Serialize};

use super::Rng;
use crate::error::{shape_err, DraeError, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(DraeError::Shape(format!("matrix dims must be positive, got {rows}x{cols}")));
        }
        if values.len() != rows * cols {
            return Err(shape_err("matrix values", rows * cols, values.len()));
        }
        if !super::all_finite(&values) {
            return Err(DraeError::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(shape_err("matrix row", cols, bad.len()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// Entries drawn from N(0, scale²).
    pub fn random(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Self {
        let values = (0..rows * cols).map(|_| scale * rng.normal()).collect();
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(shape_err("appended row", self.cols, row.len()));
        }
        self.values.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(shape_err("matvec operand", self.cols, x.len()));
        }
        Ok(self.mv(x))
    }

    pub(crate) fn mv(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.values.chunks_exact(self.cols).map(|row| super::dot(row, x)).collect()
    }

    /// `selfᵀ · y`.
    pub(crate) fn mv_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, yi) in self.values.chunks_exact(self.cols).zip(y) {
            if *yi == 0.0 {
                continue;
            }
            for (o, r) in out.iter_mut().zip(row) {
                *o += yi * r;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(shape_err("matmul inner dimension", self.cols, other.rows));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.values[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    /// `self += scale · a bᵀ`.
    pub(crate) fn add_outer(&mut self, scale: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (row, ai) in self.values.chunks_exact_mut(self.cols).zip(a) {
            let s = scale * ai;
            if s == 0.0 {
                continue;
            }
            for (r, bj) in row.iter_mut().zip(b) {
                *r += s * bj;
            }
        }
    }

    pub fn same_shape(&self, other: &Mat) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Frobenius distance.
    pub fn distance(&self, other: &Mat) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}
