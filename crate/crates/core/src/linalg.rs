//! Minimal dense row-major matrix used for layer weights and frequency matrices.
//!
//! All accumulation goes through [`dot_acc`] so that every code path that
//! claims bit-identical values (value-only evaluation vs. the jet forward
//! pass, checkpoint round-trips) shares one reduction order.

use crate::error::{Result, SolverError};

#[derive(Clone, Debug, PartialEq)]
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

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|row| row.len()).unwrap_or(0);
        if r == 0 || c == 0 {
            return Err(SolverError::ShapeMismatch(
                "matrix must have at least one row and one column".into(),
            ));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            if row.len() != c {
                return Err(SolverError::ShapeMismatch(format!(
                    "ragged matrix rows: expected {c} columns, found {}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// out = W x + init (init broadcast per row from `bias`, or zero).
    pub fn matvec_into(&self, x: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for i in 0..self.rows {
            let init = bias.map_or(0.0, |b| b[i]);
            out[i] = dot_acc(self.row(i), x, init);
        }
    }

    /// out += Wᵀ y (used by the reverse pass).
    pub fn matvec_transpose_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for i in 0..self.rows {
            let yi = y[i];
            if yi == 0.0 {
                continue;
            }
            let row = self.row(i);
            for (o, w) in out.iter_mut().zip(row) {
                *o = w.mul_add(yi, *o);
            }
        }
    }
}

/// Fused dot product with fixed left-to-right order: init + Σ row[k]·x[k].
#[inline]
pub fn dot_acc(row: &[f64], x: &[f64], init: f64) -> f64 {
    debug_assert_eq!(row.len(), x.len());
    let mut acc = init;
    for (w, v) in row.iter().zip(x) {
        acc = w.mul_add(*v, acc);
    }
    acc
}
