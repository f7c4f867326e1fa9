//! Dense 2-D tensors (64-bit) and the reverse-mode tape built on them.
//!
//! Everything trains in `f64`. The compute kernels live in [`kernels`] and
//! come in sequential and data-parallel flavors; the `parallel` feature
//! selects which one backs the public operations. Both flavors produce
//! bit-identical results for identical inputs: parallel kernels partition
//! work by output row, and every per-row reduction runs in a fixed order.

mod tape;

pub use tape::{GramTargets, Tape, TensorId};

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    DimMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("value buffer of length {len} does not match shape {rows}x{cols}")]
    BadShape { len: usize, rows: usize, cols: usize },
    #[error("expected a scalar (1x1) tensor, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("non-finite value {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { rows, cols, values: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, TensorError> {
        if values.len() != rows * cols {
            return Err(TensorError::BadShape { len: values.len(), rows, cols });
        }
        Ok(Tensor { rows, cols, values })
    }

    /// Builds a tensor from row slices; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut values = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::BadShape { len: row.len(), rows: r, cols: c });
            }
            values.extend_from_slice(row);
        }
        Ok(Tensor { rows: r, cols: c, values })
    }

    /// Glorot-uniform initialization: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let values = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
        Tensor { rows, cols, values }
    }

    pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let values = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        Tensor { rows, cols, values }
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

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Scalar value of a 1x1 tensor.
    pub fn scalar(&self) -> Result<f64, TensorError> {
        if self.rows == 1 && self.cols == 1 {
            Ok(self.values[0])
        } else {
            Err(TensorError::NotScalar { rows: self.rows, cols: self.cols })
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.values[j * self.rows + i] = self.values[i * self.cols + j];
            }
        }
        out
    }

    /// Checked mode: error on the first NaN/Inf entry.
    pub fn assert_finite(&self) -> Result<(), TensorError> {
        for (idx, &v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(TensorError::NonFinite {
                    row: idx / self.cols.max(1),
                    col: idx % self.cols.max(1),
                    value: v,
                });
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Plain (non-differentiated) matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.cols != other.rows {
            return Err(TensorError::DimMismatch {
                op: "matmul",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        Ok(kernels::matmul(self, other))
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }
}

/// Low-level compute kernels, public so the benches can compare the
/// sequential and parallel paths directly.
pub mod kernels {
    use super::Tensor;
    use crate::graph::NormalizedAdjacency;

    /// Below this many flops the parallel dispatchers fall back to the
    /// sequential kernels; thread startup would dominate.
    #[cfg(feature = "parallel")]
    const PAR_MIN_FLOPS: usize = 1 << 16;

    /// Fixed row-chunk size for work partitioning. Keeping it independent
    /// of the thread count makes every kernel's arithmetic identical no
    /// matter how many workers execute it.
    const CHUNK_ROWS: usize = 64;

    #[inline]
    fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
        for (o, &v) in out.iter_mut().zip(x) {
            *o += a * v;
        }
    }

    #[inline]
    pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            acc += x * y;
        }
        acc
    }

    fn matmul_rows_into(a: &Tensor, b: &Tensor, rows: std::ops::Range<usize>, out: &mut [f64]) {
        let n = b.cols;
        for (local, i) in rows.enumerate() {
            let arow = a.row(i);
            let orow = &mut out[local * n..(local + 1) * n];
            for (kk, &aik) in arow.iter().enumerate() {
                // Skipping exact zeros is a large win on sparse feature
                // matrices and exact on finite inputs.
                if aik != 0.0 {
                    axpy(orow, aik, &b.values[kk * n..(kk + 1) * n]);
                }
            }
        }
    }

    /// C = A * B, sequential.
    pub fn matmul_seq(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.cols, b.rows);
        let mut out = Tensor::zeros(a.rows, b.cols);
        let mut values = std::mem::take(&mut out.values);
        matmul_rows_into(a, b, 0..a.rows, &mut values);
        out.values = values;
        out
    }

    /// C = A * B, parallel over output rows. Each row is reduced in a fixed
    /// order, so the result is bit-identical to the sequential kernel.
    #[cfg(feature = "parallel")]
    pub fn matmul_par(a: &Tensor, b: &Tensor) -> Tensor {
        use rayon::prelude::*;
        assert_eq!(a.cols, b.rows);
        let n = b.cols;
        let mut out = Tensor::zeros(a.rows, n);
        out.values
            .par_chunks_mut(CHUNK_ROWS * n)
            .enumerate()
            .for_each(|(ci, slab)| {
                let start = ci * CHUNK_ROWS;
                let end = (start + CHUNK_ROWS).min(a.rows);
                matmul_rows_into(a, b, start..end, slab);
            });
        out
    }

    pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
        #[cfg(feature = "parallel")]
        {
            if a.rows * a.cols * b.cols >= PAR_MIN_FLOPS {
                return matmul_par(a, b);
            }
        }
        matmul_seq(a, b)
    }

    fn matmul_at_b_range(a: &Tensor, b: &Tensor, rows: std::ops::Range<usize>, out: &mut [f64]) {
        let k = a.cols;
        let n = b.cols;
        debug_assert_eq!(out.len(), k * n);
        for i in rows {
            let arow = a.row(i);
            let brow = b.row(i);
            for (r, &air) in arow.iter().enumerate() {
                if air != 0.0 {
                    axpy(&mut out[r * n..(r + 1) * n], air, brow);
                }
            }
        }
    }

    /// C = A^T * B (used for weight gradients). Input rows are processed
    /// in fixed-size chunks, each accumulating into its own buffer, and the
    /// buffers are reduced in chunk order; the parallel kernel maps the
    /// same chunks onto workers, so both produce identical bits.
    pub fn matmul_at_b_seq(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.rows, b.rows);
        let k = a.cols;
        let n = b.cols;
        let mut out = Tensor::zeros(k, n);
        let mut buf = vec![0.0; k * n];
        for start in (0..a.rows).step_by(CHUNK_ROWS) {
            let end = (start + CHUNK_ROWS).min(a.rows);
            buf.fill(0.0);
            matmul_at_b_range(a, b, start..end, &mut buf);
            for (o, &v) in out.values.iter_mut().zip(&buf) {
                *o += v;
            }
        }
        out
    }

    /// C = A^T * B, parallel over input-row chunks (see `matmul_at_b_seq`).
    #[cfg(feature = "parallel")]
    pub fn matmul_at_b_par(a: &Tensor, b: &Tensor) -> Tensor {
        use rayon::prelude::*;
        assert_eq!(a.rows, b.rows);
        let k = a.cols;
        let n = b.cols;
        let nchunks = a.rows.div_ceil(CHUNK_ROWS);
        let partials: Vec<Vec<f64>> = (0..nchunks)
            .into_par_iter()
            .map(|ci| {
                let start = ci * CHUNK_ROWS;
                let end = (start + CHUNK_ROWS).min(a.rows);
                let mut buf = vec![0.0; k * n];
                matmul_at_b_range(a, b, start..end, &mut buf);
                buf
            })
            .collect();
        let mut out = Tensor::zeros(k, n);
        for buf in partials {
            for (o, v) in out.values.iter_mut().zip(buf) {
                *o += v;
            }
        }
        out
    }

    pub fn matmul_at_b(a: &Tensor, b: &Tensor) -> Tensor {
        #[cfg(feature = "parallel")]
        {
            if a.rows * a.cols * b.cols >= PAR_MIN_FLOPS {
                return matmul_at_b_par(a, b);
            }
        }
        matmul_at_b_seq(a, b)
    }

    fn matmul_a_bt_rows(a: &Tensor, b: &Tensor, rows: std::ops::Range<usize>, out: &mut [f64]) {
        let k = b.rows;
        for (local, i) in rows.enumerate() {
            let arow = a.row(i);
            let orow = &mut out[local * k..(local + 1) * k];
            for (j, o) in orow.iter_mut().enumerate() {
                *o = dot(arow, b.row(j));
            }
        }
    }

    /// C = A * B^T (used for input gradients), sequential.
    pub fn matmul_a_bt_seq(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.cols, b.cols);
        let mut out = Tensor::zeros(a.rows, b.rows);
        let mut values = std::mem::take(&mut out.values);
        matmul_a_bt_rows(a, b, 0..a.rows, &mut values);
        out.values = values;
        out
    }

    /// C = A * B^T, parallel over output rows.
    #[cfg(feature = "parallel")]
    pub fn matmul_a_bt_par(a: &Tensor, b: &Tensor) -> Tensor {
        use rayon::prelude::*;
        assert_eq!(a.cols, b.cols);
        let k = b.rows;
        let mut out = Tensor::zeros(a.rows, k);
        out.values
            .par_chunks_mut(CHUNK_ROWS * k)
            .enumerate()
            .for_each(|(ci, slab)| {
                let start = ci * CHUNK_ROWS;
                let end = (start + CHUNK_ROWS).min(a.rows);
                matmul_a_bt_rows(a, b, start..end, slab);
            });
        out
    }

    pub fn matmul_a_bt(a: &Tensor, b: &Tensor) -> Tensor {
        #[cfg(feature = "parallel")]
        {
            if a.rows * a.cols * b.rows >= PAR_MIN_FLOPS {
                return matmul_a_bt_par(a, b);
            }
        }
        matmul_a_bt_seq(a, b)
    }

    fn spmm_rows_into(s: &NormalizedAdjacency, d: &Tensor, rows: std::ops::Range<usize>, out: &mut [f64]) {
        let f = d.cols;
        for (local, i) in rows.enumerate() {
            let orow = &mut out[local * f..(local + 1) * f];
            for (col, val) in s.row_entries(i) {
                axpy(orow, val, d.row(col));
            }
        }
    }

    /// C = S * D with S the sparse normalized operator, sequential.
    pub fn spmm_seq(s: &NormalizedAdjacency, d: &Tensor) -> Tensor {
        assert_eq!(s.num_nodes(), d.rows);
        let mut out = Tensor::zeros(s.num_nodes(), d.cols);
        let mut values = std::mem::take(&mut out.values);
        spmm_rows_into(s, d, 0..s.num_nodes(), &mut values);
        out.values = values;
        out
    }

    /// C = S * D, parallel over output rows.
    #[cfg(feature = "parallel")]
    pub fn spmm_par(s: &NormalizedAdjacency, d: &Tensor) -> Tensor {
        use rayon::prelude::*;
        assert_eq!(s.num_nodes(), d.rows);
        let f = d.cols;
        let n = s.num_nodes();
        let mut out = Tensor::zeros(n, f);
        out.values
            .par_chunks_mut(CHUNK_ROWS * f)
            .enumerate()
            .for_each(|(ci, slab)| {
                let start = ci * CHUNK_ROWS;
                let end = (start + CHUNK_ROWS).min(n);
                spmm_rows_into(s, d, start..end, slab);
            });
        out
    }

    pub fn spmm(s: &NormalizedAdjacency, d: &Tensor) -> Tensor {
        #[cfg(feature = "parallel")]
        {
            if s.nnz() * d.cols >= PAR_MIN_FLOPS {
                return spmm_par(s, d);
            }
        }
        spmm_seq(s, d)
    }
}
