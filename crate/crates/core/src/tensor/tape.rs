//! Define-by-run reverse-mode differentiation over dense 2-D tensors.
//!
//! A [`Tape`] records every differentiable operation executed during a
//! forward pass. [`Tape::backward`] replays the record once in reverse,
//! accumulating adjoints into each tracked tensor. Tapes are rebuilt per
//! training step and are single-threaded; values are immutable once
//! recorded (kernels may still run data-parallel internally).
//!
//! The sparse operator used by [`Tape::spmm`] is graph structure, not a
//! parameter: no gradient flows to it. Its backward pass exploits the
//! operator's symmetry (`S^T G = S G`), which `NormalizedAdjacency`
//! guarantees by construction.

use std::sync::Arc;

use rand::Rng;

use super::{kernels, Tensor, TensorError};
use crate::graph::NormalizedAdjacency;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

struct Node {
    value: Arc<Tensor>,
    grad: Option<Tensor>,
    tracked: bool,
}

/// Sparse 0/1 target structure for [`Tape::gram_bce`]: per-row sorted
/// neighbor lists of an undirected graph without self-loops.
#[derive(Debug)]
pub struct GramTargets {
    n: usize,
    indptr: Vec<usize>,
    cols: Vec<usize>,
    num_undirected: usize,
}

impl GramTargets {
    /// Builds from canonical undirected edges (i < j, deduplicated).
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut counts = vec![0usize; n];
        for &(i, j) in edges {
            counts[i] += 1;
            counts[j] += 1;
        }
        let mut indptr = vec![0usize; n + 1];
        for i in 0..n {
            indptr[i + 1] = indptr[i] + counts[i];
        }
        let mut cols = vec![0usize; indptr[n]];
        let mut cursor = indptr.clone();
        for &(i, j) in edges {
            cols[cursor[i]] = j;
            cursor[i] += 1;
            cols[cursor[j]] = i;
            cursor[j] += 1;
        }
        for i in 0..n {
            cols[indptr[i]..indptr[i + 1]].sort_unstable();
        }
        GramTargets { n, indptr, cols, num_undirected: edges.len() }
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_undirected_edges(&self) -> usize {
        self.num_undirected
    }

    fn neighbors(&self, i: usize) -> &[usize] {
        &self.cols[self.indptr[i]..self.indptr[i + 1]]
    }
}

enum Op {
    MatMul { a: TensorId, b: TensorId, out: TensorId },
    Spmm { s: Arc<NormalizedAdjacency>, d: TensorId, out: TensorId },
    Add { a: TensorId, b: TensorId, out: TensorId },
    Sigmoid { a: TensorId, out: TensorId },
    Relu { a: TensorId, out: TensorId },
    Exp { a: TensorId, out: TensorId },
    Scale { a: TensorId, c: f64, out: TensorId },
    Sum { a: TensorId, out: TensorId },
    GaussianSample { mu: TensorId, logvar: TensorId, eps: Tensor, out: TensorId },
    GramBce { z: TensorId, targets: Arc<GramTargets>, pos_weight: f64, scale: f64, out: TensorId },
    PairBce { z: TensorId, pos: Arc<Vec<(usize, usize)>>, neg: Arc<Vec<(usize, usize)>>, out: TensorId },
    GaussianKl { mu: TensorId, logvar: TensorId, scale: f64, out: TensorId },
}

/// Ordered record of differentiable operations (see module docs).
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Registers a leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.push(Arc::new(value), false)
    }

    /// Registers a shared constant leaf without copying its storage.
    pub fn constant_arc(&mut self, value: Arc<Tensor>) -> TensorId {
        self.push(value, false)
    }

    /// Registers a tracked leaf (a parameter): `backward` fills its grad.
    pub fn tracked(&mut self, value: Tensor) -> TensorId {
        self.push(Arc::new(value), true)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of `id`, if any backward pass reached it.
    pub fn grad(&self, id: TensorId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Clears all accumulated gradients; the recorded forward remains.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Arc<Tensor>, tracked: bool) -> TensorId {
        self.nodes.push(Node { value, grad: None, tracked });
        TensorId(self.nodes.len() - 1)
    }

    fn push_result(&mut self, value: Tensor, inputs: &[TensorId]) -> TensorId {
        let tracked = inputs.iter().any(|id| self.nodes[id.0].tracked);
        self.push(Arc::new(value), tracked)
    }

    fn tracked_of(&self, id: TensorId) -> bool {
        self.nodes[id.0].tracked
    }

    /// C = A * B with adjoints dL/dA = G * B^T and dL/dB = A^T * G.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(TensorError::DimMismatch {
                op: "matmul",
                left_rows: av.rows(),
                left_cols: av.cols(),
                right_rows: bv.rows(),
                right_cols: bv.cols(),
            });
        }
        let out = kernels::matmul(av, bv);
        let out = self.push_result(out, &[a, b]);
        self.ops.push(Op::MatMul { a, b, out });
        Ok(out)
    }

    /// C = S * D for the sparse symmetric operator; the gradient flows to
    /// the dense operand only.
    pub fn spmm(&mut self, s: &Arc<NormalizedAdjacency>, d: TensorId) -> Result<TensorId, TensorError> {
        let dv = self.value(d);
        if s.num_nodes() != dv.rows() {
            return Err(TensorError::DimMismatch {
                op: "spmm",
                left_rows: s.num_nodes(),
                left_cols: s.num_nodes(),
                right_rows: dv.rows(),
                right_cols: dv.cols(),
            });
        }
        let out = kernels::spmm(s, dv);
        let out = self.push_result(out, &[d]);
        self.ops.push(Op::Spmm { s: Arc::clone(s), d, out });
        Ok(out)
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::DimMismatch {
                op: "add",
                left_rows: av.rows(),
                left_cols: av.cols(),
                right_rows: bv.rows(),
                right_cols: bv.cols(),
            });
        }
        let mut out = av.clone();
        out.add_assign(bv);
        let out = self.push_result(out, &[a, b]);
        self.ops.push(Op::Add { a, b, out });
        Ok(out)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let out = self.value(a).map(sigmoid);
        let out = self.push_result(out, &[a]);
        self.ops.push(Op::Sigmoid { a, out });
        out
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let out = self.push_result(out, &[a]);
        self.ops.push(Op::Relu { a, out });
        out
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let out = self.value(a).map(f64::exp);
        let out = self.push_result(out, &[a]);
        self.ops.push(Op::Exp { a, out });
        out
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let out = self.value(a).map(|x| c * x);
        let out = self.push_result(out, &[a]);
        self.ops.push(Op::Scale { a, c, out });
        out
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.value(a).values().iter().sum();
        let out = self.push_result(Tensor::from_values(1, 1, vec![total]).unwrap(), &[a]);
        self.ops.push(Op::Sum { a, out });
        out
    }

    /// Reparameterized Gaussian sample: `mu + exp(0.5 * logvar) ⊙ eps` with
    /// `eps ~ N(0, I)` drawn from `rng` and recorded for the backward pass.
    pub fn gaussian_sample<R: Rng + ?Sized>(
        &mut self,
        mu: TensorId,
        logvar: TensorId,
        rng: &mut R,
    ) -> Result<TensorId, TensorError> {
        let (rows, cols) = self.value(mu).shape();
        let eps = Tensor::standard_normal(rows, cols, rng);
        self.gaussian_sample_with_eps(mu, logvar, eps)
    }

    pub(crate) fn gaussian_sample_with_eps(
        &mut self,
        mu: TensorId,
        logvar: TensorId,
        eps: Tensor,
    ) -> Result<TensorId, TensorError> {
        let (mv, lv) = (self.value(mu), self.value(logvar));
        if mv.shape() != lv.shape() || mv.shape() != eps.shape() {
            return Err(TensorError::DimMismatch {
                op: "gaussian_sample",
                left_rows: mv.rows(),
                left_cols: mv.cols(),
                right_rows: lv.rows(),
                right_cols: lv.cols(),
            });
        }
        let mut out = mv.clone();
        for ((o, &l), &e) in out.values_mut().iter_mut().zip(lv.values()).zip(eps.values()) {
            *o += (0.5 * l).exp() * e;
        }
        let out = self.push_result(out, &[mu, logvar]);
        self.ops.push(Op::GaussianSample { mu, logvar, eps, out });
        Ok(out)
    }

    /// Weighted binary cross-entropy between the sigmoid of the Gram matrix
    /// `Z Z^T` and a sparse 0/1 target, over all n^2 entries (diagonal
    /// counted as negatives): `scale * Σ_ij ℓ(x_ij, a_ij)` with
    /// `ℓ(x, 1) = pos_weight * softplus(-x)` and `ℓ(x, 0) = softplus(x)`.
    pub fn gram_bce(
        &mut self,
        z: TensorId,
        targets: &Arc<GramTargets>,
        pos_weight: f64,
        scale: f64,
    ) -> Result<TensorId, TensorError> {
        let zv = self.value(z);
        if zv.rows() != targets.n {
            return Err(TensorError::DimMismatch {
                op: "gram_bce",
                left_rows: targets.n,
                left_cols: targets.n,
                right_rows: zv.rows(),
                right_cols: zv.cols(),
            });
        }
        let total = gram_bce_forward(zv, targets, pos_weight);
        let out = self.push_result(Tensor::from_values(1, 1, vec![scale * total]).unwrap(), &[z]);
        self.ops.push(Op::GramBce { z, targets: Arc::clone(targets), pos_weight, scale, out });
        Ok(out)
    }

    /// Mean binary cross-entropy of inner-product logits over explicit
    /// positive and negative node pairs.
    pub fn pair_bce(
        &mut self,
        z: TensorId,
        pos: Arc<Vec<(usize, usize)>>,
        neg: Arc<Vec<(usize, usize)>>,
    ) -> Result<TensorId, TensorError> {
        let zv = self.value(z);
        let n = zv.rows();
        for &(i, j) in pos.iter().chain(neg.iter()) {
            if i >= n || j >= n {
                return Err(TensorError::DimMismatch {
                    op: "pair_bce",
                    left_rows: n,
                    left_cols: n,
                    right_rows: i,
                    right_cols: j,
                });
            }
        }
        let count = pos.len() + neg.len();
        debug_assert!(count > 0);
        let mut total = 0.0;
        for &(i, j) in pos.iter() {
            total += softplus(-kernels::dot(zv.row(i), zv.row(j)));
        }
        for &(i, j) in neg.iter() {
            total += softplus(kernels::dot(zv.row(i), zv.row(j)));
        }
        let mean = total / count as f64;
        let out = self.push_result(Tensor::from_values(1, 1, vec![mean]).unwrap(), &[z]);
        self.ops.push(Op::PairBce { z, pos, neg, out });
        Ok(out)
    }

    /// KL divergence of N(mu, diag(exp(logvar))) from N(0, I), summed over
    /// all entries and multiplied by `scale`:
    /// `scale * Σ -0.5 * (1 + logvar - mu^2 - exp(logvar))`.
    pub fn gaussian_kl(
        &mut self,
        mu: TensorId,
        logvar: TensorId,
        scale: f64,
    ) -> Result<TensorId, TensorError> {
        let (mv, lv) = (self.value(mu), self.value(logvar));
        if mv.shape() != lv.shape() {
            return Err(TensorError::DimMismatch {
                op: "gaussian_kl",
                left_rows: mv.rows(),
                left_cols: mv.cols(),
                right_rows: lv.rows(),
                right_cols: lv.cols(),
            });
        }
        let mut total = 0.0;
        for (&m, &l) in mv.values().iter().zip(lv.values()) {
            total += -0.5 * (1.0 + l - m * m - l.exp());
        }
        let out = self.push_result(Tensor::from_values(1, 1, vec![scale * total]).unwrap(), &[mu, logvar]);
        self.ops.push(Op::GaussianKl { mu, logvar, scale, out });
        Ok(out)
    }

    /// Accumulates d`loss`/d`tensor` into the grad of every tracked tensor.
    /// Each call propagates through a fresh adjoint buffer, so repeated
    /// calls without [`Tape::reset_grads`] simply add up.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(TensorError::NotScalar { rows: shape.0, cols: shape.1 });
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adjoints[loss.0] = Some(Tensor::from_values(1, 1, vec![1.0]).unwrap());
        for op in self.ops.iter().rev() {
            self.backward_op(op, &mut adjoints);
        }
        for (node, adjoint) in self.nodes.iter_mut().zip(adjoints) {
            if let (true, Some(adjoint)) = (node.tracked, adjoint) {
                match &mut node.grad {
                    Some(grad) => grad.add_assign(&adjoint),
                    None => node.grad = Some(adjoint),
                }
            }
        }
        Ok(())
    }

    fn backward_op(&self, op: &Op, adjoints: &mut [Option<Tensor>]) {
        // Adjoints are propagated only into tracked nodes; in particular no
        // gradient is ever materialized for constant leaves like the
        // feature matrix.
        let accumulate = |adjoints: &mut [Option<Tensor>], id: TensorId, delta: Tensor| {
            match &mut adjoints[id.0] {
                Some(grad) => grad.add_assign(&delta),
                None => adjoints[id.0] = Some(delta),
            }
        };
        match op {
            Op::MatMul { a, b, out } => {
                let Some(g) = adjoints[out.0].take() else { return };
                if self.tracked_of(*a) {
                    accumulate(adjoints, *a, kernels::matmul_a_bt(&g, self.value(*b)));
                }
                if self.tracked_of(*b) {
                    accumulate(adjoints, *b, kernels::matmul_at_b(self.value(*a), &g));
                }
                adjoints[out.0] = Some(g);
            }
            Op::Spmm { s, d, out } => {
                let Some(g) = adjoints[out.0].take() else { return };
                if self.tracked_of(*d) {
                    // S is symmetric by construction, so S^T g = S g.
                    accumulate(adjoints, *d, kernels::spmm(s, &g));
                }
                adjoints[out.0] = Some(g);
            }
            Op::Add { a, b, out } => {
                let Some(g) = adjoints[out.0].take() else { return };
                if self.tracked_of(*a) {
                    accumulate(adjoints, *a, g.clone());
                }
                if self.tracked_of(*b) {
                    accumulate(adjoints, *b, g.clone());
                }
                adjoints[out.0] = Some(g);
            }
            Op::Sigmoid { a, out } => {
                let Some(g) = adjoints[out.0].take() else { return };
                if self.tracked_of(*a) {
                    let mut ga = g.clone();
                    for (gv, &yv) in ga.values_mut().iter_mut().zip(self.value(*out).values()) {
                        *gv *= yv * (1.0 - yv);
                    }
                    accumulate(adjoints, *a, ga);
                }
                adjoints[out.0] = Some(g);
            }
            Op::Relu { a, out } => {
                let Some(g) = adjoints[out.0].take() else { return };
                if self.tracked_of(*a) {
                    let mut ga = g.clone();
                    for (gv, &xv) in ga.values_mut().iter_mut().zip(self.value(*a).values()) {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(adjoints, *a, ga);
                }
                adjoints[out.0] = Some(g);
            }
            Op::Exp { a, out } => {
                let Some(g) = adjoints[out.0].take() else { return };
                if self.tracked_of(*a) {
                    let mut ga = g.clone();
                    for (gv, &yv) in ga.values_mut().iter_mut().zip(self.value(*out).values()) {
                        *gv *= yv;
                    }
                    accumulate(adjoints, *a, ga);
                }
                adjoints[out.0] = Some(g);
            }
            Op::Scale { a, c, out } => {
                let Some(g) = adjoints[out.0].take() else { return };
                if self.tracked_of(*a) {
                    let mut ga = g.clone();
                    ga.scale_assign(*c);
                    accumulate(adjoints, *a, ga);
                }
                adjoints[out.0] = Some(g);
            }
            Op::Sum { a, out } => {
                let Some(g) = adjoints[out.0].take() else { return };
                if self.tracked_of(*a) {
                    let gs = g.values()[0];
                    let (rows, cols) = self.value(*a).shape();
                    accumulate(adjoints, *a, Tensor::filled(rows, cols, gs));
                }
                adjoints[out.0] = Some(g);
            }
            Op::GaussianSample { mu, logvar, eps, out } => {
                let Some(g) = adjoints[out.0].take() else { return };
                if self.tracked_of(*mu) {
                    accumulate(adjoints, *mu, g.clone());
                }
                if self.tracked_of(*logvar) {
                    let mut gl = g.clone();
                    for ((gv, &l), &e) in gl
                        .values_mut()
                        .iter_mut()
                        .zip(self.value(*logvar).values())
                        .zip(eps.values())
                    {
                        *gv *= 0.5 * (0.5 * l).exp() * e;
                    }
                    accumulate(adjoints, *logvar, gl);
                }
                adjoints[out.0] = Some(g);
            }
            Op::GramBce { z, targets, pos_weight, scale, out } => {
                let Some(g) = adjoints[out.0].take() else { return };
                if self.tracked_of(*z) {
                    let gs = g.values()[0];
                    let gz = gram_bce_backward(self.value(*z), targets, *pos_weight, gs * *scale);
                    accumulate(adjoints, *z, gz);
                }
                adjoints[out.0] = Some(g);
            }
            Op::PairBce { z, pos, neg, out } => {
                let Some(g) = adjoints[out.0].take() else { return };
                if self.tracked_of(*z) {
                    let zv = self.value(*z);
                    let c = g.values()[0] / (pos.len() + neg.len()) as f64;
                    let mut gz = Tensor::zeros(zv.rows(), zv.cols());
                    for &(i, j) in pos.iter() {
                        let x = kernels::dot(zv.row(i), zv.row(j));
                        let coeff = -c * sigmoid(-x);
                        axpy_row(&mut gz, i, coeff, zv.row(j));
                        axpy_row(&mut gz, j, coeff, zv.row(i));
                    }
                    for &(i, j) in neg.iter() {
                        let x = kernels::dot(zv.row(i), zv.row(j));
                        let coeff = c * sigmoid(x);
                        axpy_row(&mut gz, i, coeff, zv.row(j));
                        axpy_row(&mut gz, j, coeff, zv.row(i));
                    }
                    accumulate(adjoints, *z, gz);
                }
                adjoints[out.0] = Some(g);
            }
            Op::GaussianKl { mu, logvar, scale, out } => {
                let Some(g) = adjoints[out.0].take() else { return };
                let gs = g.values()[0] * *scale;
                if self.tracked_of(*mu) {
                    let mut gm = self.value(*mu).clone();
                    gm.scale_assign(gs);
                    accumulate(adjoints, *mu, gm);
                }
                if self.tracked_of(*logvar) {
                    let gl = self.value(*logvar).map(|l| gs * 0.5 * (l.exp() - 1.0));
                    accumulate(adjoints, *logvar, gl);
                }
                adjoints[out.0] = Some(g);
            }
        }
    }
}

fn axpy_row(t: &mut Tensor, row: usize, a: f64, x: &[f64]) {
    for (o, &v) in t.row_mut(row).iter_mut().zip(x) {
        *o += a * v;
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable ln(1 + e^x).
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Per-entry loss: pos_weight * y * softplus(-x) + (1 - y) * softplus(x).
#[inline]
fn bce_term(x: f64, positive: bool, pos_weight: f64) -> f64 {
    if positive {
        pos_weight * softplus(-x)
    } else {
        softplus(x)
    }
}

/// d/dx of `bce_term`.
#[inline]
fn bce_term_dx(x: f64, positive: bool, pos_weight: f64) -> f64 {
    if positive {
        -pos_weight * sigmoid(-x)
    } else {
        sigmoid(x)
    }
}

/// Unscaled Σ_ij ℓ(x_ij, a_ij) over all n^2 entries, computed from the
/// upper triangle (the Gram matrix and the targets are both symmetric).
fn gram_bce_forward(z: &Tensor, targets: &GramTargets, pos_weight: f64) -> f64 {
    let n = targets.n;
    let row_total = |i: usize| -> f64 {
        let zi = z.row(i);
        let neigh = targets.neighbors(i);
        // Diagonal entries are negatives (no self-loops in the target).
        let mut acc = bce_term(kernels::dot(zi, zi), false, pos_weight);
        let mut ptr = neigh.partition_point(|&c| c <= i);
        for j in (i + 1)..n {
            let positive = if ptr < neigh.len() && neigh[ptr] == j {
                ptr += 1;
                true
            } else {
                false
            };
            acc += 2.0 * bce_term(kernels::dot(zi, z.row(j)), positive, pos_weight);
        }
        acc
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if n * n * z.cols() >= 1 << 16 {
            // Partial sums are collected per row and reduced in row order so
            // the result does not depend on scheduling.
            let partials: Vec<f64> = (0..n).into_par_iter().map(row_total).collect();
            return partials.iter().sum();
        }
    }
    (0..n).map(row_total).sum()
}

/// dL/dZ = (G + G^T) Z = 2 G Z for the symmetric coefficient matrix
/// G_ij = coeff * dℓ/dx(x_ij, a_ij); each output row scans a full row of
/// the Gram matrix, so rows are independent and safely parallel.
fn gram_bce_backward(z: &Tensor, targets: &GramTargets, pos_weight: f64, coeff: f64) -> Tensor {
    let n = targets.n;
    let d = z.cols();
    let mut out = Tensor::zeros(n, d);

    let fill_row = |i: usize, orow: &mut [f64]| {
        let zi = z.row(i);
        let neigh = targets.neighbors(i);
        let mut ptr = 0;
        for j in 0..n {
            let positive = if ptr < neigh.len() && neigh[ptr] == j {
                ptr += 1;
                true
            } else {
                false
            };
            let x = kernels::dot(zi, z.row(j));
            let c = 2.0 * coeff * bce_term_dx(x, positive, pos_weight);
            for (o, &v) in orow.iter_mut().zip(z.row(j)) {
                *o += c * v;
            }
        }
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if n * n * d >= 1 << 16 {
            out.values_mut()
                .par_chunks_mut(d)
                .enumerate()
                .for_each(|(i, orow)| fill_row(i, orow));
            return out;
        }
    }
    let mut values = std::mem::take(&mut out.values);
    for (i, orow) in values.chunks_mut(d).enumerate() {
        fill_row(i, orow);
    }
    out.values = values;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_matmul_sum_grad_is_all_ones() {
        let mut tape = Tape::new();
        let id = tape.constant(Tensor::identity(3));
        let m = tape.tracked(Tensor::from_rows(&[
            vec![1.0, 2.0],
            vec![3.0, 4.0],
            vec![5.0, 6.0],
        ]).unwrap());
        let prod = tape.matmul(id, m).unwrap();
        assert_eq!(tape.value(prod), tape.value(m));
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(m).unwrap().values(), &[1.0; 6]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 2));
        let s = tape.sigmoid(a);
        assert!(tape.value(s).values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn relu_clamps_negatives_with_zero_grad() {
        let mut tape = Tape::new();
        let a = tape.tracked(Tensor::from_rows(&[vec![-1.5, 2.0]]).unwrap());
        let r = tape.relu(a);
        assert_eq!(tape.value(r).values(), &[0.0, 2.0]);
        let loss = tape.sum(r);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().values(), &[0.0, 1.0]);
    }

    #[test]
    fn gaussian_sample_with_zero_eps_returns_mu() {
        let mut tape = Tape::new();
        let mu = tape.tracked(Tensor::from_rows(&[vec![2.0, -3.0]]).unwrap());
        let logvar = tape.tracked(Tensor::from_rows(&[vec![0.3, -0.7]]).unwrap());
        let z = tape
            .gaussian_sample_with_eps(mu, logvar, Tensor::zeros(1, 2))
            .unwrap();
        assert_eq!(tape.value(z).values(), tape.value(mu).values());
    }

    #[test]
    fn gaussian_sample_unit_eps_zero_logvar_shifts_by_one() {
        let mut tape = Tape::new();
        let mu = tape.tracked(Tensor::from_rows(&[vec![2.0]]).unwrap());
        let logvar = tape.tracked(Tensor::zeros(1, 1));
        let z = tape
            .gaussian_sample_with_eps(mu, logvar, Tensor::filled(1, 1, 1.0))
            .unwrap();
        assert_eq!(tape.value(z).values(), &[3.0]);
    }

    #[test]
    fn gaussian_sample_empirical_mean() {
        // Monte-Carlo check: scalar mu=2, logvar=0, 1e5 draws.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut tape = Tape::new();
        let mu = tape.constant(Tensor::filled(n, 1, 2.0));
        let logvar = tape.constant(Tensor::zeros(n, 1));
        let z = tape.gaussian_sample(mu, logvar, &mut rng).unwrap();
        let mean: f64 = tape.value(z).values().iter().sum::<f64>() / n as f64;
        let band = 2.0 * 3.0 / (n as f64).sqrt();
        assert!((mean - 2.0).abs() < band, "mean {mean} outside band {band}");
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape.tracked(Tensor::zeros(2, 2));
        let s = tape.sigmoid(a);
        assert!(matches!(tape.backward(s), Err(TensorError::NotScalar { .. })));
    }

    #[test]
    fn backward_accumulates_until_reset() {
        let mut tape = Tape::new();
        let a = tape.tracked(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let loss = tape.sum(a);
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().values(), &[2.0, 2.0]);
        tape.reset_grads();
        assert!(tape.grad(a).is_none());
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().values(), &[1.0, 1.0]);
    }

    #[test]
    fn pair_bce_rejects_out_of_range() {
        let mut tape = Tape::new();
        let z = tape.tracked(Tensor::zeros(3, 2));
        let err = tape.pair_bce(z, Arc::new(vec![(0, 5)]), Arc::new(vec![]));
        assert!(err.is_err());
    }

    #[test]
    fn pair_bce_uninformative_embedding_is_ln2() {
        let mut tape = Tape::new();
        let z = tape.tracked(Tensor::zeros(4, 3));
        let loss = tape
            .pair_bce(z, Arc::new(vec![(0, 1), (1, 2)]), Arc::new(vec![(0, 2), (0, 3)]))
            .unwrap();
        let v = tape.value(loss).scalar().unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn gaussian_kl_standard_normal_is_zero() {
        let mut tape = Tape::new();
        let mu = tape.tracked(Tensor::zeros(3, 2));
        let lv = tape.tracked(Tensor::zeros(3, 2));
        let kl = tape.gaussian_kl(mu, lv, 1.0 / 3.0).unwrap();
        assert_eq!(tape.value(kl).scalar().unwrap(), 0.0);
    }

    #[test]
    fn gaussian_kl_unit_mean_scalar() {
        let mut tape = Tape::new();
        let mu = tape.tracked(Tensor::filled(1, 1, 1.0));
        let lv = tape.tracked(Tensor::zeros(1, 1));
        let kl = tape.gaussian_kl(mu, lv, 1.0).unwrap();
        assert!((tape.value(kl).scalar().unwrap() - 0.5).abs() < 1e-15);
    }
}
