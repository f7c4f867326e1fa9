//! Graph convolutional layers, residual modules, the four encoder
//! architectures (GAE, VGAE, ResGAE, ResVGAE), the inner-product decoder,
//! and both training losses.
//!
//! A graph convolutional layer computes `activation(S * H * W)` with `S`
//! the normalized adjacency operator; a residual module adds its input
//! back after the activation, which requires equal input/output widths.
//! Residual connections start after the first hidden layer: with `L`
//! layers total the stack is one plain layer, `L - 2` interior layers
//! (residual for the Res* kinds), and a linear output stage with one head
//! (deterministic) or two parallel heads for the posterior mean and
//! log-variance (variational).

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::graph::{Graph, NormalizedAdjacency};
use crate::tensor::kernels;
use crate::tensor::{GramTargets, Tape, Tensor, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("pair ({i}, {j}) out of range for {n} nodes")]
    PairOutOfRange { i: usize, j: usize, n: usize },
    #[error("reconstruction loss needs at least one training edge")]
    NoTrainingEdges,
    #[error("balanced sampling needs {needed} non-edges but only {available} exist")]
    NotEnoughNonEdges { needed: usize, available: usize },
    #[error("operation requires a variational model kind")]
    NotVariational,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// The four encoder architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Gae,
    Vgae,
    ResGae,
    ResVgae,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Gae, ModelKind::Vgae, ModelKind::ResGae, ModelKind::ResVgae];

    pub fn is_variational(self) -> bool {
        matches!(self, ModelKind::Vgae | ModelKind::ResVgae)
    }

    pub fn is_residual(self) -> bool {
        matches!(self, ModelKind::ResGae | ModelKind::ResVgae)
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Gae => "gae",
            ModelKind::Vgae => "vgae",
            ModelKind::ResGae => "resgae",
            ModelKind::ResVgae => "resvgae",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        match s.to_ascii_lowercase().as_str() {
            "gae" => Some(ModelKind::Gae),
            "vgae" => Some(ModelKind::Vgae),
            "resgae" => Some(ModelKind::ResGae),
            "resvgae" => Some(ModelKind::ResVgae),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn label(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Activation> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Some(Activation::Sigmoid),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Reconstruction-loss flavor. `FullMatrixWeighted` follows the weighted
/// cross-entropy over all n^2 entries; `BalancedSampled` averages over all
/// training positives plus an equal number of freshly sampled negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    FullMatrixWeighted,
    BalancedSampled,
}

impl LossMode {
    /// Default choice by graph size: the full-matrix loss up to 5,000
    /// nodes, sampled above (desk-scale runtime on the largest datasets).
    pub fn auto_for(num_nodes: usize) -> LossMode {
        if num_nodes <= 5_000 {
            LossMode::FullMatrixWeighted
        } else {
            LossMode::BalancedSampled
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LossMode::FullMatrixWeighted => "full",
            LossMode::BalancedSampled => "sampled",
        }
    }

    pub fn parse(s: &str) -> Option<LossMode> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Some(LossMode::FullMatrixWeighted),
            "sampled" => Some(LossMode::BalancedSampled),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub model_kind: ModelKind,
    pub num_layers: usize,
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub activation: Activation,
}

impl EncoderConfig {
    /// Defaults: hidden width 32, latent width 16, sigmoid activation.
    pub fn new(model_kind: ModelKind, num_layers: usize, in_dim: usize) -> Self {
        EncoderConfig {
            model_kind,
            num_layers,
            in_dim,
            hidden_dim: 32,
            latent_dim: 16,
            activation: Activation::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_layers < 1 {
            return Err(ModelError::InvalidConfig("num_layers must be >= 1".into()));
        }
        if self.in_dim == 0 || self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err(ModelError::InvalidConfig("dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Weight of a single graph convolutional layer.
#[derive(Debug, Clone)]
pub struct GclParams {
    pub weight: Tensor,
}

#[derive(Debug, Clone)]
pub enum OutputHead {
    Deterministic(GclParams),
    Variational { mu: GclParams, logvar: GclParams },
}

/// Full encoder parameter stack.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub cfg: EncoderConfig,
    pub hidden: Vec<GclParams>,
    pub head: OutputHead,
}

impl EncoderParams {
    /// Interior hidden layers carry the residual connection for the Res*
    /// kinds: exactly max(0, L - 2) residual modules.
    pub fn num_residual_modules(&self) -> usize {
        if self.cfg.model_kind.is_residual() {
            self.hidden.len().saturating_sub(1)
        } else {
            0
        }
    }

    /// Weight matrices in canonical order: hidden layers, then head(s).
    pub fn weights(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.hidden.iter().map(|p| &p.weight).collect();
        match &self.head {
            OutputHead::Deterministic(p) => out.push(&p.weight),
            OutputHead::Variational { mu, logvar } => {
                out.push(&mu.weight);
                out.push(&logvar.weight);
            }
        }
        out
    }

    pub fn weights_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.hidden.iter_mut().map(|p| &mut p.weight).collect();
        match &mut self.head {
            OutputHead::Deterministic(p) => out.push(&mut p.weight),
            OutputHead::Variational { mu, logvar } => {
                out.push(&mut mu.weight);
                out.push(&mut logvar.weight);
            }
        }
        out
    }
}

/// Latent encoding of all nodes; `mu`/`logvar` are present only for
/// variational kinds, where `z` is their reparameterized sample.
#[derive(Debug, Clone)]
pub struct LatentOutput {
    pub z: TensorId,
    pub mu: Option<TensorId>,
    pub logvar: Option<TensorId>,
}

/// Result of a taped [`encode`]: the latent output plus the tape ids of
/// every weight, in the same order as [`EncoderParams::weights`].
#[derive(Debug, Clone)]
pub struct EncodeResult {
    pub latent: LatentOutput,
    pub weight_ids: Vec<TensorId>,
}

/// Glorot-uniform initialized encoder stack for the given configuration.
/// Layer 1 maps `in_dim -> hidden`; interior layers map `hidden -> hidden`
/// (residual for Res* kinds); the final stage maps to `latent` with linear
/// head(s). `L = 1` degenerates to direct `in_dim -> latent` head(s).
pub fn build_encoder<R: Rng + ?Sized>(
    cfg: &EncoderConfig,
    rng: &mut R,
) -> Result<EncoderParams, ModelError> {
    cfg.validate()?;
    let mut hidden = Vec::new();
    for layer in 0..cfg.num_layers - 1 {
        let in_dim = if layer == 0 { cfg.in_dim } else { cfg.hidden_dim };
        hidden.push(GclParams { weight: Tensor::glorot_uniform(in_dim, cfg.hidden_dim, rng) });
    }
    let head_in = if cfg.num_layers == 1 { cfg.in_dim } else { cfg.hidden_dim };
    let head = if cfg.model_kind.is_variational() {
        OutputHead::Variational {
            mu: GclParams { weight: Tensor::glorot_uniform(head_in, cfg.latent_dim, rng) },
            logvar: GclParams { weight: Tensor::glorot_uniform(head_in, cfg.latent_dim, rng) },
        }
    } else {
        OutputHead::Deterministic(GclParams {
            weight: Tensor::glorot_uniform(head_in, cfg.latent_dim, rng),
        })
    };
    Ok(EncoderParams { cfg: cfg.clone(), hidden, head })
}

/// One graph convolutional layer on the tape: `activation(S * h * W)`,
/// computed as `S * (h * W)`. `None` skips the nonlinearity (the linear
/// heads).
pub fn gcl_forward(
    tape: &mut Tape,
    weight: TensorId,
    adj: &Arc<NormalizedAdjacency>,
    h: TensorId,
    activation: Option<Activation>,
) -> Result<TensorId, ModelError> {
    let hw = tape.matmul(h, weight)?;
    let pre = tape.spmm(adj, hw)?;
    Ok(match activation {
        Some(Activation::Sigmoid) => tape.sigmoid(pre),
        Some(Activation::Relu) => tape.relu(pre),
        None => pre,
    })
}

/// Residual module: `gcl_forward(...) + h` elementwise. The shape match
/// between branch and skip is enforced when the encoder is built.
pub fn residual_gcl_forward(
    tape: &mut Tape,
    weight: TensorId,
    adj: &Arc<NormalizedAdjacency>,
    h: TensorId,
    activation: Option<Activation>,
) -> Result<TensorId, ModelError> {
    let branch = gcl_forward(tape, weight, adj, h, activation)?;
    Ok(tape.add(branch, h)?)
}

/// Runs the encoder stack on the tape. Variational kinds draw the
/// reparameterized sample from `rng`; deterministic kinds never touch it.
pub fn encode<R: Rng + ?Sized>(
    tape: &mut Tape,
    params: &EncoderParams,
    adj: &Arc<NormalizedAdjacency>,
    x: TensorId,
    rng: &mut R,
) -> Result<EncodeResult, ModelError> {
    let kind = params.cfg.model_kind;
    let mut weight_ids = Vec::new();
    let mut h = x;
    for (i, layer) in params.hidden.iter().enumerate() {
        let w = tape.tracked(layer.weight.clone());
        weight_ids.push(w);
        h = if i > 0 && kind.is_residual() {
            residual_gcl_forward(tape, w, adj, h, Some(params.cfg.activation))?
        } else {
            gcl_forward(tape, w, adj, h, Some(params.cfg.activation))?
        };
    }
    let latent = match &params.head {
        OutputHead::Deterministic(p) => {
            let w = tape.tracked(p.weight.clone());
            weight_ids.push(w);
            let z = gcl_forward(tape, w, adj, h, None)?;
            LatentOutput { z, mu: None, logvar: None }
        }
        OutputHead::Variational { mu, logvar } => {
            let wm = tape.tracked(mu.weight.clone());
            weight_ids.push(wm);
            let wl = tape.tracked(logvar.weight.clone());
            weight_ids.push(wl);
            let mu_id = gcl_forward(tape, wm, adj, h, None)?;
            let logvar_id = gcl_forward(tape, wl, adj, h, None)?;
            let z = tape.gaussian_sample(mu_id, logvar_id, rng)?;
            LatentOutput { z, mu: Some(mu_id), logvar: Some(logvar_id) }
        }
    };
    Ok(EncodeResult { latent, weight_ids })
}

/// Tape-free forward pass for evaluation: returns the deterministic
/// embedding (the posterior mean for variational kinds, the last layer
/// output otherwise).
pub fn encode_mean(params: &EncoderParams, adj: &NormalizedAdjacency, x: &Tensor) -> Tensor {
    let kind = params.cfg.model_kind;
    let plain_layer = |w: &Tensor, h: &Tensor, activation: Option<Activation>| -> Tensor {
        let hw = kernels::matmul(h, w);
        let mut pre = kernels::spmm(adj, &hw);
        match activation {
            Some(Activation::Sigmoid) => {
                for v in pre.values_mut() {
                    *v = 1.0 / (1.0 + (-*v).exp());
                }
            }
            Some(Activation::Relu) => {
                for v in pre.values_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            None => {}
        }
        pre
    };

    let mut h = x.clone();
    for (i, layer) in params.hidden.iter().enumerate() {
        let mut t = plain_layer(&layer.weight, &h, Some(params.cfg.activation));
        if i > 0 && kind.is_residual() {
            t.add_assign(&h);
        }
        h = t;
    }
    match &params.head {
        OutputHead::Deterministic(p) => plain_layer(&p.weight, &h, None),
        OutputHead::Variational { mu, .. } => plain_layer(&mu.weight, &h, None),
    }
}

/// Dense decoded adjacency: `sigmoid(Z Z^T)`.
pub fn decode_dense(z: &Tensor) -> Tensor {
    let mut gram = kernels::matmul_a_bt(z, z);
    for v in gram.values_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    gram
}

/// Edge scores `sigmoid(z_i . z_j)` for the given pairs; identical values
/// to the corresponding [`decode_dense`] entries.
pub fn decode_pairs(z: &Tensor, pairs: &[(usize, usize)]) -> Result<Vec<f64>, ModelError> {
    let n = z.rows();
    pairs
        .iter()
        .map(|&(i, j)| {
            if i >= n || j >= n {
                return Err(ModelError::PairOutOfRange { i, j, n });
            }
            let x = kernels::dot(z.row(i), z.row(j));
            Ok(1.0 / (1.0 + (-x).exp()))
        })
        .collect()
}

/// Negative expected reconstruction log-likelihood of the training
/// adjacency under the inner-product decoder.
///
/// `FullMatrixWeighted`: cross-entropy over all n^2 logits with
/// positive-class weight `(n^2 - 2|E|) / (2|E|)` and overall normalization
/// `n^2 / (2 (n^2 - 2|E|))`, self-pairs counted as negatives.
/// `BalancedSampled`: mean cross-entropy over all training positives plus
/// an equal number of negatives resampled uniformly (excluding training
/// edges and self-loops) on every call.
pub fn reconstruction_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    z: TensorId,
    train_graph: &Graph,
    mode: LossMode,
    rng: &mut R,
) -> Result<TensorId, ModelError> {
    let n = train_graph.num_nodes();
    let e = train_graph.num_edges();
    if e == 0 {
        return Err(ModelError::NoTrainingEdges);
    }
    match mode {
        LossMode::FullMatrixWeighted => {
            let targets = Arc::new(GramTargets::from_undirected_edges(n, train_graph.edges()));
            let n2 = (n * n) as f64;
            let num_neg = n2 - 2.0 * e as f64;
            let pos_weight = num_neg / (2.0 * e as f64);
            // norm / n^2 with norm = n^2 / (2 * (n^2 - 2|E|)).
            let scale = 1.0 / (2.0 * num_neg);
            Ok(tape.gram_bce(z, &targets, pos_weight, scale)?)
        }
        LossMode::BalancedSampled => {
            let available = n * (n - 1) / 2 - e;
            if available < e {
                return Err(ModelError::NotEnoughNonEdges { needed: e, available });
            }
            let train_set = train_graph.edge_set();
            let mut negatives = Vec::with_capacity(e);
            let mut chosen = std::collections::HashSet::with_capacity(e);
            while negatives.len() < e {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if a == b {
                    continue;
                }
                let pair = (a.min(b), a.max(b));
                if train_set.contains(&pair) || !chosen.insert(pair) {
                    continue;
                }
                negatives.push(pair);
            }
            let pos = Arc::new(train_graph.edges().to_vec());
            Ok(tape.pair_bce(z, pos, Arc::new(negatives))?)
        }
    }
}

/// Per-node mean KL divergence from the standard-normal prior:
/// `(1/N) Σ -0.5 (1 + logvar - mu^2 - exp(logvar))`; nonnegative.
pub fn kl_divergence(tape: &mut Tape, mu: TensorId, logvar: TensorId) -> Result<TensorId, ModelError> {
    let n = tape.value(mu).rows();
    Ok(tape.gaussian_kl(mu, logvar, 1.0 / n as f64)?)
}

/// Minimized quantity for variational kinds: reconstruction loss plus the
/// KL term (the negated evidence lower bound).
pub fn elbo_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    latent: &LatentOutput,
    train_graph: &Graph,
    mode: LossMode,
    rng: &mut R,
) -> Result<TensorId, ModelError> {
    let (Some(mu), Some(logvar)) = (latent.mu, latent.logvar) else {
        return Err(ModelError::NotVariational);
    };
    let recon = reconstruction_loss(tape, latent.z, train_graph, mode, rng)?;
    let kl = kl_divergence(tape, mu, logvar)?;
    Ok(tape.add(recon, kl)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::normalize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arc_norm(g: &Graph) -> Arc<NormalizedAdjacency> {
        Arc::new(normalize(g))
    }

    #[test]
    fn gcl_isolated_node_identity() {
        let g = Graph::new(1, vec![], Tensor::zeros(1, 2)).unwrap();
        let adj = arc_norm(&g);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let w = tape.tracked(Tensor::identity(2));
        let out = gcl_forward(&mut tape, w, &adj, h, None).unwrap();
        assert_eq!(tape.value(out).values(), &[1.0, 0.0]);
    }

    #[test]
    fn gcl_zero_weight_sigmoid_gives_half() {
        let g = Graph::new(3, vec![(0, 1), (1, 2)], Tensor::zeros(3, 4)).unwrap();
        let adj = arc_norm(&g);
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = tape.constant(Tensor::standard_normal(3, 4, &mut rng));
        let w = tape.tracked(Tensor::zeros(4, 2));
        let out = gcl_forward(&mut tape, w, &adj, h, Some(Activation::Sigmoid)).unwrap();
        assert!(tape.value(out).values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn residual_zero_weight_shifts_by_half() {
        let g = Graph::new(3, vec![(0, 1), (1, 2)], Tensor::zeros(3, 2)).unwrap();
        let adj = arc_norm(&g);
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hv = Tensor::standard_normal(3, 2, &mut rng);
        let h = tape.constant(hv.clone());
        let w = tape.tracked(Tensor::zeros(2, 2));
        let out = residual_gcl_forward(&mut tape, w, &adj, h, Some(Activation::Sigmoid)).unwrap();
        for (o, i) in tape.value(out).values().iter().zip(hv.values()) {
            assert_eq!(*o, i + 0.5);
        }
    }

    #[test]
    fn residual_minus_input_equals_plain_branch_exactly() {
        let g = Graph::new(4, vec![(0, 1), (1, 2), (2, 3)], Tensor::zeros(4, 3)).unwrap();
        let adj = arc_norm(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let hv = Tensor::standard_normal(4, 3, &mut rng);
        let wv = Tensor::standard_normal(3, 3, &mut rng);

        let mut tape = Tape::new();
        let h = tape.constant(hv.clone());
        let w = tape.tracked(wv.clone());
        let plain = gcl_forward(&mut tape, w, &adj, h, Some(Activation::Sigmoid)).unwrap();
        let res = residual_gcl_forward(&mut tape, w, &adj, h, Some(Activation::Sigmoid)).unwrap();
        // residual = plain + h with the identical addition, bit for bit.
        for ((r, h), p) in tape
            .value(res)
            .values()
            .iter()
            .zip(hv.values())
            .zip(tape.value(plain).values())
        {
            assert_eq!(*r, p + h);
        }
    }

    #[test]
    fn build_encoder_shapes_l2() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = EncoderConfig::new(ModelKind::Gae, 2, 100);
        let p = build_encoder(&cfg, &mut rng).unwrap();
        assert_eq!(p.hidden.len(), 1);
        assert_eq!(p.hidden[0].weight.shape(), (100, 32));
        match &p.head {
            OutputHead::Deterministic(h) => assert_eq!(h.weight.shape(), (32, 16)),
            _ => panic!("expected deterministic head"),
        }
        assert_eq!(p.num_residual_modules(), 0);

        let cfg = EncoderConfig::new(ModelKind::Vgae, 2, 100);
        let p = build_encoder(&cfg, &mut rng).unwrap();
        match &p.head {
            OutputHead::Variational { mu, logvar } => {
                assert_eq!(mu.weight.shape(), (32, 16));
                assert_eq!(logvar.weight.shape(), (32, 16));
            }
            _ => panic!("expected variational head"),
        }
    }

    #[test]
    fn build_encoder_residual_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = EncoderConfig::new(ModelKind::ResVgae, 8, 50);
        let p = build_encoder(&cfg, &mut rng).unwrap();
        assert_eq!(p.hidden.len(), 7);
        assert_eq!(p.num_residual_modules(), 6);

        for (layers, expect) in [(1usize, 0usize), (2, 0), (3, 1), (5, 3)] {
            let cfg = EncoderConfig::new(ModelKind::ResGae, layers, 10);
            let p = build_encoder(&cfg, &mut rng).unwrap();
            assert_eq!(p.num_residual_modules(), expect, "layers = {layers}");
        }
    }

    #[test]
    fn build_encoder_l1_direct_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = EncoderConfig::new(ModelKind::Gae, 1, 40);
        let p = build_encoder(&cfg, &mut rng).unwrap();
        assert!(p.hidden.is_empty());
        match &p.head {
            OutputHead::Deterministic(h) => assert_eq!(h.weight.shape(), (40, 16)),
            _ => panic!(),
        }
    }

    #[test]
    fn deterministic_encode_is_pure() {
        let g = Graph::new(5, vec![(0, 1), (1, 2), (2, 3), (3, 4)], Tensor::identity(5)).unwrap();
        let adj = arc_norm(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = EncoderConfig { hidden_dim: 4, latent_dim: 3, ..EncoderConfig::new(ModelKind::Gae, 3, 5) };
        let params = build_encoder(&cfg, &mut rng).unwrap();

        let run = |seed: u64| {
            let mut tape = Tape::new();
            let x = tape.constant(g.features().clone());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = encode(&mut tape, &params, &adj, x, &mut rng).unwrap();
            tape.value(out.latent.z).clone()
        };
        // Different rng seeds, identical output: the rng is unused.
        assert_eq!(run(1), run(999));
        assert_eq!(run(1), encode_mean(&params, &adj, g.features()));
    }

    #[test]
    fn variational_encode_reproducible_with_seed() {
        let g = Graph::new(4, vec![(0, 1), (2, 3)], Tensor::identity(4)).unwrap();
        let adj = arc_norm(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = EncoderConfig { hidden_dim: 3, latent_dim: 2, ..EncoderConfig::new(ModelKind::Vgae, 2, 4) };
        let params = build_encoder(&cfg, &mut rng).unwrap();

        let run = |seed: u64| {
            let mut tape = Tape::new();
            let x = tape.constant(g.features().clone());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = encode(&mut tape, &params, &adj, x, &mut rng).unwrap();
            tape.value(out.latent.z).clone()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn decode_zero_row_gives_half_scores() {
        let mut z = Tensor::zeros(3, 4);
        z.set(1, 0, 1.0);
        z.set(2, 1, -2.0);
        let dense = decode_dense(&z);
        for j in 0..3 {
            assert_eq!(dense.get(0, j), 0.5);
        }
    }

    #[test]
    fn decode_dense_symmetric_with_sigmoid_norm_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let z = Tensor::standard_normal(6, 3, &mut rng);
        let dense = decode_dense(&z);
        for i in 0..6 {
            let norm2: f64 = z.row(i).iter().map(|v| v * v).sum();
            assert!((dense.get(i, i) - 1.0 / (1.0 + (-norm2).exp())).abs() < 1e-15);
            for j in 0..6 {
                assert!(dense.get(i, j) > 0.0 && dense.get(i, j) < 1.0);
                assert_eq!(dense.get(i, j), dense.get(j, i));
            }
        }
    }

    #[test]
    fn decode_pairs_matches_dense_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let z = Tensor::standard_normal(8, 5, &mut rng);
        let dense = decode_dense(&z);
        let pairs: Vec<(usize, usize)> = (0..8).flat_map(|i| (0..8).map(move |j| (i, j))).collect();
        let scores = decode_pairs(&z, &pairs).unwrap();
        for (&(i, j), s) in pairs.iter().zip(&scores) {
            assert!((dense.get(i, j) - s).abs() < 1e-15);
        }
        assert!(matches!(
            decode_pairs(&z, &[(0, 8)]),
            Err(ModelError::PairOutOfRange { .. })
        ));
    }

    #[test]
    fn full_matrix_loss_matches_bruteforce_on_4_nodes() {
        let g = Graph::new(4, vec![(0, 1), (1, 2), (0, 3)], Tensor::identity(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let zv = Tensor::standard_normal(4, 3, &mut rng);

        let mut tape = Tape::new();
        let z = tape.tracked(zv.clone());
        let loss = reconstruction_loss(&mut tape, z, &g, LossMode::FullMatrixWeighted, &mut rng).unwrap();
        let got = tape.value(loss).scalar().unwrap();

        // Explicit 16-term weighted cross-entropy sum.
        let n = 4usize;
        let e = 3.0;
        let n2 = (n * n) as f64;
        let pos_weight = (n2 - 2.0 * e) / (2.0 * e);
        let norm = n2 / (2.0 * (n2 - 2.0 * e));
        let edge_set = g.edge_set();
        let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x: f64 = zv.row(i).iter().zip(zv.row(j)).map(|(a, b)| a * b).sum();
                let positive = i != j && edge_set.contains(&(i.min(j), i.max(j)));
                total += if positive { pos_weight * softplus(-x) } else { softplus(x) };
            }
        }
        let expect = norm * total / n2;
        assert!((got - expect).abs() < 1e-12, "got {got}, expected {expect}");
    }

    #[test]
    fn sampled_loss_perfect_scores_near_zero() {
        // One positive with logit +30; every possible negative has logit -30.
        let g = Graph::new(3, vec![(0, 1)], Tensor::identity(3)).unwrap();
        let s = 30.0_f64.sqrt();
        let zv = Tensor::from_rows(&[vec![s, 0.0], vec![s, 0.0], vec![-s, 0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut tape = Tape::new();
        let z = tape.tracked(zv);
        let loss = reconstruction_loss(&mut tape, z, &g, LossMode::BalancedSampled, &mut rng).unwrap();
        assert!(tape.value(loss).scalar().unwrap() < 1e-9);
    }

    #[test]
    fn zero_edge_graph_is_rejected() {
        let g = Graph::new(3, vec![], Tensor::identity(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut tape = Tape::new();
        let z = tape.tracked(Tensor::zeros(3, 2));
        assert!(matches!(
            reconstruction_loss(&mut tape, z, &g, LossMode::FullMatrixWeighted, &mut rng),
            Err(ModelError::NoTrainingEdges)
        ));
    }

    #[test]
    fn elbo_equals_recon_when_posterior_is_prior() {
        let g = Graph::new(3, vec![(0, 1), (1, 2)], Tensor::identity(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);

        let mut tape = Tape::new();
        let mu = tape.tracked(Tensor::zeros(3, 2));
        let logvar = tape.tracked(Tensor::zeros(3, 2));
        let z = tape
            .gaussian_sample(mu, logvar, &mut rng)
            .unwrap();
        let latent = LatentOutput { z, mu: Some(mu), logvar: Some(logvar) };

        let mut rng_a = ChaCha8Rng::seed_from_u64(99);
        let elbo = elbo_loss(&mut tape, &latent, &g, LossMode::FullMatrixWeighted, &mut rng_a).unwrap();
        let mut rng_b = ChaCha8Rng::seed_from_u64(99);
        let recon = reconstruction_loss(&mut tape, latent.z, &g, LossMode::FullMatrixWeighted, &mut rng_b).unwrap();
        assert_eq!(
            tape.value(elbo).scalar().unwrap(),
            tape.value(recon).scalar().unwrap()
        );
    }

    #[test]
    fn elbo_requires_variational_latent() {
        let g = Graph::new(3, vec![(0, 1)], Tensor::identity(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut tape = Tape::new();
        let z = tape.tracked(Tensor::zeros(3, 2));
        let latent = LatentOutput { z, mu: None, logvar: None };
        assert!(matches!(
            elbo_loss(&mut tape, &latent, &g, LossMode::FullMatrixWeighted, &mut rng),
            Err(ModelError::NotVariational)
        ));
    }

    #[test]
    fn kl_nonnegative_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for _ in 0..50 {
            let mut tape = Tape::new();
            let mu = tape.tracked(Tensor::standard_normal(4, 3, &mut rng));
            let lv = tape.tracked(Tensor::standard_normal(4, 3, &mut rng));
            let kl = kl_divergence(&mut tape, mu, lv).unwrap();
            assert!(tape.value(kl).scalar().unwrap() >= 0.0);
        }
    }
}
