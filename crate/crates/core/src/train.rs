//! Full-graph training: Adam with bias correction, single seeded runs,
//! and multi-run aggregation.
//!
//! Every stochastic draw of a run (weight init, reparameterization noise,
//! negative resampling) flows from the single run seed, so a run is a pure
//! function of `(graph, configs, seed)` within one build. Runs inside
//! [`train_multi`] own their parameters, tape, optimizer state, and RNG
//! stream, and may execute in parallel; results are reduced in run order.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{normalize, split_edges, EdgeSplit, Graph, GraphError};
use crate::metrics::{evaluate_split, MetricsError, SplitPart};
use crate::models::{
    build_encoder, elbo_loss, encode, encode_mean, reconstruction_loss, save_checkpoint,
    CheckpointError, EncoderConfig, EncoderParams, LossMode, ModelError,
};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss {value} at epoch {epoch}; aborting run")]
    NonFiniteLoss { epoch: usize, value: f64 },
    #[error("non-finite parameter detected at epoch {epoch}: {detail}")]
    NonFiniteParam { epoch: usize, detail: String },
    #[error("gradient missing for parameter {index}")]
    MissingGradient { index: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Training hyperparameters. Defaults follow the benchmark protocol:
/// 200 epochs, Adam with learning rate 0.01, 10 runs.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub runs: usize,
    pub base_seed: u64,
    pub loss_mode: LossMode,
    /// Epochs between validation evaluations (0 disables them). The
    /// validation scores are logged only; nothing gates on them.
    pub eval_every: usize,
    /// Checked mode: verify parameter finiteness every epoch.
    pub check_finite: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            runs: 10,
            base_seed: 0,
            loss_mode: LossMode::FullMatrixWeighted,
            eval_every: 10,
            check_finite: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::InvalidConfig("lr must be > 0".into()));
        }
        if self.runs < 1 {
            return Err(TrainError::InvalidConfig("runs must be >= 1".into()));
        }
        Ok(())
    }
}

/// First/second moment estimates per parameter, plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction. `grads[i]` must hold the gradient
/// of `params[i]`; gradients are consumed by the step (the caller rebuilds
/// the tape, and with it fresh gradients, on the next epoch).
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Option<&Tensor>],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    assert_eq!(params.len(), state.m.len(), "optimizer state does not match parameters");
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.adam_beta1.powi(t);
    let bias2 = 1.0 - cfg.adam_beta2.powi(t);
    for (i, param) in params.iter_mut().enumerate() {
        let grad = grads[i].ok_or(TrainError::MissingGradient { index: i })?;
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for (((p, &g), mv), vv) in param
            .values_mut()
            .iter_mut()
            .zip(grad.values())
            .zip(m.values_mut())
            .zip(v.values_mut())
        {
            *mv = cfg.adam_beta1 * *mv + (1.0 - cfg.adam_beta1) * g;
            *vv = cfg.adam_beta2 * *vv + (1.0 - cfg.adam_beta2) * g * g;
            let m_hat = *mv / bias1;
            let v_hat = *vv / bias2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Outcome of one seeded training run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_index: usize,
    pub seed: u64,
    pub final_test_auc: f64,
    pub final_test_ap: f64,
    pub loss_trace: Vec<f64>,
    pub duration: Duration,
}

/// Trains one model on the split's train graph for the configured number
/// of epochs and evaluates AUC/AP on the held-out test edges afterwards.
/// Evaluation uses the deterministic embedding (posterior mean for
/// variational kinds).
pub fn train_single(
    g: &Graph,
    split: &EdgeSplit,
    enc_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<RunResult, TrainError> {
    train_single_detailed(g, split, enc_cfg, train_cfg, seed).map(|(result, _)| result)
}

/// [`train_single`] variant that also returns the trained parameters,
/// for checkpointing and post-hoc inspection.
pub fn train_single_detailed(
    g: &Graph,
    split: &EdgeSplit,
    enc_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<(RunResult, EncoderParams), TrainError> {
    train_cfg.validate()?;
    enc_cfg.validate()?;
    debug_assert_eq!(g.num_nodes(), split.train_graph.num_nodes());
    let started = Instant::now();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_graph = &split.train_graph;
    let adj = Arc::new(normalize(train_graph));
    let features = Arc::new(train_graph.features().clone());
    let mut params = build_encoder(enc_cfg, &mut rng)?;
    let variational = enc_cfg.model_kind.is_variational();
    let mut adam = AdamState::new(&params.weights());

    let mut loss_trace = Vec::with_capacity(train_cfg.epochs);
    for epoch in 1..=train_cfg.epochs {
        let mut tape = Tape::new();
        let x = tape.constant_arc(Arc::clone(&features));
        let out = encode(&mut tape, &params, &adj, x, &mut rng)?;
        let loss = if variational {
            elbo_loss(&mut tape, &out.latent, train_graph, train_cfg.loss_mode, &mut rng)?
        } else {
            reconstruction_loss(&mut tape, out.latent.z, train_graph, train_cfg.loss_mode, &mut rng)?
        };
        let loss_value = tape.value(loss).scalar().expect("losses are scalar");
        if !loss_value.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, value: loss_value });
        }
        loss_trace.push(loss_value);

        tape.backward(loss).map_err(ModelError::from)?;
        let grads: Vec<Option<&Tensor>> = out.weight_ids.iter().map(|&id| tape.grad(id)).collect();
        let mut weights = params.weights_mut();
        adam_step(&mut weights, &grads, &mut adam, train_cfg)?;
        drop(weights);

        if train_cfg.check_finite {
            for (i, w) in params.weights().iter().enumerate() {
                if let Err(e) = w.assert_finite() {
                    return Err(TrainError::NonFiniteParam {
                        epoch,
                        detail: format!("weight {i}: {e}"),
                    });
                }
            }
        }

        if train_cfg.eval_every > 0 && epoch % train_cfg.eval_every == 0 {
            let z = encode_mean(&params, &adj, &features);
            let (val_auc, val_ap) = evaluate_split(&z, split, SplitPart::Val)?;
            log::info!(
                "seed {seed} epoch {epoch}: loss {loss_value:.6} val_auc {val_auc:.4} val_ap {val_ap:.4}"
            );
        }
    }

    let z = encode_mean(&params, &adj, &features);
    let (final_test_auc, final_test_ap) = evaluate_split(&z, split, SplitPart::Test)?;
    let result = RunResult {
        run_index: 0,
        seed,
        final_test_auc,
        final_test_ap,
        loss_trace,
        duration: started.elapsed(),
    };
    Ok((result, params))
}

/// Per-metric mean and sample standard deviation over runs.
#[derive(Debug, Clone, Copy)]
pub struct Aggregate {
    pub auc_mean: f64,
    pub auc_std: f64,
    pub ap_mean: f64,
    pub ap_std: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub results: Vec<RunResult>,
    pub aggregate: Aggregate,
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Executes `runs` independent training runs. Run `r` uses seed
/// `base_seed + r` and a fresh edge split drawn from that seed. Results
/// are sorted by run index before aggregation, so the reduction does not
/// depend on completion order.
pub fn train_multi(
    g: &Graph,
    enc_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainSummary, TrainError> {
    train_multi_checkpointed(g, enc_cfg, train_cfg, None)
}

/// [`train_multi`] that additionally writes one parameter checkpoint per
/// run into `checkpoint_dir`.
pub fn train_multi_checkpointed(
    g: &Graph,
    enc_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
    checkpoint_dir: Option<&std::path::Path>,
) -> Result<TrainSummary, TrainError> {
    train_cfg.validate()?;
    let run_one = |r: usize| -> Result<RunResult, TrainError> {
        let seed = train_cfg.base_seed + r as u64;
        let split = split_edges(g, seed)?;
        let (mut result, params) = train_single_detailed(g, &split, enc_cfg, train_cfg, seed)?;
        result.run_index = r;
        if let Some(dir) = checkpoint_dir {
            let name = format!(
                "{}-l{}-run{}-seed{}.gaec",
                enc_cfg.model_kind.label(),
                enc_cfg.num_layers,
                r,
                seed
            );
            save_checkpoint(&params, &dir.join(name))?;
        }
        Ok(result)
    };

    #[cfg(feature = "parallel")]
    let collected: Result<Vec<RunResult>, TrainError> = {
        use rayon::prelude::*;
        (0..train_cfg.runs).into_par_iter().map(run_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let collected: Result<Vec<RunResult>, TrainError> = (0..train_cfg.runs).map(run_one).collect();

    let mut results = collected?;
    results.sort_by_key(|r| r.run_index);
    let aucs: Vec<f64> = results.iter().map(|r| r.final_test_auc).collect();
    let aps: Vec<f64> = results.iter().map(|r| r.final_test_ap).collect();
    let (auc_mean, auc_std) = mean_and_sample_std(&aucs);
    let (ap_mean, ap_std) = mean_and_sample_std(&aps);
    Ok(TrainSummary {
        results,
        aggregate: Aggregate { auc_mean, auc_std, ap_mean, ap_std },
    })
}
