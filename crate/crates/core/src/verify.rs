//! Built-in invariant and oracle suite.
//!
//! Every check here validates an implementation against an independent
//! reference route: dense loops instead of the CSR operator, central
//! finite differences instead of tape adjoints, O(n^2) definitional
//! scans instead of sort-based metrics. The CLI `verify` subcommand runs
//! [`run_all`]; the test suites reuse the individual checks.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{normalize, Graph};
use crate::metrics::{auc, average_precision, ScoredLabels};
use crate::models::{
    build_encoder, elbo_loss, encode, reconstruction_loss, Activation, EncoderConfig, LossMode,
    ModelKind,
};
use crate::synth::random_graph;
use crate::tensor::{kernels, GramTargets, Tape, Tensor};

/// Outcome of one named property check.
#[derive(Debug, Clone)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl PropertyCheck {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        PropertyCheck { name, passed, detail }
    }
}

/// Dense reference computation of `D^{-1/2} (A + I) D^{-1/2}`, independent
/// of the sparse path.
pub fn dense_normalize_oracle(g: &Graph) -> Tensor {
    let n = g.num_nodes();
    let mut a = Tensor::identity(n);
    for &(i, j) in g.edges() {
        a.set(i, j, 1.0);
        a.set(j, i, 1.0);
    }
    let mut inv_sqrt_deg = vec![0.0; n];
    for i in 0..n {
        let deg: f64 = (0..n).map(|j| a.get(i, j)).sum();
        inv_sqrt_deg[i] = 1.0 / deg.sqrt();
    }
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, inv_sqrt_deg[i] * a.get(i, j) * inv_sqrt_deg[j]);
        }
    }
    out
}

/// O(P*N) definitional AUC: wins plus half-credit ties over all
/// positive-negative pairs.
pub fn auc_bruteforce(sl: &ScoredLabels) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in sl.labels().iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in sl.labels().iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if sl.scores()[i] > sl.scores()[j] {
                wins += 1.0;
            } else if sl.scores()[i] == sl.scores()[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// O(n^2) definitional average precision: ranks computed by pairwise
/// comparison (score descending, ties by original index, the same order
/// the implementation documents), precision summed walking the ranking
/// from the top so the term order matches too.
pub fn ap_bruteforce(sl: &ScoredLabels) -> f64 {
    let n = sl.scores().len();
    let before = |a: usize, b: usize| {
        sl.scores()[a] > sl.scores()[b] || (sl.scores()[a] == sl.scores()[b] && a < b)
    };
    let mut rank = vec![1usize; n];
    for i in 0..n {
        for j in 0..n {
            if j != i && before(j, i) {
                rank[i] += 1;
            }
        }
    }
    let mut at_rank = vec![0usize; n];
    for i in 0..n {
        at_rank[rank[i] - 1] = i;
    }
    let mut hits = 0usize;
    let mut ap_sum = 0.0;
    for (k, &i) in at_rank.iter().enumerate() {
        if sl.labels()[i] {
            hits += 1;
            ap_sum += hits as f64 / (k + 1) as f64;
        }
    }
    ap_sum / hits as f64
}

/// Central finite difference of `f` in coordinate `idx` of input `which`.
pub fn central_diff(
    f: &mut dyn FnMut(&[Tensor]) -> f64,
    inputs: &[Tensor],
    which: usize,
    idx: usize,
    step: f64,
) -> f64 {
    let mut plus = inputs.to_vec();
    plus[which].values_mut()[idx] += step;
    let mut minus = inputs.to_vec();
    minus[which].values_mut()[idx] -= step;
    (f(&plus) - f(&minus)) / (2.0 * step)
}

/// Relative-error acceptance with an absolute floor for near-zero
/// derivatives (finite-difference noise sits around 1e-11 here).
pub fn grad_close(tape_grad: f64, fd_grad: f64, rel_tol: f64) -> bool {
    let diff = (tape_grad - fd_grad).abs();
    diff <= rel_tol * tape_grad.abs().max(fd_grad.abs()) || diff <= 1e-8
}

pub const FD_STEP: f64 = 1e-5;
pub const PER_OP_TOL: f64 = 1e-4;
pub const COMPOSED_TOL: f64 = 1e-3;

fn rand_tensor<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let values = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::from_values(rows, cols, values).unwrap()
}

/// Checks tape gradients of one scalar-valued function against central
/// finite differences on every coordinate of every input. Returns the
/// worst observed (tape, fd) pair on failure.
fn fd_check(
    f: &mut dyn FnMut(&[Tensor]) -> (f64, Vec<Tensor>),
    inputs: &[Tensor],
    rel_tol: f64,
) -> Result<(), String> {
    let (_, grads) = f(inputs);
    let mut value_only = |xs: &[Tensor]| f(xs).0;
    for which in 0..inputs.len() {
        for idx in 0..inputs[which].values().len() {
            let fd = central_diff(&mut value_only, inputs, which, idx, FD_STEP);
            let tg = grads[which].values()[idx];
            if !grad_close(tg, fd, rel_tol) {
                return Err(format!(
                    "input {which} coord {idx}: tape {tg:.9e} vs fd {fd:.9e}"
                ));
            }
        }
    }
    Ok(())
}

/// Gradient checks for every differentiable tape operation on random
/// small inputs (entries in [-2, 2], dims <= 6), `instances` cases per op.
pub fn check_op_gradients(seed: u64, instances: usize) -> PropertyCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();

    for case in 0..instances {
        let m = rng.random_range(2..=6);
        let k = rng.random_range(2..=6);
        let n = rng.random_range(2..=6);

        // matmul: inputs (a, b), loss = sum(a * b)
        let inputs = vec![rand_tensor(m, k, &mut rng), rand_tensor(k, n, &mut rng)];
        let mut f = |xs: &[Tensor]| {
            let mut tape = Tape::new();
            let a = tape.tracked(xs[0].clone());
            let b = tape.tracked(xs[1].clone());
            let p = tape.matmul(a, b).unwrap();
            let loss = tape.sum(p);
            tape.backward(loss).unwrap();
            (
                tape.value(loss).scalar().unwrap(),
                vec![tape.grad(a).unwrap().clone(), tape.grad(b).unwrap().clone()],
            )
        };
        if let Err(e) = fd_check(&mut f, &inputs, PER_OP_TOL) {
            failures.push(format!("matmul case {case}: {e}"));
        }

        // spmm: gradient flows to the dense operand only.
        let g = random_graph(m.max(3), 0.5, 1, seed ^ (case as u64) << 1);
        let adj = Arc::new(normalize(&g));
        let inputs = vec![rand_tensor(g.num_nodes(), k, &mut rng)];
        let mut f = |xs: &[Tensor]| {
            let mut tape = Tape::new();
            let d = tape.tracked(xs[0].clone());
            let p = tape.spmm(&adj, d).unwrap();
            let loss = tape.sum(p);
            tape.backward(loss).unwrap();
            (tape.value(loss).scalar().unwrap(), vec![tape.grad(d).unwrap().clone()])
        };
        if let Err(e) = fd_check(&mut f, &inputs, PER_OP_TOL) {
            failures.push(format!("spmm case {case}: {e}"));
        }

        // Elementwise ops, weighted downstream by a matmul so every entry
        // receives a distinct adjoint coefficient (a plain sum would hide
        // transposition bugs).
        let w = rand_tensor(n, 2, &mut rng);
        for op in ["sigmoid", "relu", "exp", "scale"] {
            let mut inputs = vec![rand_tensor(m, n, &mut rng)];
            if op == "relu" {
                // Keep coordinates away from the kink; the central
                // difference straddles it otherwise.
                for v in inputs[0].values_mut() {
                    if v.abs() < 1e-3 {
                        *v += 0.5;
                    }
                }
            }
            let w = w.clone();
            let mut f = |xs: &[Tensor]| {
                let mut tape = Tape::new();
                let a = tape.tracked(xs[0].clone());
                let y = match op {
                    "sigmoid" => tape.sigmoid(a),
                    "relu" => tape.relu(a),
                    "exp" => tape.exp(a),
                    "scale" => tape.scale(a, -1.7),
                    _ => unreachable!(),
                };
                let wid = tape.constant(w.clone());
                let p = tape.matmul(y, wid).unwrap();
                let loss = tape.sum(p);
                tape.backward(loss).unwrap();
                (tape.value(loss).scalar().unwrap(), vec![tape.grad(a).unwrap().clone()])
            };
            if let Err(e) = fd_check(&mut f, &inputs, PER_OP_TOL) {
                failures.push(format!("{op} case {case}: {e}"));
            }
        }

        // add, checking both operands.
        let inputs = vec![rand_tensor(m, n, &mut rng), rand_tensor(m, n, &mut rng)];
        let wadd = rand_tensor(n, 2, &mut rng);
        let mut f = |xs: &[Tensor]| {
            let mut tape = Tape::new();
            let a = tape.tracked(xs[0].clone());
            let b = tape.tracked(xs[1].clone());
            let y = tape.add(a, b).unwrap();
            let wid = tape.constant(wadd.clone());
            let p = tape.matmul(y, wid).unwrap();
            let loss = tape.sum(p);
            tape.backward(loss).unwrap();
            (
                tape.value(loss).scalar().unwrap(),
                vec![tape.grad(a).unwrap().clone(), tape.grad(b).unwrap().clone()],
            )
        };
        if let Err(e) = fd_check(&mut f, &inputs, PER_OP_TOL) {
            failures.push(format!("add case {case}: {e}"));
        }

        // gaussian_sample with eps held fixed.
        let eps = Tensor::standard_normal(m, n, &mut rng);
        let wsum = rand_tensor(n, 2, &mut rng);
        let inputs = vec![rand_tensor(m, n, &mut rng), rand_tensor(m, n, &mut rng)];
        let mut f = |xs: &[Tensor]| {
            let mut tape = Tape::new();
            let mu = tape.tracked(xs[0].clone());
            let lv = tape.tracked(xs[1].clone());
            let z = tape.gaussian_sample_with_eps(mu, lv, eps.clone()).unwrap();
            let wid = tape.constant(wsum.clone());
            let p = tape.matmul(z, wid).unwrap();
            let loss = tape.sum(p);
            tape.backward(loss).unwrap();
            (
                tape.value(loss).scalar().unwrap(),
                vec![tape.grad(mu).unwrap().clone(), tape.grad(lv).unwrap().clone()],
            )
        };
        if let Err(e) = fd_check(&mut f, &inputs, PER_OP_TOL) {
            failures.push(format!("gaussian_sample case {case}: {e}"));
        }

        // gram_bce on a random small graph.
        let g = random_graph(6, 0.4, 1, seed ^ 0xABCD ^ case as u64);
        let targets = Arc::new(GramTargets::from_undirected_edges(g.num_nodes(), g.edges()));
        let e = g.num_edges() as f64;
        let n2 = (g.num_nodes() * g.num_nodes()) as f64;
        let pos_weight = (n2 - 2.0 * e) / (2.0 * e);
        let scale = 1.0 / (2.0 * (n2 - 2.0 * e));
        let inputs = vec![rand_tensor(g.num_nodes(), 3, &mut rng)];
        let mut f = |xs: &[Tensor]| {
            let mut tape = Tape::new();
            let z = tape.tracked(xs[0].clone());
            let loss = tape.gram_bce(z, &targets, pos_weight, scale).unwrap();
            tape.backward(loss).unwrap();
            (tape.value(loss).scalar().unwrap(), vec![tape.grad(z).unwrap().clone()])
        };
        if let Err(e) = fd_check(&mut f, &inputs, PER_OP_TOL) {
            failures.push(format!("gram_bce case {case}: {e}"));
        }

        // pair_bce on fixed pair lists.
        let pos = Arc::new(vec![(0usize, 1usize), (1, 2)]);
        let neg = Arc::new(vec![(0usize, 3usize), (2, 3)]);
        let inputs = vec![rand_tensor(4, 3, &mut rng)];
        let mut f = |xs: &[Tensor]| {
            let mut tape = Tape::new();
            let z = tape.tracked(xs[0].clone());
            let loss = tape.pair_bce(z, Arc::clone(&pos), Arc::clone(&neg)).unwrap();
            tape.backward(loss).unwrap();
            (tape.value(loss).scalar().unwrap(), vec![tape.grad(z).unwrap().clone()])
        };
        if let Err(e) = fd_check(&mut f, &inputs, PER_OP_TOL) {
            failures.push(format!("pair_bce case {case}: {e}"));
        }

        // gaussian_kl.
        let inputs = vec![rand_tensor(m, n, &mut rng), rand_tensor(m, n, &mut rng)];
        let mut f = |xs: &[Tensor]| {
            let mut tape = Tape::new();
            let mu = tape.tracked(xs[0].clone());
            let lv = tape.tracked(xs[1].clone());
            let loss = tape.gaussian_kl(mu, lv, 1.0 / m as f64).unwrap();
            tape.backward(loss).unwrap();
            (
                tape.value(loss).scalar().unwrap(),
                vec![tape.grad(mu).unwrap().clone(), tape.grad(lv).unwrap().clone()],
            )
        };
        if let Err(e) = fd_check(&mut f, &inputs, PER_OP_TOL) {
            failures.push(format!("gaussian_kl case {case}: {e}"));
        }
    }

    PropertyCheck::new(
        "per-op gradients match central finite differences",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{instances} instances per operation, rel tol {PER_OP_TOL}")
        } else {
            failures.join("; ")
        },
    )
}

/// End-to-end gradient of the full GAE and VGAE losses with respect to
/// every weight entry on random 6-node graphs, against finite differences.
pub fn check_composed_gradients(seed: u64, instances: usize) -> PropertyCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();

    for case in 0..instances {
        for kind in [ModelKind::Gae, ModelKind::Vgae, ModelKind::ResGae, ModelKind::ResVgae] {
            let g = random_graph(6, 0.5, 4, seed ^ (case as u64 * 31 + 7));
            let adj = Arc::new(normalize(&g));
            let cfg = EncoderConfig {
                hidden_dim: 5,
                latent_dim: 3,
                activation: if case % 2 == 0 { Activation::Sigmoid } else { Activation::Relu },
                ..EncoderConfig::new(kind, 3, 4)
            };
            let params = build_encoder(&cfg, &mut rng).unwrap();
            let weights: Vec<Tensor> = params.weights().iter().map(|w| (*w).clone()).collect();
            let eps_seed = rng.random_range(0..u64::MAX);

            let g_ref = &g;
            let adj_ref = &adj;
            let cfg_ref = &cfg;
            let mut eval = |xs: &[Tensor]| {
                let mut p = build_encoder(cfg_ref, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
                for (dst, src) in p.weights_mut().into_iter().zip(xs) {
                    *dst = src.clone();
                }
                let mut tape = Tape::new();
                let x = tape.constant(g_ref.features().clone());
                // The eps draw depends only on the rng stream, so reseeding
                // holds it fixed across FD evaluations.
                let mut eps_rng = ChaCha8Rng::seed_from_u64(eps_seed);
                let out = encode(&mut tape, &p, adj_ref, x, &mut eps_rng).unwrap();
                let mut loss_rng = ChaCha8Rng::seed_from_u64(1);
                let loss = if kind.is_variational() {
                    elbo_loss(&mut tape, &out.latent, g_ref, LossMode::FullMatrixWeighted, &mut loss_rng)
                        .unwrap()
                } else {
                    reconstruction_loss(
                        &mut tape,
                        out.latent.z,
                        g_ref,
                        LossMode::FullMatrixWeighted,
                        &mut loss_rng,
                    )
                    .unwrap()
                };
                tape.backward(loss).unwrap();
                let grads = out
                    .weight_ids
                    .iter()
                    .map(|&id| tape.grad(id).unwrap().clone())
                    .collect();
                (tape.value(loss).scalar().unwrap(), grads)
            };
            if let Err(e) = fd_check(&mut eval, &weights, COMPOSED_TOL) {
                failures.push(format!("{} case {case}: {e}", kind.label()));
            }
        }
    }

    PropertyCheck::new(
        "composed model-loss gradients match finite differences",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{instances} graphs x 4 model kinds, rel tol {COMPOSED_TOL}")
        } else {
            failures.join("; ")
        },
    )
}

/// Sparse normalization against the dense oracle on random graphs.
pub fn check_normalization(seed: u64, graphs: usize) -> PropertyCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..graphs {
        let n = rng.random_range(2..=20);
        let p = rng.random_range(0.05..0.6);
        let g = random_graph(n, p, 1, seed ^ (0x517A + case as u64));
        let sparse = normalize(&g).to_dense();
        let dense = dense_normalize_oracle(&g);
        for (a, b) in sparse.values().iter().zip(dense.values()) {
            worst = worst.max((a - b).abs());
        }
    }
    PropertyCheck::new(
        "sparse normalization matches dense oracle",
        worst < 1e-12,
        format!("{graphs} random graphs (n <= 20), max abs diff {worst:.3e}"),
    )
}

/// spmm against densified matmul on random graphs.
pub fn check_spmm(seed: u64, graphs: usize) -> PropertyCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..graphs {
        let n = rng.random_range(2..=20);
        let g = random_graph(n, 0.4, 1, seed ^ (0xBEEF + case as u64));
        let adj = normalize(&g);
        let x = rand_tensor(n, rng.random_range(1..=8), &mut rng);
        let sparse = kernels::spmm(&adj, &x);
        let dense = adj.to_dense().matmul(&x).unwrap();
        for (a, b) in sparse.values().iter().zip(dense.values()) {
            worst = worst.max((a - b).abs());
        }
    }
    PropertyCheck::new(
        "spmm matches densified matmul",
        worst < 1e-12,
        format!("{graphs} random graphs, max abs diff {worst:.3e}"),
    )
}

/// Random scored-label instances, a third of them tie-heavy (scores drawn
/// from a 4-value grid).
pub fn random_scored_labels<R: Rng + ?Sized>(max_len: usize, rng: &mut R) -> ScoredLabels {
    loop {
        let len = rng.random_range(2..=max_len);
        let tie_heavy = rng.random_range(0..3u8) == 0;
        let scores: Vec<f64> = (0..len)
            .map(|_| {
                if tie_heavy {
                    (rng.random_range(0..4u8) as f64) / 4.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        let labels: Vec<bool> = (0..len).map(|_| rng.random_range(0..2u8) == 1).collect();
        if let Ok(sl) = ScoredLabels::new(scores, labels) {
            return sl;
        }
    }
}

/// Sort-based metrics against their O(n^2) definitional oracles,
/// requiring exact equality.
pub fn check_metric_oracles(seed: u64, instances: usize) -> PropertyCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for case in 0..instances {
        let sl = random_scored_labels(50, &mut rng);
        let (fast, slow) = (auc(&sl), auc_bruteforce(&sl));
        if fast != slow {
            failures.push(format!("auc case {case}: {fast} != {slow}"));
        }
        let (fast, slow) = (average_precision(&sl), ap_bruteforce(&sl));
        if fast != slow {
            failures.push(format!("ap case {case}: {fast} != {slow}"));
        }
        if failures.len() > 4 {
            break;
        }
    }
    PropertyCheck::new(
        "auc/ap match O(n^2) definitional oracles exactly",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{instances} random instances (len <= 50) incl. tie-heavy cases")
        } else {
            failures.join("; ")
        },
    )
}

/// Runs the full suite. `cargo test` exercises the same checks with the
/// acceptance tolerances; this entry point exists so a release binary can
/// re-verify itself on the target machine.
pub fn run_all(seed: u64) -> Vec<PropertyCheck> {
    vec![
        check_op_gradients(seed, 50),
        check_composed_gradients(seed.wrapping_add(1), 50),
        check_normalization(seed.wrapping_add(2), 100),
        check_spmm(seed.wrapping_add(3), 100),
        check_metric_oracles(seed.wrapping_add(4), 1000),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_ap_matches_hand_example() {
        let sl = ScoredLabels::new(vec![0.9, 0.8, 0.7], vec![true, false, true]).unwrap();
        assert!((ap_bruteforce(&sl) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_auc_matches_hand_example() {
        let sl = ScoredLabels::new(vec![0.9, 0.8, 0.3, 0.1], vec![true, false, true, false]).unwrap();
        assert_eq!(auc_bruteforce(&sl), 0.75);
    }

    #[test]
    fn grad_close_handles_near_zero() {
        assert!(grad_close(0.0, 1e-11, 1e-4));
        assert!(!grad_close(1.0, 1.1, 1e-4));
    }
}
