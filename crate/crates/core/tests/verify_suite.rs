//! The built-in oracle suite at full strength: finite-difference gradient
//! checks for every operation and both composed losses, the dense
//! normalization oracle, and the definitional metric oracles.

use resvgae_core::verify;

#[test]
fn op_gradients_match_finite_differences() {
    let check = verify::check_op_gradients(0xA11CE, 50);
    assert!(check.passed, "{}", check.detail);
}

#[test]
fn composed_loss_gradients_match_finite_differences() {
    let check = verify::check_composed_gradients(0xB0B, 50);
    assert!(check.passed, "{}", check.detail);
}

#[test]
fn normalization_matches_dense_oracle_on_100_graphs() {
    let check = verify::check_normalization(0x5EED, 100);
    assert!(check.passed, "{}", check.detail);
}

#[test]
fn spmm_matches_densified_matmul_on_100_graphs() {
    let check = verify::check_spmm(0xCAFE, 100);
    assert!(check.passed, "{}", check.detail);
}

#[test]
fn metrics_match_bruteforce_oracles_on_1000_instances() {
    let check = verify::check_metric_oracles(0xD00D, 1000);
    assert!(check.passed, "{}", check.detail);
}
