//! Finite-difference verification for every primitive operation.
//!
//! Each test builds a small random input in `f64`, reduces the op's output to
//! a scalar through a fixed non-uniform probe (so upstream gradients are not
//! all ones), and compares tape gradients against central differences.

use encoderlab::{grad_check, Graph, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-7;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap().with_grad()
}

/// Deterministic probe weights so the scalar loss has distinct sensitivities.
fn probe_for(shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|i| 0.25 + 0.11 * (i as f64 % 7.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn probed(g: &mut Graph<f64>, t: &Tensor<f64>) -> Result<Tensor<f64>> {
    let probe = probe_for(&t.shape());
    let weighted = g.mul(t, &probe)?;
    Ok(g.sum_all(&weighted))
}

fn assert_passes(report: encoderlab::GradCheckReport) {
    assert!(
        report.passed(TOL),
        "max rel err {:.3e} at {:?} over {} coordinates",
        report.max_rel_err,
        report.worst,
        report.checked
    );
}

#[test]
fn fd_add_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[1, 4], -1.0, 1.0);
    let params = [a.clone(), b.clone()];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let y = g.add(&a, &b)?;
            probed(g, &y)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert_passes(report);
}

#[test]
fn fd_sub_broadcast_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[3, 1], -1.0, 1.0);
    let params = [a.clone(), b.clone()];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let y = g.sub(&a, &b)?;
            probed(g, &y)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert_passes(report);
}

#[test]
fn fd_mul_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = rand_tensor(&mut rng, &[2, 5], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[1, 5], -1.0, 1.0);
    let params = [a.clone(), b.clone()];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let y = g.mul(&a, &b)?;
            probed(g, &y)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert_passes(report);
}

#[test]
fn fd_div_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = rand_tensor(&mut rng, &[3, 3], -1.0, 1.0);
    // Keep the denominator well away from zero.
    let b = rand_tensor(&mut rng, &[3, 1], 0.5, 1.5);
    let params = [a.clone(), b.clone()];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let y = g.div(&a, &b)?;
            probed(g, &y)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert_passes(report);
}

#[test]
fn fd_unary_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = rand_tensor(&mut rng, &[2, 4], -1.5, 1.5);
    let params = [x.clone()];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let e = g.exp(&x);
            let t = g.tanh(&e);
            let s = g.sigmoid(&t);
            let scaled = g.scale(&s, 1.7);
            let shifted = g.add_scalar(&scaled, -0.3);
            probed(g, &shifted)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert_passes(report);
}

#[test]
fn fd_powf_on_positive_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = rand_tensor(&mut rng, &[6], 0.4, 2.0);
    let params = [x.clone()];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let y = g.powf(&x, -0.5);
            probed(g, &y)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert_passes(report);
}

#[test]
fn fd_matmul_and_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[4, 2], -1.0, 1.0);
    let params = [a.clone(), b.clone()];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let c = g.matmul(&a, &b)?;
            let ct = g.transpose(&c)?;
            probed(g, &ct)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert_passes(report);
}

#[test]
fn fd_row_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let x = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
    let params = [x.clone()];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let s = g.sum_rows(&x)?;
            let m = g.mean_rows(&x)?;
            let both = g.concat_cols(&[&s, &m])?;
            probed(g, &both)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert_passes(report);
}

#[test]
fn fd_softmax_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = rand_tensor(&mut rng, &[3, 5], -2.0, 2.0);
    let params = [x.clone()];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let s = g.softmax_rows(&x)?;
            probed(g, &s)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert_passes(report);
}

#[test]
fn fd_softmax_cross_entropy_with_partial_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let logits = rand_tensor(&mut rng, &[5, 7], -2.0, 2.0);
    let targets = vec![3, 0, 6, 2, 5];
    let selected = vec![true, false, true, true, false];
    let params = [logits.clone()];
    let report = grad_check(
        |g: &mut Graph<f64>| g.softmax_cross_entropy(&logits, &targets, &selected),
        &params,
        EPS,
    )
    .unwrap();
    assert_passes(report);
}

#[test]
fn fd_embedding_with_repeated_ids() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let table = rand_tensor(&mut rng, &[6, 3], -1.0, 1.0);
    let ids = vec![4, 1, 4, 0, 1, 4];
    let params = [table.clone()];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let rows = g.embedding(&table, &ids)?;
            probed(g, &rows)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert_passes(report);
}

#[test]
fn fd_slice_and_concat() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = rand_tensor(&mut rng, &[3, 6], -1.0, 1.0);
    let params = [x.clone()];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let a = g.slice_cols(&x, 0, 2)?;
            let b = g.slice_cols(&x, 2, 4)?;
            // Swap halves so the concat layout differs from the source.
            let y = g.concat_cols(&[&b, &a])?;
            probed(g, &y)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert_passes(report);
}

#[test]
fn fd_concat_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let a = rand_tensor(&mut rng, &[2, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
    let params = [a.clone(), b.clone()];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let stacked = g.concat_rows(&[&a, &b])?;
            probed(g, &stacked)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert_passes(report);
}

#[test]
fn fd_rope_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = rand_tensor(&mut rng, &[4, 8], -1.0, 1.0);
    let positions = vec![0, 1, 5, 9];
    let params = [x.clone()];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let y = g.rope(&x, &positions, 250_000.0, 4)?;
            probed(g, &y)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert_passes(report);
}

#[test]
fn fd_shared_input_used_twice() {
    // x feeds two branches; accumulation must sum both contributions.
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let x = rand_tensor(&mut rng, &[3, 3], -1.0, 1.0);
    let params = [x.clone()];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let sq = g.mul(&x, &x)?;
            let t = g.tanh(&x);
            let mixed = g.add(&sq, &t)?;
            probed(g, &mixed)
        },
        &params,
        EPS,
    )
    .unwrap();
    assert_passes(report);
}
