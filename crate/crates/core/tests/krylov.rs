mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use smp_core::krylov::{
    cg_solve, cg_solve_with, exact_solve, gamma_from_recursion, gamma_recursion, k_statistic, trace_gamma,
    CgOptions, WOperator,
};
use smp_core::linmodel::{gen_fijl_operator, gen_gaussian_operator, gen_spectral_gaussian_operator, LinearOperator};
use smp_core::vecops;

/// Independent dense oracle: Cholesky solve of `v_w I + v_q AAᵀ`.
fn dense_solve(op: &LinearOperator, v_w: f64, v_q: f64, z: &[f64]) -> Vec<f64> {
    let a = op.to_dense();
    let m = a.nrows();
    let w = DMatrix::identity(m, m) * v_w + (&a * a.transpose()) * v_q;
    let chol = w.cholesky().expect("W is SPD");
    chol.solve(&DVector::from_column_slice(z)).data.into()
}

/// `z = A q + w` with `q ~ N(0, v_q)` and `w ~ N(0, v_w)`.
fn linear_step_input(op: &LinearOperator, v_q: f64, v_w: f64, seed: u64) -> Vec<f64> {
    let q = common::gaussian_vec(op.cols(), v_q.sqrt(), seed);
    let mut z = op.apply(&q);
    vecops::axpy(1.0, &common::gaussian_vec(op.rows(), v_w.sqrt(), seed + 1), &mut z);
    z
}

#[test]
fn full_length_cg_matches_dense_solve() {
    for (m, n) in [(64, 128), (256, 512), (512, 1024)] {
        let op = gen_gaussian_operator(m, n, m as u64).unwrap();
        let w = WOperator::new(&op, 0.01, 0.2);
        let z = linear_step_input(&op, 0.2, 0.01, 5);
        let trace = cg_solve(&w, &z, m, 0.0).unwrap();
        let oracle = dense_solve(&op, 0.01, 0.2, &z);
        assert!(common::rel_err(&trace.mu, &oracle) <= 1e-6, "M = {m}");
        let resid = vecops::dist_sq(&w.apply(&trace.mu), &z).sqrt() / vecops::norm_sq(&z).sqrt();
        assert!(resid <= 1e-8, "M = {m}: {resid}");
    }
}

#[test]
fn exact_solve_matches_cholesky() {
    let op = gen_gaussian_operator(128, 256, 2).unwrap();
    let w = WOperator::new(&op, 0.03, 1.7);
    let z = common::gaussian_vec(128, 1.0, 4);
    let mu = exact_solve(&w, &z).unwrap();
    let resid = vecops::dist_sq(&w.apply(&mu), &z).sqrt() / vecops::norm_sq(&z).sqrt();
    assert!(resid <= 1e-10);
    assert!(common::rel_err(&mu, &dense_solve(&op, 0.03, 1.7, &z)) <= 1e-9);
}

fn recursion_gamma_gap(op: &LinearOperator, v_w: f64, v_q: f64) -> f64 {
    let n = op.cols();
    let w = WOperator::new(op, v_w, v_q);
    let z = linear_step_input(op, v_q, v_w, 3);
    let trace = cg_solve(&w, &z, op.rows(), 1e-12).unwrap();
    let psi = gamma_recursion(&trace, v_w, op.delta(), n).unwrap();
    let gamma_hat = gamma_from_recursion(&trace, &psi, v_q, n).unwrap();
    let exact = trace_gamma(&w).unwrap();
    (gamma_hat - exact).abs() / exact
}

#[test]
fn recursion_gamma_tracks_trace_at_exact_solve() {
    // The recursion error accumulates over CG steps and shrinks like N^{-1/2};
    // at N = 2048 a converged solve still carries a 10-15% bias.
    let dense = recursion_gamma_gap(&gen_gaussian_operator(1024, 2048, 1).unwrap(), 1e-3, 0.05);
    assert!(dense <= 0.2, "N = 2048: {dense}");
    let n = 1 << 17;
    let large = recursion_gamma_gap(&gen_spectral_gaussian_operator(n / 2, n, 1).unwrap(), 1e-3, 0.05);
    assert!(large <= 0.05, "N = 2^17: {large}");
}

#[test]
fn k_identity_and_flat_spectrum() {
    let (m, n) = (512, 1024);
    let op = gen_fijl_operator(m, n, 1.0, 6).unwrap();
    let (v_w, v_q) = (1e-2, 0.1);
    let w = WOperator::new(&op, v_w, v_q);
    let z = linear_step_input(&op, v_q, v_w, 8);
    let trace = cg_solve(&w, &z, m, 1e-13).unwrap();
    let gamma = trace_gamma(&w).unwrap();
    let k = k_statistic(&trace, &w, gamma, n).unwrap();
    assert!((k.k - 1.0).abs() <= 0.1, "k = {}", k.k);
    assert!(k.identity_residual <= 1e-8 * k.at_mu_norm_sq);
    assert!(k.conjugacy_residual <= 1e-6 * k.at_mu_norm_sq);
}

#[test]
fn first_recursion_step_equals_step_size_times_noise_level() {
    let op = gen_gaussian_operator(100, 200, 0).unwrap();
    let w = WOperator::new(&op, 0.02, 0.3);
    let z = linear_step_input(&op, 0.3, 0.02, 1);
    let trace = cg_solve(&w, &z, 3, 0.0).unwrap();
    let psi = gamma_recursion(&trace, 0.02, 0.5, 200).unwrap();
    assert_eq!(psi.psi[0], 0.0);
    assert!((psi.psi[1] - trace.step_sizes[0] * 0.5 * 0.02).abs() <= 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cg_energy_decreases_and_iterates_are_galerkin(m in 2usize..64, v_w in 1e-3f64..1.0, v_q in 1e-3f64..5.0, seed: u64) {
        let op = gen_gaussian_operator(m, 2 * m, seed).unwrap();
        let w = WOperator::new(&op, v_w, v_q);
        let z = common::gaussian_vec(m, 1.0, seed ^ 3);
        let opts = CgOptions { i_max: m, residual_tol: 1e-12, keep_iterates: true };
        let trace = cg_solve_with(&w, &z, &opts).unwrap();
        prop_assert!(trace.step_sizes.iter().all(|a| *a > 0.0));
        // zᵀμʲ = μʲᵀWμʲ, so the CG energy −zᵀμʲ/2 is nonincreasing.
        let zz = trace.z_norm_sq;
        for pair in trace.z_dot_mu.windows(2) {
            prop_assert!(pair[1] >= pair[0] - 1e-10 * zz / v_w);
        }
        for (mu, zmu) in trace.iterates.as_ref().unwrap().iter().zip(&trace.z_dot_mu) {
            let energy = vecops::dot(mu, &w.apply(mu));
            prop_assert!((energy - zmu).abs() <= 1e-8 * (zz / v_w).max(1.0));
        }
    }
}
