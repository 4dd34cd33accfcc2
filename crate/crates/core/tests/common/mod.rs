//! Shared builders for integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use smp_core::linmodel::{
    gen_fijl_operator, gen_gaussian_operator, gen_signal, gen_spectral_gaussian_operator, measure, snr_to_vw,
    MeasurementModel, OperatorKind, SignalSpec,
};
use smp_core::seeding;

/// Sparse-recovery problem: Bernoulli-Gaussian x, the requested operator,
/// noise at `snr_db`. Component seeds are derived from `seed`.
pub fn sparse_model(
    kind: OperatorKind,
    n: usize,
    delta: f64,
    sparsity: f64,
    snr_db: f64,
    kappa: f64,
    seed: u64,
) -> MeasurementModel {
    let m = (delta * n as f64).round() as usize;
    let x = gen_signal(&SignalSpec::bernoulli_gaussian(n, sparsity), seeding::derive_seed(seed, seeding::SIGNAL, 0))
        .unwrap();
    let op_seed = seeding::derive_seed(seed, seeding::OPERATOR, 0);
    let op = match kind {
        OperatorKind::DenseGaussian => gen_gaussian_operator(m, n, op_seed),
        OperatorKind::SpectralGaussian => gen_spectral_gaussian_operator(m, n, op_seed),
        OperatorKind::Fijl => gen_fijl_operator(m, n, kappa, op_seed),
    }
    .unwrap();
    let op = Arc::new(op);
    let v_w = snr_to_vw(&x, &op, snr_db).unwrap();
    measure(x, op, v_w, seeding::derive_seed(seed, seeding::NOISE, 0)).unwrap()
}

pub fn gaussian_vec(n: usize, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = seeding::rng_from_seed(seed);
    (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}
