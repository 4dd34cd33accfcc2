//! Synthetic signals, measurement operators, the noisy measurement process
//! `y = A x + w`, and scalar metrics.
//!
//! Every operator is normalized so that `Tr{AAᵀ}/N = 1`. Three kinds exist:
//!
//! * dense i.i.d. Gaussian (explicit matrix, exact spectral moments);
//! * FIJL, `A = J·S·P·H·D` with random signs `D`, orthonormal DCT `H`, random
//!   permutation `P`, geometric singular values `S` of condition number κ and
//!   the first-M row selector `J`;
//! * spectral-Gaussian, the same fast factorization carrying the
//!   Marchenko–Pastur spectrum of a Gaussian matrix, for sizes where a dense
//!   matrix does not fit in memory.
//!
//! For both structured kinds `AAᵀ = diag(s²)`, so Gram solves are diagonal.

mod measure;
mod operator;
mod signal;

pub use measure::{measure, nmse, snr_to_vw, MeasurementModel};
pub(crate) use operator::GramEigen;
pub use operator::{
    chi_moment, chi_moment_with_probes, dense_operator, gen_fijl_operator, gen_gaussian_operator,
    gen_spectral_gaussian_operator, geometric_singular_values, marchenko_pastur_quantiles, ChiMoment,
    LinearOperator, OperatorKind, DEFAULT_HUTCHINSON_PROBES,
};
pub use signal::{gen_signal, SignalKind, SignalSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinModelError {
    #[error("unknown kind `{0}`")]
    UnknownKind(String),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("invalid operator shape {m}×{n} (need 1 ≤ M ≤ N)")]
    InvalidShape { m: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("spectral moment j={0} unsupported (j ∈ {{1, 2, 3}})")]
    UnsupportedMoment(u32),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("reading {0}: {1}")]
    Io(String, #[source] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecops::dot;
    use rand::Rng;

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::seeding::rng_from_seed(seed);
        (0..n).map(|_| rng.gen::<f64>() - 0.5).collect()
    }

    fn adjoint_gap(op: &LinearOperator) -> f64 {
        let u = random_vec(op.rows(), 11);
        let v = random_vec(op.cols(), 12);
        let lhs = dot(&u, &op.apply(&v));
        let rhs = dot(&op.adjoint(&u), &v);
        (lhs - rhs).abs() / (dot(&u, &u).sqrt() * dot(&v, &v).sqrt())
    }

    #[test]
    fn gaussian_one_by_one_is_unit_magnitude() {
        let op = gen_gaussian_operator(1, 1, 3).unwrap();
        let a = op.to_dense();
        assert!((a[(0, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_is_trace_normalized_and_chi2_at_least_one() {
        let op = gen_gaussian_operator(64, 128, 5).unwrap();
        let chi1 = chi_moment(&op, 1).unwrap();
        assert!((chi1.value - 1.0).abs() <= 1e-8);
        assert!(chi_moment(&op, 2).unwrap().value >= 1.0);
        assert!(adjoint_gap(&op) <= 1e-10);
    }

    #[test]
    fn rejects_wide_shapes_and_bad_kappa() {
        assert!(gen_gaussian_operator(4, 2, 0).is_err());
        assert!(gen_fijl_operator(2, 4, 0.5, 0).is_err());
        assert!(chi_moment(&gen_gaussian_operator(2, 4, 0).unwrap(), 4).is_err());
    }

    #[test]
    fn dense_chi2_matches_eigenvalue_sum() {
        let op = gen_gaussian_operator(50, 200, 9).unwrap();
        let a = op.to_dense();
        let eig = nalgebra::SymmetricEigen::new(&a * a.transpose()).eigenvalues;
        let brute: f64 = eig.iter().map(|l| l * l).sum::<f64>() / 200.0;
        let chi2 = chi_moment(&op, 2).unwrap().value;
        assert!((chi2 - brute).abs() <= 1e-10 * brute);
        let brute3: f64 = eig.iter().map(|l| l * l * l).sum::<f64>() / 200.0;
        assert!((chi_moment(&op, 3).unwrap().value - brute3).abs() <= 1e-9 * brute3);
    }

    #[test]
    fn fijl_flat_spectrum_matches_dense_expansion() {
        let (m, n) = (64, 256);
        let op = gen_fijl_operator(m, n, 1.0, 4).unwrap();
        assert!(adjoint_gap(&op) <= 1e-10);
        let a = op.to_dense();
        let g = &a * a.transpose();
        let brute_chi2 = g.norm_squared() / n as f64;
        let est = chi_moment(&op, 2).unwrap();
        assert!((est.value - brute_chi2).abs() <= 1e-10);
        // Flat spectrum: every eigenvalue of AAᵀ equals N/M.
        assert!((brute_chi2 - n as f64 / m as f64).abs() <= 1e-10);
    }

    #[test]
    fn fijl_condition_number_and_normalization() {
        let op = gen_fijl_operator(200, 1024, 1000.0, 8).unwrap();
        let s = op.singular_values().unwrap();
        let ratio = s.iter().cloned().fold(0.0, f64::max) / s.iter().cloned().fold(f64::MAX, f64::min);
        assert!((ratio / 1000.0 - 1.0).abs() <= 1e-6);
        let chi1 = chi_moment(&op, 1).unwrap();
        assert!((chi1.value - 1.0).abs() <= 1e-8 + 3.0 * chi1.std_err);
        assert!(adjoint_gap(&op) <= 1e-10);
    }

    #[test]
    fn structured_rows_are_orthogonal_up_to_scaling() {
        let op = gen_fijl_operator(16, 32, 10.0, 1).unwrap();
        let a = op.to_dense();
        let g = &a * a.transpose();
        let s = op.singular_values().unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let expect = if i == j { s[i] * s[i] } else { 0.0 };
                assert!((g[(i, j)] - expect).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn spectral_gaussian_moments_follow_marchenko_pastur() {
        let (m, n) = (2048, 4096);
        let op = gen_spectral_gaussian_operator(m, n, 2).unwrap();
        assert!(adjoint_gap(&op) <= 1e-10);
        // Gaussian limit: χ₂ = 1 + 1/δ.
        let chi2 = chi_moment(&op, 2).unwrap().value;
        assert!((chi2 - 3.0).abs() < 0.01, "chi2 {chi2}");
        let q = marchenko_pastur_quantiles(1000, 0.25);
        let mean = q.iter().sum::<f64>() / 1000.0;
        let second = q.iter().map(|v| v * v).sum::<f64>() / 1000.0;
        assert!((mean - 1.0).abs() < 1e-3 && (second - 1.25).abs() < 5e-3, "{mean} {second}");
    }

    #[test]
    fn noiseless_measurement_is_exact() {
        let op = std::sync::Arc::new(gen_gaussian_operator(20, 40, 1).unwrap());
        let x = random_vec(40, 3);
        let model = measure(x.clone(), op.clone(), 0.0, 4).unwrap();
        assert_eq!(model.y, op.apply(&x));
        assert!(measure(vec![0.0; 3], op, 1.0, 0).is_err());
    }

    #[test]
    fn nmse_examples() {
        let x = vec![1.0, -2.0, 3.0];
        assert_eq!(nmse(&x, &x).unwrap(), 0.0);
        assert_eq!(nmse(&[0.0; 3], &x).unwrap(), 1.0);
        let twice: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!((nmse(&twice, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&x, &[0.0; 3]).is_err());
    }

    #[test]
    fn signal_examples() {
        let full = SignalSpec::bernoulli_gaussian(4, 1.0);
        assert!(gen_signal(&full, 1).unwrap().iter().all(|v| *v != 0.0));
        assert!(gen_signal(&SignalSpec::bernoulli_gaussian(4, 0.0), 1).is_err());
        assert!(gen_signal(&SignalSpec::bernoulli_gaussian(0, 0.5), 1).is_err());
        let spec = SignalSpec::bernoulli_gaussian(100, 0.3);
        assert_eq!(gen_signal(&spec, 7).unwrap(), gen_signal(&spec, 7).unwrap());
        assert!(SignalKind::parse("laplace", None).is_err());
    }
}
