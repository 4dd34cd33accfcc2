mod common;

use proptest::prelude::*;
use smp_core::denoise::SoftThreshold;
use smp_core::diag::{
    deriv_rhs_mf_oamp, deriv_rhs_vamp, excess_kurtosis, psi_inner, relative_gap, se_checks, vamp_sign_condition,
};
use smp_core::linmodel::OperatorKind;
use smp_core::smp::{run_observed, Algorithm, EstimatorChoice, RunOptions};

#[test]
fn gaussian_sample_has_small_excess_kurtosis() {
    for seed in 0..20 {
        let h = common::gaussian_vec(8192, 0.3, seed);
        assert!(excess_kurtosis(&h).abs() <= 0.5, "seed {seed}");
    }
}

#[test]
fn independent_errors_have_small_inner_product() {
    let (n, v_q, v_qbar) = (4096, 0.2, 0.05);
    for seed in 0..50 {
        let q = common::gaussian_vec(n, f64::sqrt(v_q), 2 * seed);
        let qbar = common::gaussian_vec(n, f64::sqrt(v_qbar), 2 * seed + 1);
        let psi = psi_inner(&q, &qbar).unwrap();
        assert!(psi.abs() <= 4.0 * (v_q * v_qbar / n as f64).sqrt(), "seed {seed}: {psi}");
    }
}

#[test]
fn se_checks_hold_for_an_oracle_vamp_run() {
    let model = common::sparse_model(OperatorKind::SpectralGaussian, 1 << 14, 0.5, 0.1, 40.0, 1.0, 4);
    let opts = RunOptions { estimator: EstimatorChoice::Analytic, iterations: 6, ..Default::default() }.oracle();
    let chi2 = smp_core::linmodel::chi_moment(&model.op, 2).unwrap().value;
    let mut rows = Vec::new();
    let rec = run_observed(&model, &SoftThreshold { multiplier: 1.5 }, Algorithm::Vamp, &opts, &mut |st| {
        if st.t == 0 {
            assert_eq!(st.z, model.y.as_slice());
        }
        rows.push(se_checks(st, &model, chi2));
    })
    .unwrap();
    for (row, logged) in rows.iter().zip(&rec.rows) {
        assert_eq!(Some(*row), logged.se);
        assert!(row.noise_ok(), "{row:?}");
        assert!(row.kurtosis_ok(0.5), "{row:?}");
        assert!(row.h_mean.abs() <= row.h_mean_bound, "{row:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mf_oamp_rhs_sign_follows_psi_gap(chi2 in 1.0f64..10.0, v_q in 1e-4f64..10.0, frac in -1.0f64..0.999) {
        let psi = frac * v_q;
        let rhs = deriv_rhs_mf_oamp(chi2, psi, v_q);
        if chi2 > 1.0 {
            prop_assert!(rhs >= 0.0);
        }
        prop_assert!(deriv_rhs_mf_oamp(1.0, psi, v_q) == 0.0);
    }

    #[test]
    fn vamp_rhs_vanishes_at_boundaries(v_w in 1e-4f64..1.0, v_h in 1e-4f64..1.0, v_q in 1e-4f64..1.0) {
        prop_assert!(deriv_rhs_vamp(v_w, v_w, v_q, 0.3 * v_q).unwrap().abs() <= 1e-12);
        prop_assert!(deriv_rhs_vamp(v_w, v_h, v_q, v_q).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn sign_condition_is_trivial_without_noise(v_q in 1e-6f64..10.0, delta in 0.01f64..0.99) {
        prop_assert!(vamp_sign_condition(v_q, 0.0, delta).unwrap());
    }

    #[test]
    fn relative_gap_is_symmetric_and_bounded(a in -1e3f64..1e3, b in -1e3f64..1e3) {
        let g = relative_gap(a, b, 1e-12);
        prop_assert_eq!(g, relative_gap(b, a, 1e-12));
        prop_assert!((0.0..=2.0).contains(&g));
    }
}
