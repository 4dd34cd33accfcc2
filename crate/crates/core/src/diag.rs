//! Finite-size checks of the asymptotic identities behind the estimators.
//!
//! The derivative of the polynomial estimator's quadratic at the true
//! divergence α*, `(u2 + 2u3·α*)/2`, has closed forms for each
//! orthogonal-family algorithm in terms of `ψ_t = q_tᵀq̄_{t+1}/N`:
//!
//! ```text
//! MF-OAMP  (1 − χ₂)(ψ − v_q)
//! VAMP     ((v_w − v_h)/v_q)(ψ − v_q)
//! CG-VAMP  (k v_q − ψ)/(γ v_q) − (v_q − ψ) − v_w
//!            + (ψ/v_q)(v_w·wᵀμ/N − δ v_w + 2 v_w γ v_q)/(γ v_q)
//! ```
//!
//! Each holds almost surely as N → ∞; at finite N the harness compares the
//! two sides by median relative gap. `se_checks` tests the error-vector
//! properties (orthogonality, independence from the noise, Gaussianity)
//! against 4/√N concentration thresholds.

use thiserror::Error;

use crate::divest::QuadCoeffs;
use crate::linmodel::MeasurementModel;
use crate::smp::{IterationState, SeRow};
use crate::vecops;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagError {
    #[error("{0} must be positive, got {1}")]
    NonPositive(&'static str, f64),
    #[error("δ = {0} must lie in (0, 1)")]
    DeltaOutOfRange(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// `q_tᵀ q̄_{t+1}/N`.
pub fn psi_inner(q_t: &[f64], qbar_next: &[f64]) -> Result<f64, DiagError> {
    if q_t.len() != qbar_next.len() {
        return Err(DiagError::LengthMismatch(q_t.len(), qbar_next.len()));
    }
    Ok(vecops::dot(q_t, qbar_next) / q_t.len().max(1) as f64)
}

/// `(u2 + 2u3·α*)/2`.
pub fn deriv_lhs(coeffs: &QuadCoeffs, alpha_star: f64) -> f64 {
    0.5 * coeffs.slope(alpha_star)
}

pub fn deriv_rhs_mf_oamp(chi2: f64, psi: f64, v_q: f64) -> f64 {
    (1.0 - chi2) * (psi - v_q)
}

pub fn deriv_rhs_vamp(v_w: f64, v_h: f64, v_q: f64, psi: f64) -> Result<f64, DiagError> {
    if !(v_q > 0.0) {
        return Err(DiagError::NonPositive("v_q", v_q));
    }
    Ok((v_w - v_h) / v_q * (psi - v_q))
}

#[allow(clippy::too_many_arguments)]
pub fn deriv_rhs_cg_vamp(
    k: f64,
    v_q: f64,
    psi: f64,
    gamma: f64,
    v_w: f64,
    delta: f64,
    wtmu: f64,
) -> Result<f64, DiagError> {
    if !(gamma > 0.0) {
        return Err(DiagError::NonPositive("gamma", gamma));
    }
    if !(v_q > 0.0) {
        return Err(DiagError::NonPositive("v_q", v_q));
    }
    let gv = gamma * v_q;
    Ok((k * v_q - psi) / gv - (v_q - psi) - v_w
        + psi / v_q * (v_w * wtmu - delta * v_w + 2.0 * v_w * gv) / gv)
}

/// `v_q > v_w/(δ⁻¹ − 1)`, under which `v_h − v_w > 0` for VAMP.
pub fn vamp_sign_condition(v_q: f64, v_w: f64, delta: f64) -> Result<bool, DiagError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DiagError::DeltaOutOfRange(delta));
    }
    Ok(v_q > v_w / (1.0 / delta - 1.0))
}

/// `|a − b|/max(|a|, |b|, eps)`.
pub fn relative_gap(a: f64, b: f64, eps: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(eps)
}

/// Inputs that produced a derivative comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeInputs {
    pub psi: f64,
    pub v_q: f64,
    pub v_h: f64,
    pub v_w: f64,
    pub gamma: f64,
    pub k: f64,
    pub chi2: f64,
    pub wtmu: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeReport {
    pub lhs: f64,
    pub rhs: f64,
    pub inputs: DerivativeInputs,
    pub gap: f64,
}

impl DerivativeReport {
    pub fn new(lhs: f64, rhs: f64, inputs: DerivativeInputs, eps: f64) -> Self {
        Self { lhs, rhs, inputs, gap: relative_gap(lhs, rhs, eps) }
    }
}

/// Sample excess kurtosis `m₄/m₂² − 3`.
pub fn excess_kurtosis(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let (m2, m4) = v.iter().fold((0.0, 0.0), |(a, b), x| {
        let d = (x - mean) * (x - mean);
        (a + d, b + d * d)
    });
    let m2 = m2 / n;
    (m4 / n) / (m2 * m2) - 3.0
}

/// State-evolution consistency statistics for `state` against ground truth.
pub fn se_checks(state: &IterationState, model: &MeasurementModel, chi2: f64) -> SeRow {
    let n = model.n() as f64;
    let q = vecops::sub(&state.s, &model.x);
    let h = vecops::sub(&state.r, &model.x);
    // A q = A s − A x = A s − (y − w).
    let a_q: Vec<f64> = state
        .a_s
        .iter()
        .zip(model.y.iter().zip(&model.w))
        .map(|(as_i, (y, w))| as_i - (y - w))
        .collect();
    let v_q = vecops::norm_sq(&q) / n;
    let v_h = vecops::norm_sq(&h) / n;
    let v_x = vecops::norm_sq(&model.x) / n;
    SeRow {
        h_q: vecops::dot(&h, &q).abs() / n,
        h_q_bound: 4.0 * (v_h * v_q / n).sqrt(),
        h_q0: vecops::dot(&h, &model.x).abs() / n,
        h_q0_bound: 4.0 * (v_h * v_x / n).sqrt(),
        w_aq: vecops::dot(&model.w, &a_q).abs() / n,
        w_aq_bound: 4.0 * (model.v_w * v_q * chi2 / n).sqrt(),
        h_excess_kurtosis: excess_kurtosis(&h),
        h_mean: h.iter().sum::<f64>() / n,
        h_mean_bound: 4.0 * (v_h / n).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_examples() {
        let c = QuadCoeffs { u1: 0.0, u2: 0.0, u3: 0.0 };
        assert_eq!(deriv_lhs(&c, 5.0), 0.0);
        let c = QuadCoeffs { u1: 0.0, u2: 3.0, u3: -1.0 };
        assert_eq!(deriv_lhs(&c, 2.0), -0.5);
        assert_eq!(deriv_rhs_mf_oamp(1.0, 0.3, 0.7), 0.0);
        assert!(deriv_rhs_mf_oamp(2.0, 0.1, 0.5) > 0.0);
        assert_eq!(deriv_rhs_vamp(0.2, 0.2, 1.0, 0.5).unwrap(), 0.0);
        assert_eq!(deriv_rhs_vamp(0.2, 0.7, 1.0, 1.0).unwrap(), 0.0);
        assert!(deriv_rhs_vamp(0.2, 0.7, 0.0, 1.0).is_err());
    }

    #[test]
    fn cg_rhs_without_psi_reduces() {
        let (k, v_q, gamma, v_w) = (0.8, 0.5, 1.7, 0.01);
        let rhs = deriv_rhs_cg_vamp(k, v_q, 0.0, gamma, v_w, 0.3, 0.02).unwrap();
        assert!((rhs - (k / gamma - v_q - v_w)).abs() < 1e-15);
        assert!(deriv_rhs_cg_vamp(k, v_q, 0.0, 0.0, v_w, 0.3, 0.0).is_err());
    }

    #[test]
    fn sign_condition_examples() {
        assert!(vamp_sign_condition(1e-9, 0.0, 0.3).unwrap());
        assert!(!vamp_sign_condition(1.0, 1.0, 0.5).unwrap());
        assert!(vamp_sign_condition(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn psi_examples() {
        let q = [1.0, -2.0, 0.5, 3.0];
        assert!((psi_inner(&q, &q).unwrap() - vecops::norm_sq(&q) / 4.0).abs() < 1e-15);
        assert_eq!(psi_inner(&q, &[0.0; 4]).unwrap(), 0.0);
    }
}
