//! The linear-step system `W μ = z` with `W = v_w I + v_q A Aᵀ`.
//!
//! `cg_solve` runs plain conjugate gradients from `μ⁰ = 0`:
//!
//! ```text
//! r⁰ = p⁰ = z
//! for i = 0, 1, …
//!     d    = W pⁱ
//!     aⁱ   = ‖rⁱ‖² / pⁱᵀd
//!     μⁱ⁺¹ = μⁱ + aⁱ pⁱ
//!     rⁱ⁺¹ = rⁱ − aⁱ d
//!     bⁱ   = ‖rⁱ⁺¹‖² / ‖rⁱ‖²
//!     pⁱ⁺¹ = rⁱ⁺¹ + bⁱ pⁱ
//! ```
//!
//! and records every scalar. From those scalars alone, `gamma_recursion`
//! tracks `ψⁱ ≈ wᵀμⁱ/N` without access to the noise:
//!
//! ```text
//! ψ⁰ = 0,  η⁰ = δ v_w
//! ψⁱ = ψⁱ⁻¹ + aⁱ⁻¹ ηⁱ⁻¹
//! ηⁱ = v_w (δ − zᵀμⁱ/N) + bⁱ⁻¹ ηⁱ⁻¹
//! ```
//!
//! which yields the linear-step normalization `γ̂ = (zᵀμ/N − ψ)/v_q` and the
//! statistic `k = (‖Aᵀμ‖²/N)/γ̂`.

use thiserror::Error;

use crate::linmodel::{GramEigen, LinearOperator};
use crate::vecops;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KrylovError {
    #[error("CG breakdown at iteration {iteration}: pᵀWp = {curvature} (W not positive definite)")]
    Breakdown { iteration: usize, curvature: f64 },
    #[error("non-finite right-hand side")]
    NonFinite,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{0} must be positive, got {1}")]
    NonPositive(&'static str, f64),
    #[error("singular system")]
    Singular,
    #[error("trace does not contain zᵀμ history")]
    MissingHistory,
    #[error("solver did not reach the requested residual {requested:e} (got {achieved:e})")]
    NotConverged { requested: f64, achieved: f64 },
}

/// `W = v_w I + v_q A Aᵀ` over a borrowed operator.
#[derive(Debug, Clone, Copy)]
pub struct WOperator<'a> {
    pub op: &'a LinearOperator,
    pub v_w: f64,
    pub v_q: f64,
}

impl<'a> WOperator<'a> {
    pub fn new(op: &'a LinearOperator, v_w: f64, v_q: f64) -> Self {
        Self { op, v_w, v_q }
    }

    pub fn dim(&self) -> usize {
        self.op.rows()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.op.apply(&self.op.adjoint(v));
        for (o, vi) in out.iter_mut().zip(v) {
            *o = self.v_w * vi + self.v_q * *o;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub i_max: usize,
    /// Stop once `‖rʲ‖/‖z‖ ≤ residual_tol`.
    pub residual_tol: f64,
    /// Keep μ⁰..μⁱ (for dense-oracle tests); otherwise only the final iterate.
    pub keep_iterates: bool,
}

impl CgOptions {
    pub fn fixed(i_max: usize) -> Self {
        Self { i_max, residual_tol: 0.0, keep_iterates: false }
    }
}

/// Full record of one CG solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CgTrace {
    /// a⁰..aⁱ⁻¹.
    pub step_sizes: Vec<f64>,
    /// b⁰..bⁱ⁻¹.
    pub ratios: Vec<f64>,
    /// ‖r⁰‖..‖rⁱ‖.
    pub residual_norms: Vec<f64>,
    /// zᵀμ⁰..zᵀμⁱ.
    pub z_dot_mu: Vec<f64>,
    /// μ⁰..μⁱ when requested.
    pub iterates: Option<Vec<Vec<f64>>>,
    /// Final iterate μⁱ.
    pub mu: Vec<f64>,
    pub z_norm_sq: f64,
    pub converged: bool,
}

impl CgTrace {
    pub fn iterations(&self) -> usize {
        self.step_sizes.len()
    }
}

/// Breakdown threshold: `pᵀWp ≤ 1e−14·‖p‖²`.
const BREAKDOWN_RATIO: f64 = 1e-14;

pub fn cg_solve(w: &WOperator<'_>, z: &[f64], i_max: usize, residual_tol: f64) -> Result<CgTrace, KrylovError> {
    cg_solve_with(w, z, &CgOptions { i_max, residual_tol, keep_iterates: false })
}

pub fn cg_solve_with(w: &WOperator<'_>, z: &[f64], opts: &CgOptions) -> Result<CgTrace, KrylovError> {
    let m = w.dim();
    if z.len() != m {
        return Err(KrylovError::LengthMismatch { expected: m, got: z.len() });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(KrylovError::NonFinite);
    }
    let z_norm_sq = vecops::norm_sq(z);
    let z_norm = z_norm_sq.sqrt();
    let mut mu = vec![0.0; m];
    let mut r = z.to_vec();
    let mut p = z.to_vec();
    let mut rr = z_norm_sq;
    let mut trace = CgTrace {
        step_sizes: Vec::new(),
        ratios: Vec::new(),
        residual_norms: vec![z_norm],
        z_dot_mu: vec![0.0],
        iterates: opts.keep_iterates.then(|| vec![mu.clone()]),
        mu: Vec::new(),
        z_norm_sq,
        converged: false,
    };
    let reached = |rr: f64| rr == 0.0 || rr.sqrt() <= opts.residual_tol * z_norm;
    for i in 0..opts.i_max {
        if reached(rr) {
            break;
        }
        let d = w.apply(&p);
        let curvature = vecops::dot(&p, &d);
        if !(curvature > BREAKDOWN_RATIO * vecops::norm_sq(&p)) {
            return Err(KrylovError::Breakdown { iteration: i, curvature });
        }
        let a = rr / curvature;
        vecops::axpy(a, &p, &mut mu);
        vecops::axpy(-a, &d, &mut r);
        let rr_next = vecops::norm_sq(&r);
        let b = rr_next / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + b * *pi;
        }
        rr = rr_next;
        trace.step_sizes.push(a);
        trace.ratios.push(b);
        trace.residual_norms.push(rr.sqrt());
        trace.z_dot_mu.push(vecops::dot(z, &mu));
        if let Some(its) = trace.iterates.as_mut() {
            its.push(mu.clone());
        }
    }
    trace.converged = reached(rr);
    trace.mu = mu;
    Ok(trace)
}

/// ψ⁰..ψⁱ and η⁰..ηⁱ from a CG trace.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiRecursion {
    pub psi: Vec<f64>,
    pub eta: Vec<f64>,
}

impl PsiRecursion {
    /// Final ψⁱ, the estimate of wᵀμⁱ/N.
    pub fn wtmu_est(&self) -> f64 {
        *self.psi.last().expect("ψ⁰ always present")
    }
}

pub fn gamma_recursion(trace: &CgTrace, v_w: f64, delta: f64, n: usize) -> Result<PsiRecursion, KrylovError> {
    let iters = trace.iterations();
    if trace.z_dot_mu.len() != iters + 1 || trace.ratios.len() != iters {
        return Err(KrylovError::MissingHistory);
    }
    let n = n as f64;
    let mut psi = Vec::with_capacity(iters + 1);
    let mut eta = Vec::with_capacity(iters + 1);
    psi.push(0.0);
    eta.push(delta * v_w);
    for i in 1..=iters {
        psi.push(psi[i - 1] + trace.step_sizes[i - 1] * eta[i - 1]);
        eta.push(v_w * (delta - trace.z_dot_mu[i] / n) + trace.ratios[i - 1] * eta[i - 1]);
    }
    Ok(PsiRecursion { psi, eta })
}

/// `γ̂ = (zᵀμ/N − ψ)/v_q` using the final CG iterate.
pub fn gamma_from_recursion(trace: &CgTrace, psi: &PsiRecursion, v_q: f64, n: usize) -> Result<f64, KrylovError> {
    if !(v_q > 0.0) {
        return Err(KrylovError::NonPositive("v_q", v_q));
    }
    let zmu = *trace.z_dot_mu.last().ok_or(KrylovError::MissingHistory)?;
    Ok((zmu / n as f64 - psi.wtmu_est()) / v_q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KStatistic {
    pub k: f64,
    /// Aᵀμ, reused by the caller for the linear step.
    pub at_mu: Vec<f64>,
    pub at_mu_norm_sq: f64,
    /// `|‖Aᵀμ‖² − (μᵀWμ − v_w‖μ‖²)/v_q|` with `Wμ` applied explicitly.
    pub identity_residual: f64,
    /// Same identity with `μᵀWμ` replaced by `zᵀμ` (CG conjugacy).
    pub conjugacy_residual: f64,
}

/// `k = (‖Aᵀμ‖²/N)/γ` for the final CG iterate, with identity cross-checks.
pub fn k_statistic(trace: &CgTrace, w: &WOperator<'_>, gamma: f64, n: usize) -> Result<KStatistic, KrylovError> {
    if !(gamma > 0.0) {
        return Err(KrylovError::NonPositive("gamma", gamma));
    }
    let mu = &trace.mu;
    let at_mu = w.op.adjoint(mu);
    let at_mu_norm_sq = vecops::norm_sq(&at_mu);
    let (identity_residual, conjugacy_residual) = if w.v_q > 0.0 {
        let a_at_mu = w.op.apply(&at_mu);
        let mu_w_mu: f64 = mu
            .iter()
            .zip(&a_at_mu)
            .map(|(m, aa)| m * (w.v_w * m + w.v_q * aa))
            .sum();
        let mu_sq = vecops::norm_sq(mu);
        let zmu = *trace.z_dot_mu.last().ok_or(KrylovError::MissingHistory)?;
        (
            (at_mu_norm_sq - (mu_w_mu - w.v_w * mu_sq) / w.v_q).abs(),
            (at_mu_norm_sq - (zmu - w.v_w * mu_sq) / w.v_q).abs(),
        )
    } else {
        (0.0, 0.0)
    };
    Ok(KStatistic {
        k: at_mu_norm_sq / n as f64 / gamma,
        at_mu,
        at_mu_norm_sq,
        identity_residual,
        conjugacy_residual,
    })
}

/// Solve residual target for the dense path.
pub const EXACT_DENSE_TOL: f64 = 1e-10;
/// Solve residual target for the CG fallback.
pub const EXACT_CG_TOL: f64 = 1e-8;
/// Largest M for which a dense eigen-decomposition of AAᵀ is used.
pub const DENSE_LIMIT: usize = 4096;

fn spectral_route(op: &LinearOperator) -> bool {
    !op.is_dense() || op.rows() <= DENSE_LIMIT
}

/// `W⁻¹ z` through the eigen-decomposition of AAᵀ (diagonal for structured
/// operators) or, above the dense size limit, CG to tight tolerance.
pub fn exact_solve(w: &WOperator<'_>, z: &[f64]) -> Result<Vec<f64>, KrylovError> {
    let m = w.dim();
    if z.len() != m {
        return Err(KrylovError::LengthMismatch { expected: m, got: z.len() });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(KrylovError::NonFinite);
    }
    let z_norm = vecops::norm_sq(z).sqrt();
    if z_norm == 0.0 {
        return Ok(vec![0.0; m]);
    }
    if spectral_route(w.op) {
        let denom = |lambda: f64| w.v_w + w.v_q * lambda;
        let mu = match w.op.gram_eigen() {
            GramEigen::Diagonal(d) => {
                if d.iter().any(|l| !(denom(*l) > 0.0)) {
                    return Err(KrylovError::Singular);
                }
                z.iter().zip(d).map(|(zi, l)| zi / denom(*l)).collect::<Vec<_>>()
            }
            GramEigen::Dense { values, vectors } => {
                if values.iter().any(|l| !(denom(*l) > 0.0)) {
                    return Err(KrylovError::Singular);
                }
                let zv = nalgebra::DVector::from_column_slice(z);
                let mut coef = vectors.tr_mul(&zv);
                for (c, l) in coef.iter_mut().zip(values) {
                    *c /= denom(*l);
                }
                (vectors * coef).data.into()
            }
        };
        let resid = vecops::dist_sq(&w.apply(&mu), z).sqrt() / z_norm;
        if resid <= EXACT_DENSE_TOL {
            return Ok(mu);
        }
        // Ill-conditioned W: polish with CG from scratch to the CG target.
    }
    let trace = cg_solve(w, z, 50 * m.max(10), EXACT_CG_TOL)?;
    let achieved = trace.residual_norms.last().copied().unwrap_or(0.0) / z_norm;
    if !trace.converged {
        return Err(KrylovError::NotConverged { requested: EXACT_CG_TOL, achieved });
    }
    Ok(trace.mu)
}

/// `γ = (1/N) Tr{Aᵀ W⁻¹ A} = (1/N) Σ λ/(v_w + v_q λ)` over the eigenvalues of AAᵀ.
pub fn trace_gamma(w: &WOperator<'_>) -> Result<f64, KrylovError> {
    let n = w.op.cols() as f64;
    let sum = |values: &[f64]| -> Result<f64, KrylovError> {
        let mut s = 0.0;
        for &l in values {
            let d = w.v_w + w.v_q * l;
            if !(d > 0.0) {
                return Err(KrylovError::Singular);
            }
            s += l / d;
        }
        Ok(s / n)
    };
    if spectral_route(w.op) {
        match w.op.gram_eigen() {
            GramEigen::Diagonal(d) => sum(d),
            GramEigen::Dense { values, .. } => sum(values),
        }
    } else {
        hutchinson_gamma(w, 64, 0)
    }
}

/// Hutchinson estimate of `(1/N) Tr{W⁻¹ AAᵀ}` with CG solves.
pub fn hutchinson_gamma(w: &WOperator<'_>, probes: usize, seed: u64) -> Result<f64, KrylovError> {
    use rand::Rng;
    let mut rng = crate::seeding::rng_from_seed(seed);
    let m = w.dim();
    let mut acc = 0.0;
    for _ in 0..probes {
        let u: Vec<f64> = (0..m).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let gu = w.op.apply(&w.op.adjoint(&u));
        let trace = cg_solve(w, &gu, 50 * m, EXACT_CG_TOL)?;
        acc += vecops::dot(&u, &trace.mu);
    }
    Ok(acc / probes as f64 / w.op.cols() as f64)
}
