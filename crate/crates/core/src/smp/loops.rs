use std::time::Instant;

use super::{
    estimate_vq, Algorithm, AlphaByMethod, CgDiagnostics, CgScalars, EstimatorChoice, IterationState, MetricRow,
    MfVariance, RunOptions, RunRecord, SmpError,
};
use crate::denoise::{corrected_update, sure_mse, CorrectionPolicy, Denoiser};
use crate::diag;
use crate::divest::{self, DivergenceEstimate, QuadCoeffs};
use crate::krylov::{self, CgOptions, WOperator};
use crate::linmodel::{chi_moment, nmse, MeasurementModel};
use crate::seeding;
use crate::vecops;

/// CG stops early once the relative residual reaches this level, so runs with
/// `i_cg` close to M do not iterate on round-off.
const CG_FLOOR_TOL: f64 = 1e-13;
/// Iterates are retained for the oracle wᵀμʲ path only up to this many CG steps.
const KEEP_ITERATES_MAX: usize = 64;

struct Linear {
    r: Vec<f64>,
    v_h_est: f64,
    gamma: f64,
    k_t: f64,
    gamma_oracle: f64,
    wtmu_oracle: f64,
    wtmu_est: f64,
    cg: Option<CgDiagnostics>,
}

pub(super) fn run_impl(
    model: &MeasurementModel,
    denoiser: &dyn Denoiser,
    alg: Algorithm,
    opts: &RunOptions,
    observer: &mut dyn FnMut(&IterationState<'_>),
) -> Result<RunRecord, SmpError> {
    if opts.iterations == 0 {
        return Err(SmpError::InvalidOptions("T must be at least 1".into()));
    }
    if alg == Algorithm::CgVamp && opts.i_cg == 0 {
        return Err(SmpError::InvalidOptions("i_cg must be at least 1".into()));
    }
    if opts.trials == 0 {
        return Err(SmpError::InvalidOptions("BB-MC trials must be at least 1".into()));
    }
    let op = &*model.op;
    let (n, m) = (model.n(), model.m());
    let nf = n as f64;
    let (x, y, v_w, delta) = (&model.x, &model.y, model.v_w, model.delta);

    let needs_chi2 = alg == Algorithm::MfOamp || opts.diagnostics;
    let chi2 = match (opts.chi2, needs_chi2) {
        (Some(c), _) => c,
        (None, true) => chi_moment(op, 2).map_err(|e| SmpError::InvalidOptions(e.to_string()))?.value,
        (None, false) => f64::NAN,
    };

    let mut record = RunRecord {
        algorithm: alg.name().to_string(),
        estimator: opts.estimator.name().to_string(),
        seed: opts.seed,
        rows: Vec::with_capacity(opts.iterations),
        estimate: Vec::new(),
    };
    let mut s = vec![0.0; n];
    let mut a_s = vec![0.0; m];
    let mut z_amp = y.clone();
    let mut r_prev: Option<Vec<f64>> = None;
    let mut alpha_prev: Option<f64> = None;
    let mut r_zero: Option<Vec<f64>> = None;

    macro_rules! abort {
        ($t:expr, $($arg:tt)*) => {
            return Err(SmpError::Aborted {
                t: $t,
                reason: format!($($arg)*),
                partial: Box::new(record),
            })
        };
    }

    for t in 0..opts.iterations {
        let started = Instant::now();
        let mut row = MetricRow::new(t);
        row.chi2 = chi2;

        // Linear step.
        let z = match alg {
            Algorithm::Amp => z_amp.clone(),
            _ => vecops::sub(y, &a_s),
        };
        let q = vecops::sub(&s, x);
        row.v_q_oracle = vecops::norm_sq(&q) / nf;
        row.v_q_est = estimate_vq(&z, v_w, delta, n);
        let v_q = if opts.oracle_variances { row.v_q_oracle.max(super::VQ_FLOOR) } else { row.v_q_est };
        row.v_q_used = v_q;

        let lin = match alg {
            Algorithm::Amp | Algorithm::MfOamp => {
                let mut r = op.adjoint(&z);
                vecops::axpy(1.0, &s, &mut r);
                let v_h_est = match (alg, opts.mf_variance) {
                    (Algorithm::Amp, _) | (_, MfVariance::Residual) => vecops::norm_sq(&z) / m as f64,
                    (_, MfVariance::Spectral) => v_w + (chi2 - 1.0) * v_q,
                };
                let gamma = if alg == Algorithm::MfOamp { 1.0 } else { f64::NAN };
                Linear {
                    r,
                    v_h_est,
                    gamma,
                    k_t: f64::NAN,
                    gamma_oracle: f64::NAN,
                    wtmu_oracle: f64::NAN,
                    wtmu_est: f64::NAN,
                    cg: None,
                }
            }
            Algorithm::Vamp => {
                let w = WOperator::new(op, v_w, v_q);
                let mu = match krylov::exact_solve(&w, &z) {
                    Ok(mu) => mu,
                    Err(e) => abort!(t, "exact solve failed: {e}"),
                };
                let gamma = match krylov::trace_gamma(&w) {
                    Ok(g) if g > 0.0 => g,
                    Ok(g) => abort!(t, "γ = {g} is not positive"),
                    Err(e) => abort!(t, "γ computation failed: {e}"),
                };
                let at_mu = op.adjoint(&mu);
                let mut r = vecops::scale(1.0 / gamma, &at_mu);
                vecops::axpy(1.0, &s, &mut r);
                let zmu = vecops::dot(&z, &mu) / nf;
                let wtmu = vecops::dot(&model.w, &mu) / nf;
                Linear {
                    r,
                    v_h_est: 1.0 / gamma - v_q,
                    gamma,
                    k_t: vecops::norm_sq(&at_mu) / nf / gamma,
                    gamma_oracle: (zmu - wtmu) / v_q,
                    wtmu_oracle: wtmu,
                    wtmu_est: f64::NAN,
                    cg: None,
                }
            }
            Algorithm::CgVamp => {
                let w = WOperator::new(op, v_w, v_q);
                let keep = opts.diagnostics && opts.i_cg <= KEEP_ITERATES_MAX;
                let cg_opts = CgOptions { i_max: opts.i_cg, residual_tol: CG_FLOOR_TOL, keep_iterates: keep };
                let trace = match krylov::cg_solve_with(&w, &z, &cg_opts) {
                    Ok(tr) => tr,
                    Err(e) => abort!(t, "CG failed: {e}"),
                };
                let psi = match krylov::gamma_recursion(&trace, v_w, delta, n) {
                    Ok(p) => p,
                    Err(e) => abort!(t, "ψ recursion failed: {e}"),
                };
                let gamma_rec = krylov::gamma_from_recursion(&trace, &psi, v_q, n).unwrap_or(f64::NAN);
                let gamma = match opts.cg_scalars {
                    CgScalars::Recursion => gamma_rec,
                    CgScalars::Trace => match krylov::trace_gamma(&w) {
                        Ok(g) => g,
                        Err(e) => abort!(t, "γ computation failed: {e}"),
                    },
                };
                if !(gamma > 0.0) {
                    abort!(t, "γ̂ = {gamma} is not positive");
                }
                let kstat = match krylov::k_statistic(&trace, &w, gamma, n) {
                    Ok(k) => k,
                    Err(e) => abort!(t, "k statistic failed: {e}"),
                };
                let mut r = vecops::scale(1.0 / gamma, &kstat.at_mu);
                vecops::axpy(1.0, &s, &mut r);
                let v_h_est = match opts.cg_scalars {
                    CgScalars::Recursion => kstat.k / gamma - v_q,
                    CgScalars::Trace => 1.0 / gamma - v_q,
                };
                let zmu = vecops::dot(&z, &trace.mu) / nf;
                let wtmu = vecops::dot(&model.w, &trace.mu) / nf;
                let cg = opts.diagnostics.then(|| CgDiagnostics {
                    iterations: trace.iterations(),
                    psi: psi.psi.clone(),
                    wtmu_path: trace
                        .iterates
                        .as_ref()
                        .map(|its| its.iter().map(|mu| vecops::dot(&model.w, mu) / nf).collect())
                        .unwrap_or_default(),
                    zmu_path: trace.z_dot_mu.iter().map(|v| v / nf).collect(),
                    step_sizes: trace.step_sizes.clone(),
                    residual_norms: trace.residual_norms.clone(),
                    gamma_recursion: gamma_rec,
                    k_identity_residual: kstat.identity_residual,
                    at_mu_norm_sq: kstat.at_mu_norm_sq,
                });
                Linear {
                    r,
                    v_h_est,
                    gamma,
                    k_t: kstat.k,
                    gamma_oracle: (zmu - wtmu) / v_q,
                    wtmu_oracle: wtmu,
                    wtmu_est: psi.wtmu_est(),
                    cg,
                }
            }
        };
        let Linear { r, v_h_est, gamma, k_t, gamma_oracle, wtmu_oracle, wtmu_est, cg } = lin;
        row.v_h_est = v_h_est;
        row.gamma = gamma;
        row.k_t = k_t;
        row.gamma_oracle = gamma_oracle;
        row.wtmu_oracle = wtmu_oracle;
        row.wtmu_est = wtmu_est;
        row.cg = cg;

        let h = vecops::sub(&r, x);
        row.v_h_oracle = vecops::norm_sq(&h) / nf;
        let v_h = if opts.oracle_variances { row.v_h_oracle } else { v_h_est };
        // Zero is legitimate (noiseless, flat spectrum) and is floored like
        // v_q; a negative value means the variance update broke down.
        if !(v_h >= 0.0 && v_h.is_finite()) {
            abort!(t, "v_h = {v_h} is negative or not finite");
        }
        let v_h = v_h.max(super::VQ_FLOOR);
        row.v_h_used = v_h;

        // Denoising step.
        let g = match denoiser.apply(&r, v_h) {
            Ok(g) => g,
            Err(e) => abort!(t, "denoiser failed: {e}"),
        };
        row.nmse = nmse(&g, x).unwrap_or(f64::NAN);
        let eq_oracle = divest::oracle_divergence(&h, &g, row.v_h_oracle).map(|e| e.value).unwrap_or(f64::NAN);
        let analytic = denoiser.analytic_divergence(&r, v_h);
        // The reference divergence is exact when the denoiser knows its own
        // Jacobian; `hᵀg/(N v_h)` carries O(1/√N) noise and is the fallback.
        row.alpha_oracle = analytic.unwrap_or(eq_oracle);

        let algebraic_first = matches!(opts.estimator, EstimatorChoice::AlgebraicPrev | EstimatorChoice::AlgebraicZero)
            && r_prev.is_none();
        let need_poly = opts.estimator == EstimatorChoice::Polynomial || opts.diagnostics || algebraic_first;
        let a_g = op.apply(&g);
        let a_r = need_poly.then(|| op.apply(&r));
        let coeffs: Option<QuadCoeffs> = match &a_r {
            Some(a_r) => match divest::poly_coeffs(&r, &g, y, a_r, &a_g, v_h, v_w, delta) {
                Ok(c) => Some(c),
                Err(e) => abort!(t, "quadratic coefficients failed: {e}"),
            },
            None => None,
        };
        if let Some(c) = coeffs {
            row.u1 = c.u1;
            row.u2 = c.u2;
            row.u3 = c.u3;
        }

        let alg_prev = r_prev.as_ref().map(|rp| divest::algebraic_divergence(&r, rp, &g));
        let alg_zero = r_zero.as_ref().map(|r0| divest::algebraic_divergence(&r, r0, &g));
        let poly = coeffs.map(|c| divest::poly_select(&c, opts.root_rule, alpha_prev));
        let bbmc = |seed: u64| {
            divest::bbmc_divergence(denoiser, &r, Some(&g), v_h, opts.probe, opts.trials, seed)
        };
        let probe_seed = seeding::derive_seed(opts.seed, seeding::PROBE, t as u64);

        let chosen: Result<DivergenceEstimate, String> = match opts.estimator {
            EstimatorChoice::Oracle => Ok(DivergenceEstimate {
                value: eq_oracle,
                method: divest::DivergenceMethod::Oracle,
                detail: Default::default(),
            }),
            EstimatorChoice::Analytic => analytic
                .map(|value| DivergenceEstimate {
                    value,
                    method: divest::DivergenceMethod::Oracle,
                    detail: Default::default(),
                })
                .ok_or_else(|| "denoiser has no analytic divergence".to_string()),
            EstimatorChoice::Bbmc => bbmc(probe_seed).map_err(|e| e.to_string()),
            EstimatorChoice::Polynomial => poly.clone().expect("coefficients computed").map_err(|e| e.to_string()),
            EstimatorChoice::AlgebraicPrev | EstimatorChoice::AlgebraicZero => {
                let pick = if opts.estimator == EstimatorChoice::AlgebraicPrev { &alg_prev } else { &alg_zero };
                match pick {
                    Some(res) => res.clone().map_err(|e| e.to_string()),
                    // No reference input exists yet: substitute the polynomial estimate.
                    None => poly.clone().expect("coefficients computed").map(|mut e| {
                        e.detail.fallback_used = true;
                        e
                    }).map_err(|e| e.to_string()),
                }
            }
        };
        let chosen = match chosen {
            Ok(est) if est.value.is_finite() => est,
            Ok(est) => abort!(t, "non-finite divergence estimate {}", est.value),
            Err(e) => abort!(t, "divergence estimator failed: {e}"),
        };
        let alpha = chosen.value;
        row.alpha_est = alpha;
        row.fallback_used = chosen.detail.fallback_used;
        row.alpha_err = (alpha - row.alpha_oracle).powi(2) / row.alpha_oracle.powi(2);

        let mut alphas = AlphaByMethod {
            oracle: Some(eq_oracle),
            analytic,
            ..Default::default()
        };
        if let Some(Ok(p)) = &poly {
            alphas.polynomial = Some(p.value);
            row.poly_detail = Some(p.detail.clone());
        }
        if let Some(Ok(a)) = &alg_prev {
            alphas.algebraic_prev = Some(a.value);
        }
        if let Some(Ok(a)) = &alg_zero {
            alphas.algebraic_zero = Some(a.value);
        }
        if opts.estimator == EstimatorChoice::Bbmc {
            alphas.bbmc = Some(alpha);
        } else if opts.diagnostics {
            alphas.bbmc = bbmc(probe_seed).ok().map(|e| e.value);
        }
        row.alphas = alphas;

        // Correction.
        let (s_next, c) = match alg {
            Algorithm::Amp => (g.clone(), 1.0),
            _ => {
                let mse_est = match opts.c_policy {
                    CorrectionPolicy::Optimal => analytic.map(|d| sure_mse(&r, &g, v_h, d)),
                    _ => None,
                };
                match corrected_update(&g, &r, alpha, opts.c_policy, v_h, mse_est) {
                    Ok(v) => v,
                    Err(e) => abort!(t, "correction failed: {e}"),
                }
            }
        };
        row.c_t = c;

        let state = IterationState {
            t,
            s: &s,
            r: &r,
            z: &z,
            a_s: &a_s,
            g: &g,
            v_q_est: row.v_q_est,
            v_h_est,
            alpha,
            gamma,
            c,
        };
        if opts.diagnostics {
            let alpha_star = row.alpha_oracle;
            let qbar: Vec<f64> = g.iter().zip(&r).zip(x).map(|((gi, ri), xi)| gi - alpha_star * ri - xi).collect();
            row.psi_t = diag::psi_inner(&q, &qbar).unwrap_or(f64::NAN);
            if let Some(c) = &coeffs {
                row.deriv_lhs = diag::deriv_lhs(c, alpha_star);
            }
            row.deriv_rhs = match alg {
                Algorithm::Amp => f64::NAN,
                Algorithm::MfOamp => diag::deriv_rhs_mf_oamp(chi2, row.psi_t, row.v_q_oracle),
                Algorithm::Vamp => {
                    diag::deriv_rhs_vamp(v_w, row.v_h_oracle, row.v_q_oracle, row.psi_t).unwrap_or(f64::NAN)
                }
                Algorithm::CgVamp => {
                    diag::deriv_rhs_cg_vamp(k_t, v_q, row.psi_t, gamma, v_w, delta, wtmu_oracle).unwrap_or(f64::NAN)
                }
            };
            row.se = Some(diag::se_checks(&state, model, chi2));
            if matches!(alg, Algorithm::Vamp | Algorithm::CgVamp) && delta < 1.0 {
                row.lemma1 = diag::vamp_sign_condition(row.v_q_est, v_w, delta)
                    .ok()
                    .map(|cond| (cond, row.v_h_oracle - v_w));
            }
        }
        observer(&state);

        // Advance, reusing A·g and A·r for the next residual.
        let a_s_next = match (alg, &a_r) {
            (Algorithm::Amp, _) => a_g.clone(),
            (_, Some(a_r)) => a_g.iter().zip(a_r).map(|(ag, ar)| c * (ag - alpha * ar)).collect(),
            (_, None) => op.apply(&s_next),
        };
        if alg == Algorithm::Amp {
            let onsager = alpha / delta;
            z_amp = y.iter().zip(&a_g).zip(&z).map(|((yi, ag), zi)| yi - ag + onsager * zi).collect();
        }
        if r_zero.is_none() {
            r_zero = Some(r.clone());
        }
        r_prev = Some(r);
        alpha_prev = Some(alpha);
        s = s_next;
        a_s = a_s_next;
        record.estimate = g;
        if opts.timing {
            row.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        }
        record.rows.push(row);
    }
    Ok(record)
}
