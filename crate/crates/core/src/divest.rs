//! Divergence estimators for the Onsager correction `α = (1/N)·Σ ∂g_i/∂r_i`.
//!
//! * oracle: `hᵀg/(N v_h)` with the true effective noise `h = r − x`;
//! * black-box Monte Carlo: `nᵀ(g(r + εn) − g(r))/(εN)` over random probes;
//! * algebraic: `(r − r̄)ᵀg/((r − r̄)ᵀr)` against a reference input `r̄`;
//! * polynomial: a root of `u1 + u2·α + u3·α² = 0`, whose coefficients use
//!   only observable quantities.
//!
//! Root choice for the polynomial estimator: at a real root the derivative
//! `u2 + 2u3·α` equals `±√(u2² − 4u1u3)`. The divergence is the root where the
//! derivative is positive ([`RootRule::PositiveSlope`]); the alternative
//! orientation rule (largest root when `u3 < 0`) is kept as
//! [`RootRule::LargestIfConcave`] for comparison. The derivative changes sign
//! when the denoiser's corrected error stops shrinking, so
//! [`RootRule::NearestPrevious`] follows the root closest to the previous
//! iteration's divergence instead. Complex roots fall back to the stationary
//! point `−u2/(2u3)`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::denoise::{DenoiseError, Denoiser};
use crate::seeding;
use crate::vecops;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DivergenceError {
    #[error("v_h must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("at least one probe trial is required")]
    NoTrials,
    #[error("denoiser failed: {0}")]
    Denoiser(#[from] DenoiseError),
    #[error("algebraic estimator denominator (r − r̄)ᵀr = {0:e} is numerically zero")]
    VanishingDenominator(f64),
    #[error("degenerate quadratic: u2 = u3 = 0")]
    DegenerateQuadratic,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite estimate")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceMethod {
    Oracle,
    Bbmc,
    Algebraic,
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbeKind {
    #[default]
    Rademacher,
    Gaussian,
}

impl ProbeKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "rademacher" => Some(Self::Rademacher),
            "gaussian" => Some(Self::Gaussian),
            _ => None,
        }
    }
}

/// Which real root of the quadratic is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RootRule {
    /// The root where `u2 + 2u3·α > 0`.
    #[default]
    PositiveSlope,
    /// Largest root when `u3 < 0`, smallest when `u3 > 0`.
    LargestIfConcave,
    /// The root closest to the previous divergence estimate; `PositiveSlope`
    /// when there is none.
    NearestPrevious,
}

impl RootRule {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "positive-slope" => Some(Self::PositiveSlope),
            "largest-if-concave" => Some(Self::LargestIfConcave),
            "nearest-previous" => Some(Self::NearestPrevious),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateDetail {
    pub roots: Option<[Complex64; 2]>,
    pub discriminant: Option<f64>,
    pub fallback_used: bool,
    pub probes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceEstimate {
    pub value: f64,
    pub method: DivergenceMethod,
    pub detail: EstimateDetail,
}

impl DivergenceEstimate {
    fn plain(value: f64, method: DivergenceMethod) -> Result<Self, DivergenceError> {
        if !value.is_finite() {
            return Err(DivergenceError::NonFinite);
        }
        Ok(Self { value, method, detail: EstimateDetail::default() })
    }
}

/// `hᵀg/(N·v_h)`.
pub fn oracle_divergence(h: &[f64], g_out: &[f64], v_h: f64) -> Result<DivergenceEstimate, DivergenceError> {
    if h.len() != g_out.len() {
        return Err(DivergenceError::LengthMismatch(h.len(), g_out.len()));
    }
    if !(v_h > 0.0) {
        return Err(DivergenceError::NonPositiveVariance(v_h));
    }
    DivergenceEstimate::plain(vecops::dot(h, g_out) / (h.len() as f64 * v_h), DivergenceMethod::Oracle)
}

/// Probe step `ε = 0.1·min(√v_h, ‖r‖₁/N)` plus a machine-epsilon floor.
pub fn bbmc_epsilon(r: &[f64], v_h: f64) -> f64 {
    let n = r.len().max(1) as f64;
    0.1 * v_h.max(0.0).sqrt().min(vecops::norm1(r) / n) + f64::EPSILON
}

/// Black-box Monte Carlo divergence. `g_r` may carry a precomputed `g(r)`.
pub fn bbmc_divergence(
    denoiser: &dyn Denoiser,
    r: &[f64],
    g_r: Option<&[f64]>,
    v_h: f64,
    probe: ProbeKind,
    trials: usize,
    seed: u64,
) -> Result<DivergenceEstimate, DivergenceError> {
    if trials == 0 {
        return Err(DivergenceError::NoTrials);
    }
    let n = r.len();
    let owned;
    let base = match g_r {
        Some(g) => g,
        None => {
            owned = denoiser.apply(r, v_h)?;
            &owned
        }
    };
    if base.len() != n {
        return Err(DivergenceError::LengthMismatch(base.len(), n));
    }
    let eps = bbmc_epsilon(r, v_h);
    let mut rng = seeding::rng_from_seed(seed);
    let mut total = 0.0;
    for _ in 0..trials {
        let probe_vec: Vec<f64> = match probe {
            ProbeKind::Rademacher => (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect(),
            ProbeKind::Gaussian => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        };
        let shifted: Vec<f64> = r.iter().zip(&probe_vec).map(|(ri, pi)| ri + eps * pi).collect();
        let g_shift = denoiser.apply(&shifted, v_h)?;
        let num: f64 = probe_vec
            .iter()
            .zip(g_shift.iter().zip(base))
            .map(|(p, (a, b))| p * (a - b))
            .sum();
        total += num / (eps * n as f64);
    }
    let mut est = DivergenceEstimate::plain(total / trials as f64, DivergenceMethod::Bbmc)?;
    est.detail.probes = trials;
    Ok(est)
}

/// `(r_t − r̄)ᵀg/((r_t − r̄)ᵀr_t)`.
pub fn algebraic_divergence(r_t: &[f64], r_ref: &[f64], g_out: &[f64]) -> Result<DivergenceEstimate, DivergenceError> {
    if r_t.len() != r_ref.len() || r_t.len() != g_out.len() {
        return Err(DivergenceError::LengthMismatch(r_t.len(), r_ref.len().min(g_out.len())));
    }
    let diff = vecops::sub(r_t, r_ref);
    let denom = vecops::dot(&diff, r_t);
    let scale = vecops::norm_sq(&diff).sqrt() * vecops::norm_sq(r_t).sqrt();
    if denom.abs() <= 1e-12 * scale || scale == 0.0 {
        return Err(DivergenceError::VanishingDenominator(denom));
    }
    DivergenceEstimate::plain(vecops::dot(&diff, g_out) / denom, DivergenceMethod::Algebraic)
}

/// Coefficients of `u1 + u2·α + u3·α²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadCoeffs {
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
}

impl QuadCoeffs {
    pub fn eval(&self, alpha: f64) -> f64 {
        self.u1 + self.u2 * alpha + self.u3 * alpha * alpha
    }

    /// `u2 + 2u3·α`.
    pub fn slope(&self, alpha: f64) -> f64 {
        self.u2 + 2.0 * self.u3 * alpha
    }

    pub fn discriminant(&self) -> f64 {
        self.u2 * self.u2 - 4.0 * self.u1 * self.u3
    }
}

/// Quadratic coefficients from observable quantities. `a_r = A·r_t` and
/// `a_g = A·g_out` are supplied by the caller so they can be reused.
#[allow(clippy::too_many_arguments)]
pub fn poly_coeffs(
    r_t: &[f64],
    g_out: &[f64],
    y: &[f64],
    a_r: &[f64],
    a_g: &[f64],
    v_h: f64,
    v_w: f64,
    delta: f64,
) -> Result<QuadCoeffs, DivergenceError> {
    let n = r_t.len();
    if g_out.len() != n {
        return Err(DivergenceError::LengthMismatch(g_out.len(), n));
    }
    let m = y.len();
    if a_r.len() != m || a_g.len() != m {
        return Err(DivergenceError::LengthMismatch(a_r.len().max(a_g.len()), m));
    }
    let nf = n as f64;
    let g_minus_r = vecops::dist_sq(g_out, r_t);
    let resid = vecops::dist_sq(a_g, y);
    let u1 = (g_minus_r - nf * v_h - (resid - nf * delta * v_w)) / nf;
    let r_minus_g_dot_r: f64 = r_t.iter().zip(g_out).map(|(r, g)| (r - g) * r).sum();
    let y_minus_ag_dot_ar: f64 = y.iter().zip(a_g).zip(a_r).map(|((yi, ag), ar)| (yi - ag) * ar).sum();
    let u2 = 2.0 / nf * (r_minus_g_dot_r - y_minus_ag_dot_ar);
    let u3 = (vecops::norm_sq(r_t) - vecops::norm_sq(a_r)) / nf;
    let c = QuadCoeffs { u1, u2, u3 };
    if !(u1.is_finite() && u2.is_finite() && u3.is_finite()) {
        return Err(DivergenceError::NonFinite);
    }
    Ok(c)
}

/// Both roots, computed without cancellation, in ascending order.
fn real_roots(c: &QuadCoeffs, sq: f64) -> [f64; 2] {
    let q = -0.5 * (c.u2 + sq.copysign(if c.u2 == 0.0 { 1.0 } else { c.u2 }));
    let (a, b) = if q == 0.0 { (0.0, 0.0) } else { (q / c.u3, c.u1 / q) };
    if a <= b { [a, b] } else { [b, a] }
}

/// `anchor` is the previous iteration's divergence, used by
/// [`RootRule::NearestPrevious`] only.
pub fn poly_select(coeffs: &QuadCoeffs, rule: RootRule, anchor: Option<f64>) -> Result<DivergenceEstimate, DivergenceError> {
    let QuadCoeffs { u1, u2, u3 } = *coeffs;
    if u3 == 0.0 {
        if u2 == 0.0 {
            return Err(DivergenceError::DegenerateQuadratic);
        }
        return DivergenceEstimate::plain(-u1 / u2, DivergenceMethod::Polynomial);
    }
    let disc = coeffs.discriminant();
    let mut detail = EstimateDetail { discriminant: Some(disc), ..Default::default() };
    let value = if disc >= 0.0 {
        let [lo, hi] = real_roots(coeffs, disc.sqrt());
        detail.roots = Some([Complex64::new(lo, 0.0), Complex64::new(hi, 0.0)]);
        let positive_slope = if coeffs.slope(lo) >= coeffs.slope(hi) { lo } else { hi };
        match (rule, anchor) {
            (RootRule::LargestIfConcave, _) => {
                if u3 < 0.0 { hi } else { lo }
            }
            (RootRule::NearestPrevious, Some(p)) if p.is_finite() => {
                if (lo - p).abs() <= (hi - p).abs() { lo } else { hi }
            }
            _ => positive_slope,
        }
    } else {
        let re = -u2 / (2.0 * u3);
        let im = (-disc).sqrt() / (2.0 * u3.abs());
        detail.roots = Some([Complex64::new(re, -im), Complex64::new(re, im)]);
        detail.fallback_used = true;
        re
    };
    if !value.is_finite() {
        return Err(DivergenceError::NonFinite);
    }
    Ok(DivergenceEstimate { value, method: DivergenceMethod::Polynomial, detail })
}
