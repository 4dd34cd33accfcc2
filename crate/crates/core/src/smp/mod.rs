//! Message-passing loops: AMP, MF-OAMP, exact VAMP and CG-VAMP, each with a
//! pluggable divergence estimator for the Onsager correction.
//!
//! All loops start from `s₀ = 0`. The orthogonal family alternates
//!
//! ```text
//! z_t     = y − A s_t
//! r_t     = s_t + γ_t⁻¹ Aᵀ F_t z_t          (F = I, W⁻¹, or CG approximation of W⁻¹)
//! s_{t+1} = C_t (g(r_t) − α_t r_t)
//! ```
//!
//! while AMP keeps the uncorrected denoiser and folds the correction into the
//! residual, `z_t = y − A s_t − (α_{t−1}/δ) z_{t−1}`.
//!
//! Variance tracking without ground truth: `v_q ≈ ‖z‖²/N − δ v_w` for the
//! orthogonal family; `v_h` from `‖z‖²/M` (AMP), `v_w + (χ₂ − 1) v_q`
//! (MF-OAMP), `γ⁻¹ − v_q` (VAMP) or `γ⁻¹k − v_q` (CG-VAMP).

mod loops;
mod record;

pub use record::{AlphaByMethod, CgDiagnostics, MetricRow, RunRecord, SeRow};

use thiserror::Error;

use crate::denoise::{CorrectionPolicy, Denoiser};
use crate::divest::{ProbeKind, RootRule};
use crate::linmodel::MeasurementModel;
use crate::vecops;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Amp,
    MfOamp,
    Vamp,
    CgVamp,
}

impl Algorithm {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "amp" => Some(Self::Amp),
            "mf-oamp" => Some(Self::MfOamp),
            "vamp" => Some(Self::Vamp),
            "cg-vamp" => Some(Self::CgVamp),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Amp => "amp",
            Self::MfOamp => "mf-oamp",
            Self::Vamp => "vamp",
            Self::CgVamp => "cg-vamp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorChoice {
    Oracle,
    /// The denoiser's closed-form divergence (reference runs only).
    Analytic,
    Bbmc,
    /// Algebraic estimator with r̄ = r_{t−1}.
    AlgebraicPrev,
    /// Algebraic estimator with r̄ = r₀.
    AlgebraicZero,
    Polynomial,
}

impl EstimatorChoice {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "oracle" => Some(Self::Oracle),
            "analytic" => Some(Self::Analytic),
            "bbmc" => Some(Self::Bbmc),
            "algebraic-prev" => Some(Self::AlgebraicPrev),
            "algebraic-zero" => Some(Self::AlgebraicZero),
            "polynomial" => Some(Self::Polynomial),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::Analytic => "analytic",
            Self::Bbmc => "bbmc",
            Self::AlgebraicPrev => "algebraic-prev",
            Self::AlgebraicZero => "algebraic-zero",
            Self::Polynomial => "polynomial",
        }
    }
}

/// Where CG-VAMP takes γ and v_h from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CgScalars {
    /// γ̂ from the ψ recursion, `v_h = γ̂⁻¹k − v_q`.
    #[default]
    Recursion,
    /// γ = Tr{AᵀW⁻¹A}/N from the spectrum, `v_h = γ⁻¹ − v_q` (exact-VAMP scalars).
    Trace,
}

/// MF-OAMP's `v_h` estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MfVariance {
    /// `v_w + (χ₂ − 1)·v_q`.
    #[default]
    Spectral,
    /// `‖z‖²/M`; agrees with `Spectral` only for Gaussian spectra.
    Residual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub estimator: EstimatorChoice,
    pub iterations: usize,
    pub i_cg: usize,
    pub c_policy: CorrectionPolicy,
    /// Compute every estimator, ψ_t, derivative sides and SE checks.
    pub diagnostics: bool,
    /// Feed `‖q_t‖²/N` and `‖h_t‖²/N` to the algorithm instead of estimates.
    pub oracle_variances: bool,
    /// Master seed; BB-MC probes derive from it per iteration.
    pub seed: u64,
    pub probe: ProbeKind,
    pub trials: usize,
    pub root_rule: RootRule,
    pub cg_scalars: CgScalars,
    pub mf_variance: MfVariance,
    /// χ₂ of the operator, if already known.
    pub chi2: Option<f64>,
    /// Record per-iteration wall time (breaks byte-identical output).
    pub timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            estimator: EstimatorChoice::Polynomial,
            iterations: 10,
            i_cg: 5,
            c_policy: CorrectionPolicy::Vamp,
            diagnostics: false,
            oracle_variances: false,
            seed: 0,
            probe: ProbeKind::Rademacher,
            trials: 1,
            root_rule: RootRule::default(),
            cg_scalars: CgScalars::default(),
            mf_variance: MfVariance::default(),
            chi2: None,
            timing: false,
        }
    }
}

impl RunOptions {
    /// Oracle mode: full diagnostics and oracle variances.
    pub fn oracle(mut self) -> Self {
        self.diagnostics = true;
        self.oracle_variances = true;
        self
    }
}

/// Snapshot handed to observers after α_t and C_t are known.
#[derive(Debug, Clone, Copy)]
pub struct IterationState<'a> {
    pub t: usize,
    pub s: &'a [f64],
    pub r: &'a [f64],
    pub z: &'a [f64],
    /// A·s_t.
    pub a_s: &'a [f64],
    pub g: &'a [f64],
    pub v_q_est: f64,
    pub v_h_est: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub c: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmpError {
    #[error("run aborted at iteration {t}: {reason}")]
    Aborted { t: usize, reason: String, partial: Box<RunRecord> },
    #[error("invalid options: {0}")]
    InvalidOptions(String),
}

impl SmpError {
    pub fn partial(&self) -> Option<&RunRecord> {
        match self {
            Self::Aborted { partial, .. } => Some(partial),
            Self::InvalidOptions(_) => None,
        }
    }
}

/// Floor applied to the `v_q` estimate and to the `v_h` in use.
pub const VQ_FLOOR: f64 = 1e-12;

/// `max(‖z‖²/N − δ v_w, 1e−12)`.
pub fn estimate_vq(z: &[f64], v_w: f64, delta: f64, n: usize) -> f64 {
    (vecops::norm_sq(z) / n as f64 - delta * v_w).max(VQ_FLOOR)
}

pub fn run(
    model: &MeasurementModel,
    denoiser: &dyn Denoiser,
    algorithm: Algorithm,
    opts: &RunOptions,
) -> Result<RunRecord, SmpError> {
    loops::run_impl(model, denoiser, algorithm, opts, &mut |_| {})
}

/// As [`run`], calling `observer` once per iteration.
pub fn run_observed(
    model: &MeasurementModel,
    denoiser: &dyn Denoiser,
    algorithm: Algorithm,
    opts: &RunOptions,
    observer: &mut dyn FnMut(&IterationState<'_>),
) -> Result<RunRecord, SmpError> {
    loops::run_impl(model, denoiser, algorithm, opts, observer)
}

pub fn run_amp(model: &MeasurementModel, denoiser: &dyn Denoiser, opts: &RunOptions) -> Result<RunRecord, SmpError> {
    run(model, denoiser, Algorithm::Amp, opts)
}

pub fn run_mf_oamp(model: &MeasurementModel, denoiser: &dyn Denoiser, opts: &RunOptions) -> Result<RunRecord, SmpError> {
    run(model, denoiser, Algorithm::MfOamp, opts)
}

pub fn run_vamp_exact(model: &MeasurementModel, denoiser: &dyn Denoiser, opts: &RunOptions) -> Result<RunRecord, SmpError> {
    run(model, denoiser, Algorithm::Vamp, opts)
}

pub fn run_cg_vamp(model: &MeasurementModel, denoiser: &dyn Denoiser, opts: &RunOptions) -> Result<RunRecord, SmpError> {
    run(model, denoiser, Algorithm::CgVamp, opts)
}
