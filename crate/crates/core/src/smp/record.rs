use crate::divest::EstimateDetail;

/// Divergence values from every estimator at one iteration, when computed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlphaByMethod {
    pub oracle: Option<f64>,
    pub analytic: Option<f64>,
    pub bbmc: Option<f64>,
    pub algebraic_prev: Option<f64>,
    pub algebraic_zero: Option<f64>,
    pub polynomial: Option<f64>,
}

/// Finite-size state-evolution checks at one iteration. Each statistic is
/// paired with its concentration threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeRow {
    /// |h_tᵀq_t|/N and 4√(v_h v_q/N).
    pub h_q: f64,
    pub h_q_bound: f64,
    /// |h_tᵀq_0|/N with q_0 = −x, and 4√(v_h v_x/N).
    pub h_q0: f64,
    pub h_q0_bound: f64,
    /// |wᵀA q_t|/N and 4√(v_w v_q χ₂/N).
    pub w_aq: f64,
    pub w_aq_bound: f64,
    pub h_excess_kurtosis: f64,
    /// mean(h_t) and 4√(v_h/N).
    pub h_mean: f64,
    pub h_mean_bound: f64,
}

impl SeRow {
    pub fn orthogonality_ok(&self) -> bool {
        self.h_q <= self.h_q_bound
    }

    pub fn noise_ok(&self) -> bool {
        self.w_aq <= self.w_aq_bound
    }

    pub fn kurtosis_ok(&self, tol: f64) -> bool {
        self.h_excess_kurtosis.abs() <= tol
    }
}

/// Linear-step diagnostics of the CG-VAMP iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CgDiagnostics {
    pub iterations: usize,
    /// ψ⁰..ψⁱ from the scalar recursion.
    pub psi: Vec<f64>,
    /// wᵀμʲ/N for j = 0..i (oracle; empty unless iterates were kept).
    pub wtmu_path: Vec<f64>,
    /// zᵀμʲ/N for j = 0..i.
    pub zmu_path: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub residual_norms: Vec<f64>,
    /// γ̂ from the recursion (regardless of which γ drove the step).
    pub gamma_recursion: f64,
    pub k_identity_residual: f64,
    pub at_mu_norm_sq: f64,
}

/// One row per completed iteration. The first block mirrors the CSV schema;
/// the rest are in-memory diagnostics. Unavailable values are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub t: usize,
    /// NMSE of the denoiser output g(r_t).
    pub nmse: f64,
    pub alpha_est: f64,
    /// Reference divergence α*: the denoiser's analytic divergence when it
    /// has one, otherwise hᵀg/(N v_h) with the true h_t and v_h = ‖h_t‖²/N.
    pub alpha_oracle: f64,
    /// (α̂ − α*)²/α*².
    pub alpha_err: f64,
    pub v_q_est: f64,
    pub v_q_oracle: f64,
    pub v_h_est: f64,
    pub v_h_oracle: f64,
    pub gamma: f64,
    pub k_t: f64,
    /// q_tᵀq̄_{t+1}/N with q̄_{t+1} = g − α* r_t − x.
    pub psi_t: f64,
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub deriv_lhs: f64,
    pub deriv_rhs: f64,
    pub fallback_used: bool,
    pub wall_ms: f64,

    pub alphas: AlphaByMethod,
    pub poly_detail: Option<EstimateDetail>,
    /// Variance actually used by the linear step (estimate or oracle).
    pub v_q_used: f64,
    pub v_h_used: f64,
    pub c_t: f64,
    pub chi2: f64,
    /// −qᵀAᵀμ/(N v_q) for the VAMP family.
    pub gamma_oracle: f64,
    /// wᵀμ/N (oracle) and its recursion estimate ψⁱ.
    pub wtmu_oracle: f64,
    pub wtmu_est: f64,
    pub cg: Option<CgDiagnostics>,
    pub se: Option<SeRow>,
    /// (v_q_est > v_w/(δ⁻¹ − 1), v_h_oracle − v_w) for the VAMP family.
    pub lemma1: Option<(bool, f64)>,
}

impl MetricRow {
    pub(crate) fn new(t: usize) -> Self {
        let nan = f64::NAN;
        Self {
            t,
            nmse: nan,
            alpha_est: nan,
            alpha_oracle: nan,
            alpha_err: nan,
            v_q_est: nan,
            v_q_oracle: nan,
            v_h_est: nan,
            v_h_oracle: nan,
            gamma: nan,
            k_t: nan,
            psi_t: nan,
            u1: nan,
            u2: nan,
            u3: nan,
            deriv_lhs: nan,
            deriv_rhs: nan,
            fallback_used: false,
            wall_ms: 0.0,
            alphas: AlphaByMethod::default(),
            poly_detail: None,
            v_q_used: nan,
            v_h_used: nan,
            c_t: nan,
            chi2: nan,
            gamma_oracle: nan,
            wtmu_oracle: nan,
            wtmu_est: nan,
            cg: None,
            se: None,
            lemma1: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub algorithm: String,
    pub estimator: String,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    /// Final estimate g(r_{T−1}).
    pub estimate: Vec<f64>,
}

impl RunRecord {
    pub fn final_nmse(&self) -> Option<f64> {
        self.rows.last().map(|r| r.nmse)
    }
}
