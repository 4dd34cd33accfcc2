//! Denoisers with analytic divergences and the corrected denoising update
//! `s_{t+1} = C·(g(r) − α·r)` of the orthogonal message-passing family.

use thiserror::Error;

use crate::vecops;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DenoiseError {
    #[error("threshold must be nonnegative and finite, got {0}")]
    NegativeThreshold(f64),
    #[error("noise variance must be nonnegative and finite, got {0}")]
    BadVariance(f64),
    #[error("correction scalar undefined: {0}")]
    Correction(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// A separable-or-not denoiser `g(r; v_h)` acting on the effective
/// observation `r = x + h`, `h ~ N(0, v_h I)`.
pub trait Denoiser: Send + Sync {
    fn apply(&self, r: &[f64], v_h: f64) -> Result<Vec<f64>, DenoiseError>;

    /// `(1/N)·Σ ∂g_i/∂r_i` when known in closed form.
    fn analytic_divergence(&self, _r: &[f64], _v_h: f64) -> Option<f64> {
        None
    }

    fn name(&self) -> String;
}

/// `s_i = sign(r_i)·max(|r_i| − θ, 0)` and its divergence
/// `#{i : |r_i| > θ}/N` (entries exactly at θ count as inactive).
pub fn soft_threshold(r: &[f64], theta: f64) -> Result<(Vec<f64>, f64), DenoiseError> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(DenoiseError::NegativeThreshold(theta));
    }
    let mut active = 0usize;
    let s = r
        .iter()
        .map(|&v| {
            if v.abs() > theta {
                active += 1;
                v - theta.copysign(v)
            } else {
                0.0
            }
        })
        .collect();
    Ok((s, active as f64 / r.len().max(1) as f64))
}

/// Soft thresholding at `θ = multiplier·√v_h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftThreshold {
    pub multiplier: f64,
}

impl SoftThreshold {
    fn theta(&self, v_h: f64) -> Result<f64, DenoiseError> {
        if !(v_h >= 0.0 && v_h.is_finite()) {
            return Err(DenoiseError::BadVariance(v_h));
        }
        Ok(self.multiplier * v_h.sqrt())
    }
}

impl Denoiser for SoftThreshold {
    fn apply(&self, r: &[f64], v_h: f64) -> Result<Vec<f64>, DenoiseError> {
        Ok(soft_threshold(r, self.theta(v_h)?)?.0)
    }

    fn analytic_divergence(&self, r: &[f64], v_h: f64) -> Option<f64> {
        let theta = self.theta(v_h).ok()?;
        soft_threshold(r, theta).ok().map(|(_, d)| d)
    }

    fn name(&self) -> String {
        format!("soft-threshold({})", self.multiplier)
    }
}

/// `g(r) = c·r`, divergence exactly `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDenoiser {
    pub c: f64,
}

pub fn linear_denoiser(c: f64) -> LinearDenoiser {
    LinearDenoiser { c }
}

impl Denoiser for LinearDenoiser {
    fn apply(&self, r: &[f64], _v_h: f64) -> Result<Vec<f64>, DenoiseError> {
        Ok(vecops::scale(self.c, r))
    }

    fn analytic_divergence(&self, _r: &[f64], _v_h: f64) -> Option<f64> {
        Some(self.c)
    }

    fn name(&self) -> String {
        format!("linear({})", self.c)
    }
}

/// How the scalar `C` in `C·(g − α r)` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrectionPolicy {
    /// `C = 1`.
    Unit,
    /// `C = (1 − α)⁻¹`.
    #[default]
    Vamp,
    /// `C = v_h/(v_h − mse)` with `mse` the SURE estimate of the denoiser's MSE.
    Optimal,
}

impl CorrectionPolicy {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "unit" => Some(Self::Unit),
            "vamp" => Some(Self::Vamp),
            "optimal" => Some(Self::Optimal),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Unit => "unit",
            Self::Vamp => "vamp",
            Self::Optimal => "optimal",
        }
    }
}

/// Stein's unbiased estimate of `‖g(r) − x‖²/N` given the divergence.
pub fn sure_mse(r: &[f64], g_out: &[f64], v_h: f64, divergence: f64) -> f64 {
    vecops::dist_sq(g_out, r) / r.len() as f64 - v_h + 2.0 * v_h * divergence
}

/// The scalar `C` under `policy`. `mse_est` is required only for `Optimal`.
pub fn correction_scalar(
    policy: CorrectionPolicy,
    alpha: f64,
    v_h: f64,
    mse_est: Option<f64>,
) -> Result<f64, DenoiseError> {
    let c = match policy {
        CorrectionPolicy::Unit => 1.0,
        CorrectionPolicy::Vamp => {
            if alpha == 1.0 {
                return Err(DenoiseError::Correction("alpha = 1 under the (1 − α)⁻¹ rule".into()));
            }
            1.0 / (1.0 - alpha)
        }
        CorrectionPolicy::Optimal => {
            let mse = mse_est.ok_or_else(|| {
                DenoiseError::Correction("optimal rule needs a denoiser with analytic divergence".into())
            })?;
            let gap = v_h - mse;
            if !(gap > 0.0) {
                return Err(DenoiseError::Correction(format!("v_h − mse = {gap} is not positive")));
            }
            v_h / gap
        }
    };
    if !c.is_finite() || c == 0.0 {
        return Err(DenoiseError::Correction(format!("C = {c}")));
    }
    Ok(c)
}

/// `s_next = C·(g_out − α·r)`; returns `(s_next, C)`.
pub fn corrected_update(
    g_out: &[f64],
    r: &[f64],
    alpha: f64,
    policy: CorrectionPolicy,
    v_h: f64,
    mse_est: Option<f64>,
) -> Result<(Vec<f64>, f64), DenoiseError> {
    if g_out.len() != r.len() {
        return Err(DenoiseError::LengthMismatch(g_out.len(), r.len()));
    }
    let c = correction_scalar(policy, alpha, v_h, mse_est)?;
    let s = g_out.iter().zip(r).map(|(g, ri)| c * (g - alpha * ri)).collect();
    Ok((s, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_examples() {
        let (s, div) = soft_threshold(&[3.0, -1.0, 0.5], 1.0).unwrap();
        assert_eq!(s, vec![2.0, 0.0, 0.0]);
        assert!((div - 1.0 / 3.0).abs() < 1e-15);
        let r = [0.3, -2.0, 5.0];
        let (s, div) = soft_threshold(&r, 0.0).unwrap();
        assert_eq!(s, r.to_vec());
        assert_eq!(div, 1.0);
        assert!(soft_threshold(&r, -0.1).is_err());
    }

    #[test]
    fn linear_denoiser_examples() {
        let r = [1.0, -2.0];
        assert_eq!(linear_denoiser(1.0).apply(&r, 0.1).unwrap(), r.to_vec());
        assert_eq!(linear_denoiser(0.0).apply(&r, 0.1).unwrap(), vec![0.0, 0.0]);
        assert_eq!(linear_denoiser(0.0).analytic_divergence(&r, 0.1), Some(0.0));
    }

    #[test]
    fn corrected_update_examples() {
        let r = vec![1.0, 2.0, -3.0];
        let g = vec![0.5, -1.0, 4.0];
        let (s, c) = corrected_update(&g, &r, 0.0, CorrectionPolicy::Unit, 1.0, None).unwrap();
        assert_eq!((s, c), (g.clone(), 1.0));
        let (s, _) = corrected_update(&r, &r, 1.0, CorrectionPolicy::Unit, 1.0, None).unwrap();
        assert_eq!(s, vec![0.0; 3]);
        let half: Vec<f64> = r.iter().map(|v| 0.5 * v).collect();
        let (s, c) = corrected_update(&half, &r, 0.5, CorrectionPolicy::Vamp, 1.0, None).unwrap();
        assert_eq!(c, 2.0);
        assert_eq!(s, vec![0.0; 3]);
        let (s, _) = corrected_update(&r, &r, 0.5, CorrectionPolicy::Vamp, 1.0, None).unwrap();
        assert_eq!(s, r);
        assert!(corrected_update(&r, &r, 1.0, CorrectionPolicy::Vamp, 1.0, None).is_err());
        assert!(corrected_update(&r, &r, 0.2, CorrectionPolicy::Optimal, 1.0, None).is_err());
        assert!(corrected_update(&r, &r, 0.2, CorrectionPolicy::Optimal, 1.0, Some(1.5)).is_err());
        let (_, c) = corrected_update(&r, &r, 0.2, CorrectionPolicy::Optimal, 1.0, Some(0.5)).unwrap();
        assert_eq!(c, 2.0);
    }
}
