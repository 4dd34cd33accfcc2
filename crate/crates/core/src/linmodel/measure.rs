use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{LinModelError, LinearOperator};
use crate::seeding;
use crate::vecops;

/// Ground truth, operator, noise realization and observations `y = A x + w`.
/// Everything is kept so diagnostics can form oracle errors.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    pub x: Vec<f64>,
    pub op: Arc<LinearOperator>,
    pub w: Vec<f64>,
    pub y: Vec<f64>,
    pub v_w: f64,
    pub delta: f64,
}

impl MeasurementModel {
    pub fn n(&self) -> usize {
        self.op.cols()
    }

    pub fn m(&self) -> usize {
        self.op.rows()
    }
}

/// Draws `w ~ N(0, v_w I)` and forms `y = A x + w`.
pub fn measure(
    x: Vec<f64>,
    op: Arc<LinearOperator>,
    v_w: f64,
    seed: u64,
) -> Result<MeasurementModel, LinModelError> {
    if x.len() != op.cols() {
        return Err(LinModelError::DimensionMismatch { expected: op.cols(), got: x.len() });
    }
    if !(v_w >= 0.0 && v_w.is_finite()) {
        return Err(LinModelError::InvalidSpec(format!("noise variance {v_w} must be finite and nonnegative")));
    }
    let mut rng = seeding::rng_from_seed(seed);
    let sd = v_w.sqrt();
    let w: Vec<f64> = (0..op.rows()).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut y = op.apply(&x);
    vecops::axpy(1.0, &w, &mut y);
    let delta = op.delta();
    Ok(MeasurementModel { x, op, w, y, v_w, delta })
}

/// Noise variance giving the requested SNR: `v_w = ‖Ax‖²/(M·10^(snr/10))`.
pub fn snr_to_vw(x: &[f64], op: &LinearOperator, snr_db: f64) -> Result<f64, LinModelError> {
    if x.len() != op.cols() {
        return Err(LinModelError::DimensionMismatch { expected: op.cols(), got: x.len() });
    }
    let energy = vecops::norm_sq(&op.apply(x));
    Ok(energy / (op.rows() as f64 * 10f64.powf(snr_db / 10.0)))
}

/// `‖s − x‖²/‖x‖²`.
pub fn nmse(s: &[f64], x: &[f64]) -> Result<f64, LinModelError> {
    if s.len() != x.len() {
        return Err(LinModelError::DimensionMismatch { expected: x.len(), got: s.len() });
    }
    let denom = vecops::norm_sq(x);
    if denom == 0.0 {
        return Err(LinModelError::Degenerate("ground truth is identically zero".into()));
    }
    Ok(vecops::dist_sq(s, x) / denom)
}
