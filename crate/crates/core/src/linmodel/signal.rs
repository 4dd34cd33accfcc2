use std::path::PathBuf;

use rand::Rng;
use rand_distr::StandardNormal;

use super::LinModelError;
use crate::seeding;

#[derive(Debug, Clone, PartialEq)]
pub enum SignalKind {
    /// Each entry is nonzero with probability `sparsity`, values N(0, amplitude_var).
    BernoulliGaussian,
    /// A new N(0, amplitude_var) level starts at each index with probability `sparsity`.
    PiecewiseConstant,
    /// Raw little-endian f64 values, exactly N of them.
    FromFile(PathBuf),
}

impl SignalKind {
    /// Parses the config/CLI name. `from-file` needs a path supplied separately.
    pub fn parse(name: &str, path: Option<PathBuf>) -> Result<Self, LinModelError> {
        match name {
            "bernoulli-gaussian" => Ok(Self::BernoulliGaussian),
            "piecewise-constant" => Ok(Self::PiecewiseConstant),
            "from-file" => path
                .map(Self::FromFile)
                .ok_or_else(|| LinModelError::UnknownKind("from-file without a path".into())),
            other => Err(LinModelError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub kind: SignalKind,
    pub n: usize,
    pub sparsity: f64,
    pub amplitude_var: f64,
}

impl SignalSpec {
    pub fn bernoulli_gaussian(n: usize, sparsity: f64) -> Self {
        Self { kind: SignalKind::BernoulliGaussian, n, sparsity, amplitude_var: 1.0 }
    }
}

/// Draws x according to `spec`, deterministically in `(spec, seed)`.
pub fn gen_signal(spec: &SignalSpec, seed: u64) -> Result<Vec<f64>, LinModelError> {
    if spec.n == 0 {
        return Err(LinModelError::InvalidSpec("N must be at least 1".into()));
    }
    if !(spec.amplitude_var >= 0.0 && spec.amplitude_var.is_finite()) {
        return Err(LinModelError::InvalidSpec("amplitude variance must be finite and nonnegative".into()));
    }
    let check_sparsity = || {
        if spec.sparsity > 0.0 && spec.sparsity <= 1.0 {
            Ok(())
        } else {
            Err(LinModelError::InvalidSpec(format!("sparsity {} outside (0, 1]", spec.sparsity)))
        }
    };
    let sd = spec.amplitude_var.sqrt();
    let mut rng = seeding::rng_from_seed(seed);
    match &spec.kind {
        SignalKind::BernoulliGaussian => {
            check_sparsity()?;
            Ok((0..spec.n)
                .map(|_| {
                    let active = rng.gen::<f64>() < spec.sparsity;
                    let v: f64 = rng.sample(StandardNormal);
                    if active { sd * v } else { 0.0 }
                })
                .collect())
        }
        SignalKind::PiecewiseConstant => {
            check_sparsity()?;
            let mut level = sd * rng.sample::<f64, _>(StandardNormal);
            Ok((0..spec.n)
                .map(|i| {
                    let jump = rng.gen::<f64>() < spec.sparsity;
                    let v: f64 = rng.sample(StandardNormal);
                    if i > 0 && jump {
                        level = sd * v;
                    }
                    level
                })
                .collect())
        }
        SignalKind::FromFile(path) => read_signal_file(path, spec.n),
    }
}

fn read_signal_file(path: &PathBuf, n: usize) -> Result<Vec<f64>, LinModelError> {
    let bytes = std::fs::read(path).map_err(|e| LinModelError::Io(path.display().to_string(), e))?;
    if bytes.len() != 8 * n {
        return Err(LinModelError::DimensionMismatch { expected: 8 * n, got: bytes.len() });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
