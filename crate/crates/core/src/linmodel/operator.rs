use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rustdct::{DctPlanner, TransformType2And3};

use super::LinModelError;
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    DenseGaussian,
    Fijl,
    /// Randomized-DCT operator whose singular values sit at the Marchenko–Pastur
    /// quantiles of an i.i.d. Gaussian matrix of the same shape.
    SpectralGaussian,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::DenseGaussian => "gaussian",
            Self::Fijl => "fijl",
            Self::SpectralGaussian => "spectral-gaussian",
        }
    }

    pub fn parse(name: &str) -> Result<Self, LinModelError> {
        match name {
            "gaussian" | "dense-gaussian" => Ok(Self::DenseGaussian),
            "fijl" => Ok(Self::Fijl),
            "spectral-gaussian" => Ok(Self::SpectralGaussian),
            other => Err(LinModelError::UnknownKind(other.to_string())),
        }
    }
}

/// Spectral decomposition of AAᵀ, cached on first use.
pub(crate) enum GramEigen {
    /// AAᵀ is diagonal with these entries (structured operators).
    Diagonal(Vec<f64>),
    Dense { values: Vec<f64>, vectors: DMatrix<f64> },
}

/// `A = J·S·P·H·D`: random signs, orthonormal DCT-II, permutation, singular
/// scaling, and selection of the first M rows.
struct Structured {
    signs: Vec<f64>,
    /// `(P v)_i = v[perm[i]]`.
    perm: Vec<usize>,
    /// Diagonal of S restricted to the M retained rows.
    singular: Vec<f64>,
    dct: Arc<dyn TransformType2And3<f64>>,
}

enum Repr {
    Dense(DMatrix<f64>),
    Structured(Structured),
}

/// An M×N measurement operator, trace-normalized so that Tr{AAᵀ}/N = 1.
pub struct LinearOperator {
    rows: usize,
    cols: usize,
    kind: OperatorKind,
    repr: Repr,
    gram: OnceLock<DMatrix<f64>>,
    eigen: OnceLock<GramEigen>,
}

impl fmt::Debug for LinearOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearOperator")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

/// Estimated spectral moment with its standard error (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiMoment {
    pub value: f64,
    pub std_err: f64,
}

pub const DEFAULT_HUTCHINSON_PROBES: usize = 64;

fn check_shape(m: usize, n: usize) -> Result<(), LinModelError> {
    if m == 0 || n == 0 {
        return Err(LinModelError::InvalidShape { m, n });
    }
    if m > n {
        return Err(LinModelError::InvalidShape { m, n });
    }
    Ok(())
}

/// Dense operator with i.i.d. Gaussian entries, rescaled by the computed
/// Frobenius norm so that Tr{AAᵀ}/N = 1 holds to rounding.
pub fn gen_gaussian_operator(m: usize, n: usize, seed: u64) -> Result<LinearOperator, LinModelError> {
    check_shape(m, n)?;
    let mut rng = seeding::rng_from_seed(seed);
    let mut a = DMatrix::<f64>::from_fn(m, n, |_, _| rng.sample(StandardNormal));
    let fro = a.norm();
    if fro == 0.0 {
        return Err(LinModelError::Degenerate("all-zero Gaussian draw".into()));
    }
    a *= (n as f64).sqrt() / fro;
    Ok(LinearOperator::from_repr(m, n, OperatorKind::DenseGaussian, Repr::Dense(a)))
}

/// Wraps an explicit matrix (rescaled to Tr{AAᵀ}/N = 1). Used for fixtures
/// and for densified operators.
pub fn dense_operator(mut a: DMatrix<f64>) -> Result<LinearOperator, LinModelError> {
    let (m, n) = a.shape();
    check_shape(m, n)?;
    let fro = a.norm();
    if fro == 0.0 {
        return Err(LinModelError::Degenerate("zero matrix".into()));
    }
    a *= (n as f64).sqrt() / fro;
    Ok(LinearOperator::from_repr(m, n, OperatorKind::DenseGaussian, Repr::Dense(a)))
}

/// Fast ill-conditioned Johnson–Lindenstrauss operator. The M retained
/// singular values are geometrically spaced between 1 and `kappa`, so
/// κ(A) = kappa exactly, then scaled for trace normalization.
pub fn gen_fijl_operator(m: usize, n: usize, kappa: f64, seed: u64) -> Result<LinearOperator, LinModelError> {
    check_shape(m, n)?;
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(LinModelError::InvalidSpec(format!("kappa {kappa} must be finite and at least 1")));
    }
    let singular = geometric_singular_values(m, kappa);
    structured(m, n, OperatorKind::Fijl, singular, seed)
}

/// Randomized-DCT operator carrying the limiting singular spectrum of an
/// M×N i.i.d. Gaussian matrix (deterministic Marchenko–Pastur quantiles).
/// Stands in for a dense Gaussian matrix at sizes where storing one is
/// impossible; message-passing dynamics only see the spectrum and the
/// right singular basis.
pub fn gen_spectral_gaussian_operator(m: usize, n: usize, seed: u64) -> Result<LinearOperator, LinModelError> {
    check_shape(m, n)?;
    let eig = marchenko_pastur_quantiles(m, m as f64 / n as f64);
    let singular = eig.into_iter().map(f64::sqrt).collect();
    structured(m, n, OperatorKind::SpectralGaussian, singular, seed)
}

/// `m` values from `kappa` down to 1, geometrically spaced.
pub fn geometric_singular_values(m: usize, kappa: f64) -> Vec<f64> {
    if m == 1 {
        return vec![1.0];
    }
    (0..m)
        .map(|i| kappa.powf(1.0 - i as f64 / (m - 1) as f64))
        .collect()
}

/// Midpoint quantiles `F⁻¹((k + ½)/m)` of the Marchenko–Pastur law with ratio
/// `c ∈ (0, 1]` and unit mean.
pub fn marchenko_pastur_quantiles(m: usize, c: f64) -> Vec<f64> {
    let lo = (1.0 - c.sqrt()).powi(2);
    let hi = (1.0 + c.sqrt()).powi(2);
    // Substituting λ = lo + (hi − lo)(1 − cos θ)/2 removes the square-root
    // endpoint behaviour: the density in θ is smooth on [0, π].
    let grid = 1 << 16;
    let width = hi - lo;
    let density = |theta: f64| {
        let lambda = lo + width * (1.0 - theta.cos()) / 2.0;
        let s = width * theta.sin() / 2.0;
        if lambda <= 0.0 {
            // Only reachable at θ = 0 when c = 1; the limit of s²/λ is finite.
            return width / (2.0 * std::f64::consts::PI * c);
        }
        s * s / (2.0 * std::f64::consts::PI * c * lambda)
    };
    let h = std::f64::consts::PI / grid as f64;
    let mut cdf = Vec::with_capacity(grid + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    let mut prev = density(0.0);
    for k in 1..=grid {
        let cur = density(k as f64 * h);
        acc += 0.5 * h * (prev + cur);
        cdf.push(acc);
        prev = cur;
    }
    let total = acc;
    let mut out = Vec::with_capacity(m);
    let mut j = 0;
    for k in 0..m {
        let target = (k as f64 + 0.5) / m as f64 * total;
        while j + 1 < grid && cdf[j + 1] < target {
            j += 1;
        }
        let frac = (target - cdf[j]) / (cdf[j + 1] - cdf[j]).max(f64::MIN_POSITIVE);
        let theta = (j as f64 + frac) * h;
        out.push(lo + width * (1.0 - theta.cos()) / 2.0);
    }
    // Largest first, matching the FIJL ordering.
    out.reverse();
    out
}

fn structured(
    m: usize,
    n: usize,
    kind: OperatorKind,
    mut singular: Vec<f64>,
    seed: u64,
) -> Result<LinearOperator, LinModelError> {
    let mut rng = seeding::rng_from_seed(seed);
    let signs: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    // Tr{AAᵀ} = Σ s_i² over retained rows.
    let trace: f64 = singular.iter().map(|s| s * s).sum();
    let scale = (n as f64 / trace).sqrt();
    for s in &mut singular {
        *s *= scale;
    }
    let dct = DctPlanner::new().plan_dct2(n);
    Ok(LinearOperator::from_repr(
        m,
        n,
        kind,
        Repr::Structured(Structured { signs, perm, singular, dct }),
    ))
}

impl Structured {
    fn apply(&self, x: &[f64], m: usize) -> Vec<f64> {
        let n = x.len();
        let mut v: Vec<f64> = x.iter().zip(&self.signs).map(|(a, s)| a * s).collect();
        let mut scratch = vec![0.0; self.dct.get_scratch_len()];
        self.dct.process_dct2_with_scratch(&mut v, &mut scratch);
        let c0 = (1.0 / n as f64).sqrt();
        let ck = (2.0 / n as f64).sqrt();
        (0..m)
            .map(|i| {
                let k = self.perm[i];
                let c = if k == 0 { c0 } else { ck };
                self.singular[i] * c * v[k]
            })
            .collect()
    }

    fn adjoint(&self, z: &[f64], n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        let c0 = (1.0 / n as f64).sqrt();
        let ck = (2.0 / n as f64).sqrt();
        for (i, zi) in z.iter().enumerate() {
            let k = self.perm[i];
            // DCT-III in rustdct halves the k = 0 term.
            let c = if k == 0 { 2.0 * c0 } else { ck };
            v[k] = self.singular[i] * c * zi;
        }
        let mut scratch = vec![0.0; self.dct.get_scratch_len()];
        self.dct.process_dct3_with_scratch(&mut v, &mut scratch);
        for (vi, s) in v.iter_mut().zip(&self.signs) {
            *vi *= s;
        }
        v
    }
}

impl LinearOperator {
    fn from_repr(rows: usize, cols: usize, kind: OperatorKind, repr: Repr) -> Self {
        Self { rows, cols, kind, repr, gram: OnceLock::new(), eigen: OnceLock::new() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    /// δ = M/N.
    pub fn delta(&self) -> f64 {
        self.rows as f64 / self.cols as f64
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.repr, Repr::Dense(_))
    }

    /// `A·x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "apply: input length");
        match &self.repr {
            Repr::Dense(a) => {
                let mut out = nalgebra::DVector::<f64>::zeros(self.rows);
                out.gemv(1.0, a, &nalgebra::DVectorView::from_slice(x, self.cols), 0.0);
                out.data.into()
            }
            Repr::Structured(s) => s.apply(x, self.rows),
        }
    }

    /// `Aᵀ·z`.
    pub fn adjoint(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.rows, "adjoint: input length");
        match &self.repr {
            Repr::Dense(a) => {
                let mut out = nalgebra::DVector::<f64>::zeros(self.cols);
                out.gemv_tr(1.0, a, &nalgebra::DVectorView::from_slice(z, self.rows), 0.0);
                out.data.into()
            }
            Repr::Structured(s) => s.adjoint(z, self.cols),
        }
    }

    /// Explicit M×N matrix. Structured operators are expanded column by column.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Dense(a) => a.clone(),
            Repr::Structured(_) => {
                let mut out = DMatrix::zeros(self.rows, self.cols);
                let mut e = vec![0.0; self.cols];
                for j in 0..self.cols {
                    e[j] = 1.0;
                    let col = self.apply(&e);
                    out.column_mut(j).copy_from_slice(&col);
                    e[j] = 0.0;
                }
                out
            }
        }
    }

    /// Singular values of the retained rows, when the operator stores them.
    pub fn singular_values(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Structured(s) => Some(&s.singular),
            Repr::Dense(_) => None,
        }
    }

    /// AAᵀ for dense operators (cached).
    fn gram(&self) -> &DMatrix<f64> {
        self.gram.get_or_init(|| match &self.repr {
            Repr::Dense(a) => a * a.transpose(),
            Repr::Structured(s) => DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                self.rows,
                s.singular.iter().map(|v| v * v),
            )),
        })
    }

    /// Eigen-decomposition of AAᵀ (cached). Dense operators pay an O(M³)
    /// factorization on first use.
    pub(crate) fn gram_eigen(&self) -> &GramEigen {
        self.eigen.get_or_init(|| match &self.repr {
            Repr::Structured(s) => GramEigen::Diagonal(s.singular.iter().map(|v| v * v).collect()),
            Repr::Dense(_) => {
                let eig = nalgebra::SymmetricEigen::new(self.gram().clone());
                GramEigen::Dense {
                    values: eig.eigenvalues.iter().map(|v| v.max(0.0)).collect(),
                    vectors: eig.eigenvectors,
                }
            }
        })
    }

    /// Eigenvalues of AAᵀ (M of them).
    pub fn gram_eigenvalues(&self) -> Vec<f64> {
        match self.gram_eigen() {
            GramEigen::Diagonal(d) => d.clone(),
            GramEigen::Dense { values, .. } => values.clone(),
        }
    }
}

/// χ_j = Tr{(AAᵀ)^j}/N for j ∈ {1, 2, 3}: exact for dense operators,
/// Hutchinson estimation with `probes` Rademacher vectors for structured ones.
pub fn chi_moment_with_probes(
    op: &LinearOperator,
    j: u32,
    probes: usize,
    seed: u64,
) -> Result<ChiMoment, LinModelError> {
    if !(1..=3).contains(&j) {
        return Err(LinModelError::UnsupportedMoment(j));
    }
    let n = op.cols as f64;
    match &op.repr {
        Repr::Dense(_) => {
            let g = op.gram();
            let value = match j {
                1 => g.trace(),
                2 => g.norm_squared(),
                _ => (g * g).dot(g),
            };
            Ok(ChiMoment { value: value / n, std_err: 0.0 })
        }
        Repr::Structured(_) => {
            if probes < 2 {
                return Err(LinModelError::InvalidSpec("Hutchinson needs at least 2 probes".into()));
            }
            let mut rng = seeding::rng_from_seed(seed);
            let samples: Vec<f64> = (0..probes)
                .map(|_| {
                    let z: Vec<f64> =
                        (0..op.rows).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
                    let mut v = z.clone();
                    for _ in 0..j {
                        v = op.apply(&op.adjoint(&v));
                    }
                    crate::vecops::dot(&z, &v) / n
                })
                .collect();
            let mean = samples.iter().sum::<f64>() / probes as f64;
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (probes - 1) as f64;
            Ok(ChiMoment { value: mean, std_err: (var / probes as f64).sqrt() })
        }
    }
}

pub fn chi_moment(op: &LinearOperator, j: u32) -> Result<ChiMoment, LinModelError> {
    chi_moment_with_probes(op, j, DEFAULT_HUTCHINSON_PROBES, 0)
}
