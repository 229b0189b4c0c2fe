//! Component densities for the Gaussian/uniform mixture of mixtures.
//!
//! Gaussians are parameterized by the lower-triangular Cholesky factor `L` of
//! the precision matrix, so `precision = L Lᵀ` and the log-determinant comes
//! straight from the diagonal of `L`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, ClusterError, Result};

/// Lower bound on the diagonal of a precision Cholesky factor.
pub const DIAG_FLOOR: f64 = 1e-6;
/// Uniform box widths are floored at this fraction of the per-dimension data range.
pub const WIDTH_FLOOR_FRACTION: f64 = 1e-6;
/// Inner mixing weight bounds used during optimization.
pub const OMEGA_LO: f64 = 0.01;
pub const OMEGA_HI: f64 = 0.99;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian with mean `mu` and precision `L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub mu: DVector<f64>,
    /// Lower-triangular Cholesky factor of the precision matrix.
    pub chol: DMatrix<f64>,
}

impl GaussianComponent {
    pub fn new(mu: DVector<f64>, chol: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if chol.nrows() != d || chol.ncols() != d {
            return Err(ClusterError::DimensionMismatch { expected: d, got: chol.nrows() });
        }
        for r in 0..d {
            for c in r + 1..d {
                if chol[(r, c)] != 0.0 {
                    return Err(invalid("precision factor must be lower triangular"));
                }
            }
            if !(chol[(r, r)] >= DIAG_FLOOR) {
                return Err(invalid(format!(
                    "precision factor diagonal {} below floor {DIAG_FLOOR}",
                    chol[(r, r)]
                )));
            }
        }
        Ok(Self { mu, chol })
    }

    /// Builds the component from a covariance matrix (Cholesky of its inverse).
    pub fn from_covariance(mu: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let chol = precision_factor(cov)?;
        Self::new(mu, chol)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn precision(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        // (L Lᵀ)⁻¹ = L⁻ᵀ L⁻¹
        let d = self.dim();
        let linv = self
            .chol
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .expect("diagonal is floored away from zero");
        linv.transpose() * linv
    }

    pub fn log_det_chol(&self) -> f64 {
        (0..self.dim()).map(|j| self.chol[(j, j)].ln()).sum()
    }
}

/// Cholesky factor `L` of `cov⁻¹`, with a diagonal jitter retry when `cov` is
/// numerically not positive definite.
pub fn precision_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    let sym = (cov + cov.transpose()) * 0.5;
    let trace = sym.trace().abs().max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let c = &sym + DMatrix::identity(d, d) * jitter;
        if let Some(ch) = c.clone().cholesky() {
            let inv = ch.inverse();
            let inv = (&inv + inv.transpose()) * 0.5;
            if let Some(pch) = inv.cholesky() {
                let mut l = pch.unpack();
                for j in 0..d {
                    if l[(j, j)] < DIAG_FLOOR {
                        l[(j, j)] = DIAG_FLOOR;
                    }
                }
                return Ok(l);
            }
        }
        jitter = if jitter == 0.0 { 1e-8 * trace / d as f64 } else { jitter * 10.0 };
    }
    Err(ClusterError::NumericalFailure {
        message: "covariance is not positive definite".into(),
        iterate: None,
    })
}

/// Axis-aligned uniform box `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformComponent {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl UniformComponent {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(ClusterError::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        if lower.iter().zip(upper.iter()).any(|(a, b)| !(b > a)) {
            return Err(invalid("uniform box needs upper > lower in every dimension"));
        }
        Ok(Self { lower, upper })
    }

    pub fn widths(&self) -> DVector<f64> {
        &self.upper - &self.lower
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.upper + &self.lower) * 0.5
    }

    pub fn log_volume(&self) -> f64 {
        self.lower.iter().zip(self.upper.iter()).map(|(a, b)| (b - a).ln()).sum()
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(invalid("softmax input must be finite"));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `ln Σ exp(v)`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `ln φ(x | μ, (L Lᵀ)⁻¹)`.
pub fn gaussian_logpdf(x: &[f64], g: &GaussianComponent) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(ClusterError::DimensionMismatch { expected: g.dim(), got: x.len() });
    }
    Ok(gaussian_logpdf_raw(x, g.mu.as_slice(), &g.chol, g.log_det_chol()))
}

/// Unchecked kernel: `-(D/2) ln 2π + Σ ln L_jj - ½‖Lᵀ(x-μ)‖²`.
#[inline]
pub(crate) fn gaussian_logpdf_raw(x: &[f64], mu: &[f64], chol: &DMatrix<f64>, log_det: f64) -> f64 {
    let d = x.len();
    let mut quad = 0.0;
    // (Lᵀ v)_c = Σ_{r ≥ c} L_rc v_r
    for c in 0..d {
        let mut z = 0.0;
        for r in c..d {
            z += chol[(r, c)] * (x[r] - mu[r]);
        }
        quad += z * z;
    }
    -0.5 * d as f64 * LN_2PI + log_det - 0.5 * quad
}

/// Density of the uniform box at `x` (zero outside the closed box).
pub fn uniform_pdf(x: &[f64], u: &UniformComponent) -> f64 {
    if u.contains(x) {
        (-u.log_volume()).exp()
    } else {
        0.0
    }
}

/// `ln[ω φ(x) + (1-ω) u(x)]`, composed by log-sum-exp.
pub fn component_log_density(x: &[f64], omega: f64, g: &GaussianComponent, u: &UniformComponent) -> Result<f64> {
    let lg = gaussian_logpdf(x, g)?;
    let lu = if u.contains(x) { -u.log_volume() } else { f64::NEG_INFINITY };
    Ok(mix_log(omega, lg, lu))
}

/// `ω φ(x) + (1-ω) u(x)`.
pub fn component_density(x: &[f64], omega: f64, g: &GaussianComponent, u: &UniformComponent) -> Result<f64> {
    component_log_density(x, omega, g, u).map(f64::exp)
}

#[inline]
pub(crate) fn mix_log(omega: f64, log_gauss: f64, log_unif: f64) -> f64 {
    let lg = if omega > 0.0 { omega.ln() + log_gauss } else { f64::NEG_INFINITY };
    let lu = if omega < 1.0 && log_unif > f64::NEG_INFINITY {
        (1.0 - omega).ln() + log_unif
    } else {
        f64::NEG_INFINITY
    };
    let m = lg.max(lu);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((lg - m).exp() + (lu - m).exp()).ln()
}
