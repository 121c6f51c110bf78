//! Power variogram on the warped space, the Brown–Resnick matrix `Σ` and
//! limiting conditional exceedance probabilities.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, Point};
use crate::stats::normal_pdf;

/// Smoothness band enforced by the raw parametrization.
pub const SMOOTHNESS_MIN: f64 = 0.05;
pub const SMOOTHNESS_MAX: f64 = 1.95;

/// Jitter ladder tried when `Σ` is not numerically positive definite.
const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `ψ = (φ, κ)` of `γ(h) = (h / φ)^κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramParams {
    pub range: f64,
    pub smoothness: f64,
}

impl VariogramParams {
    pub fn new(range: f64, smoothness: f64) -> Result<Self> {
        if !(range > 0.0) || !range.is_finite() {
            return Err(Error::invalid(format!("range must be positive, got {range}")));
        }
        if !(smoothness > 0.0 && smoothness < 2.0) {
            return Err(Error::invalid(format!(
                "smoothness must lie in (0, 2), got {smoothness}"
            )));
        }
        Ok(Self { range, smoothness })
    }

    /// Unconstrained values: `φ = softplus(r0)`, `κ = 0.05 + 1.9 σ(r1)`.
    /// Smoothness outside the band is clamped into it.
    pub fn to_raw(&self) -> [f64; 2] {
        let r0 = self.range + (-(-self.range).exp_m1()).ln();
        let width = SMOOTHNESS_MAX - SMOOTHNESS_MIN;
        let t = ((self.smoothness - SMOOTHNESS_MIN) / width).clamp(1e-9, 1.0 - 1e-9);
        [r0, (t / (1.0 - t)).ln()]
    }

    pub fn from_raw(raw: [f64; 2]) -> Self {
        Self {
            range: softplus(raw[0]).max(f64::MIN_POSITIVE),
            smoothness: SMOOTHNESS_MIN + (SMOOTHNESS_MAX - SMOOTHNESS_MIN) * logistic(raw[1]),
        }
    }

    /// `(dφ/dr0, dκ/dr1)`.
    pub fn raw_derivatives(raw: [f64; 2]) -> [f64; 2] {
        let s = logistic(raw[1]);
        [logistic(raw[0]), (SMOOTHNESS_MAX - SMOOTHNESS_MIN) * s * (1.0 - s)]
    }

    /// `γ` at separation `h`.
    #[inline]
    pub fn gamma(&self, h: f64) -> f64 {
        if h == 0.0 {
            0.0
        } else {
            (h / self.range).powf(self.smoothness)
        }
    }
}

/// Semivariogram between two already-warped sites.
pub fn semivariogram(s1: Point, s2: Point, psi: &VariogramParams) -> f64 {
    psi.gamma(distance(s1, s2))
}

/// Full `D x D` matrix of `γ_ij`.
pub fn gamma_matrix(coords: &[Point], psi: &VariogramParams) -> DMatrix<f64> {
    let d = coords.len();
    let mut g = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            let v = semivariogram(coords[i], coords[j], psi);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// `Σ = (γ_i1 + γ_j1 - γ_ij)_{2<=i,j<=D}` with site 1 (index 0) as anchor.
pub fn sigma_from_gamma(gamma: &DMatrix<f64>) -> DMatrix<f64> {
    let m = gamma.nrows() - 1;
    DMatrix::from_fn(m, m, |i, j| {
        gamma[(i + 1, 0)] + gamma[(j + 1, 0)] - gamma[(i + 1, j + 1)]
    })
}

/// Factorized Brown–Resnick matrix.
#[derive(Debug, Clone)]
pub struct BrMatrix {
    pub sigma: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    /// Diagonal jitter that was needed for the factorization.
    pub jitter: f64,
    chol: Cholesky<f64, Dyn>,
}

impl BrMatrix {
    pub fn from_gamma(gamma: DMatrix<f64>) -> Result<Self> {
        if gamma.nrows() < 2 {
            return Err(Error::invalid("the Brown–Resnick matrix needs D >= 2"));
        }
        for i in 0..gamma.nrows() {
            for j in (i + 1)..gamma.nrows() {
                if !(gamma[(i, j)] > 0.0) {
                    return Err(Error::invalid(format!(
                        "sites {i} and {j} coincide (zero semivariogram)"
                    )));
                }
            }
        }
        let sigma = sigma_from_gamma(&gamma);
        for &jitter in JITTER_LADDER.iter() {
            let mut m = sigma.clone();
            for k in 0..m.nrows() {
                m[(k, k)] += jitter;
            }
            if let Some(chol) = Cholesky::new(m) {
                return Ok(Self {
                    sigma,
                    gamma,
                    jitter,
                    chol,
                });
            }
        }
        Err(Error::Cholesky {
            jitter: *JITTER_LADDER.last().unwrap(),
        })
    }

    /// Dimension `D - 1`.
    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// `γ_{i,1}` for `i = 2..D`.
    pub fn anchor_gamma(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.gamma[(i + 1, 0)])
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Lower Cholesky factor.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Builds `Σ` for warped sites under `ψ`.
pub fn br_matrix(warped: &[Point], psi: &VariogramParams) -> Result<BrMatrix> {
    BrMatrix::from_gamma(gamma_matrix(warped, psi))
}

/// Limiting CEP `2 [1 - Φ(sqrt(γ / 2))]`, written as `erfc(sqrt(γ) / 2)`.
pub fn theoretical_cep(gamma: f64) -> f64 {
    libm::erfc(gamma.max(0.0).sqrt() / 2.0)
}

/// `d π / d γ = -φ(x) / (2x)` with `x = sqrt(γ / 2)`; requires `γ > 0`.
pub fn theoretical_cep_derivative(gamma: f64) -> f64 {
    let x = (gamma / 2.0).sqrt();
    -normal_pdf(x) / (2.0 * x)
}
