//! Fitting objectives: weighted least squares on CEPs, gradient score
//! matching on the Brown–Resnick intensity, and the ridge penalty on
//! high-resolution SR-RBF weights.

pub mod gsm;
pub mod wls;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dependence::{gamma_matrix, VariogramParams};
use crate::error::{Error, Result};
use crate::geometry::{distance, Point};
use crate::warp::{Unit, WarpStack};

pub use gsm::{
    br_log_intensity, gsm_event_score, gsm_loss, log_intensity_derivatives, GsmConfig, GsmEvent,
    GsmLoss, LogIntensityDerivatives,
};
pub use wls::{wls_loss, wls_pair_term, WlsConfig, WlsLoss};

/// A loss that depends on the parameters only through the matrix of
/// semivariogram values `γ_ij` of the warped sites.
pub trait GammaLoss {
    fn value(&self, gamma: &DMatrix<f64>) -> Result<f64>;

    /// Value and `∂L/∂γ_ij` stored in the strict upper triangle.
    fn value_and_adjoint(&self, gamma: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)>;

    /// Number of sites the loss expects.
    fn dim(&self) -> usize;
}

/// Gradients with respect to raw `ψ`, the trainable `Θ` and raw `W`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossGradient {
    pub psi: [f64; 2],
    pub theta: Vec<f64>,
    pub weights: Vec<f64>,
}

fn check_dim<L: GammaLoss + ?Sized>(loss: &L, coords: &[Point]) -> Result<()> {
    if loss.dim() != coords.len() {
        return Err(Error::invalid(format!(
            "loss set up for {} sites, got {}",
            loss.dim(),
            coords.len()
        )));
    }
    Ok(())
}

/// Loss at `ψ` after warping `coords` (the input space) with `stack`.
pub fn evaluate<L: GammaLoss + ?Sized>(
    loss: &L,
    psi: &VariogramParams,
    stack: &WarpStack,
    coords: &[Point],
) -> Result<f64> {
    check_dim(loss, coords)?;
    let warped = stack.forward(coords)?.coords;
    loss.value(&gamma_matrix(&warped, psi))
}

/// Loss and its gradient with respect to every raw parameter.
pub fn evaluate_with_gradient<L: GammaLoss + ?Sized>(
    loss: &L,
    psi_raw: [f64; 2],
    stack: &WarpStack,
    coords: &[Point],
) -> Result<(f64, LossGradient)> {
    check_dim(loss, coords)?;
    let psi = VariogramParams::from_raw(psi_raw);
    let dpsi = VariogramParams::raw_derivatives(psi_raw);
    let mut value = f64::NAN;
    let mut g_psi = [0.0; 2];
    let stack_grad = stack.forward_backward(coords, |warped| {
        let gamma = gamma_matrix(warped, &psi);
        let (v, adj) = loss.value_and_adjoint(&gamma)?;
        value = v;
        let (phi, kappa) = (psi.range, psi.smoothness);
        let mut out = vec![[0.0; 2]; warped.len()];
        for i in 0..warped.len() {
            for j in (i + 1)..warped.len() {
                let a = adj[(i, j)];
                if a == 0.0 {
                    continue;
                }
                let g = gamma[(i, j)];
                let d = distance(warped[i], warped[j]);
                g_psi[0] += a * (-kappa * g / phi);
                g_psi[1] += a * g * (d / phi).ln();
                let s = a * kappa * g / (d * d);
                for k in 0..2 {
                    let t = s * (warped[i][k] - warped[j][k]);
                    out[i][k] += t;
                    out[j][k] -= t;
                }
            }
        }
        Ok(out)
    })?;
    Ok((
        value,
        LossGradient {
            psi: [g_psi[0] * dpsi[0], g_psi[1] * dpsi[1]],
            theta: stack_grad.theta,
            weights: stack_grad.weights,
        },
    ))
}

/// Ridge penalty `α Σ w²` over the effective weights of SR-RBF units with
/// resolution 2 or more.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub alpha: f64,
}

impl Default for Regularizer {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

impl Regularizer {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::invalid(format!("alpha must be nonnegative, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    fn penalized(unit: &Unit) -> Option<&crate::warp::SrRbfUnit> {
        match unit {
            Unit::SrRbf(u) if u.resolution >= 2 => Some(u),
            _ => None,
        }
    }

    pub fn penalty(&self, stack: &WarpStack) -> f64 {
        if self.alpha == 0.0 {
            return 0.0;
        }
        let sum: f64 = stack
            .units
            .iter()
            .filter_map(Self::penalized)
            .flat_map(|u| u.weights())
            .map(|w| w * w)
            .sum();
        self.alpha * sum
    }

    /// `∂penalty/∂W` laid out like [`WarpStack::raw_weights`].
    pub fn gradient(&self, stack: &WarpStack) -> Vec<f64> {
        let mut out = Vec::with_capacity(stack.n_weights());
        for (i, unit) in stack.units.iter().enumerate() {
            if stack.is_frozen(i) {
                continue;
            }
            match Self::penalized(unit) {
                Some(u) if self.alpha != 0.0 => out.extend(
                    u.layers
                        .iter()
                        .map(|l| 2.0 * self.alpha * l.weight() * l.weight_derivative()),
                ),
                _ => out.extend(std::iter::repeat_n(0.0, unit.n_weights())),
            }
        }
        out
    }
}

/// `base + penalty`.
pub fn regularized_loss(base: f64, stack: &WarpStack, reg: &Regularizer) -> f64 {
    base + reg.penalty(stack)
}

/// One optimizer step in the loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub block: String,
    pub loss: f64,
    pub penalty: f64,
}

pub fn write_loss_trace(path: impl AsRef<Path>, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
