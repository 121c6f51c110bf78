//! Deep compositional warping `f = f_n ∘ ... ∘ f_1` built from axial,
//! radial-basis and Möbius units, each constrained to be bijective.

pub mod arch;
pub mod aw;
pub mod check;
pub mod mt;
pub mod rbf;
mod stack;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::Point;

pub use arch::{Architecture, UnitSpec};
pub use aw::AwUnit;
pub use check::{injectivity_check, InjectivityReport};
pub use mt::MtUnit;
pub use rbf::{RbfUnit, SrRbfUnit, WeightConstraint};
pub use stack::{RescalePolicy, StackGradient, WarpOutput, WarpStack};

/// Row-major 2x2 Jacobian `d out_i / d in_j`.
pub type Jacobian = [[f64; 2]; 2];

/// A single bijective map of the plane with trainable parameter blocks.
pub trait Layer {
    fn apply(&self, p: Point) -> Result<Point>;
    fn jacobian(&self, p: Point) -> Result<Jacobian>;
    fn n_theta(&self) -> usize;
    fn n_weights(&self) -> usize;
    /// Pulls the output adjoint back to the input, accumulating parameter
    /// gradients (with respect to raw values) into the given slices.
    fn vjp(&self, p: Point, adj: Point, g_theta: &mut [f64], g_w: &mut [f64]) -> Result<Point>;
    fn theta(&self) -> Vec<f64>;
    fn set_theta(&mut self, theta: &[f64]);
    fn raw_weights(&self) -> Vec<f64>;
    fn set_raw_weights(&mut self, w: &[f64]);
}

/// One warping unit of a stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Unit {
    Aw(AwUnit),
    Rbf(RbfUnit),
    #[serde(rename = "srrbf")]
    SrRbf(SrRbfUnit),
    Mt(MtUnit),
}

impl Unit {
    /// Number of elementary layers (an SR-RBF unit counts each of its RBFs).
    pub fn depth(&self) -> usize {
        match self {
            Unit::SrRbf(u) => u.layers.len(),
            _ => 1,
        }
    }

    pub fn n_theta(&self) -> usize {
        match self {
            Unit::Aw(u) => u.n_theta(),
            Unit::Rbf(u) => u.n_theta(),
            Unit::SrRbf(_) => 0,
            Unit::Mt(u) => u.n_theta(),
        }
    }

    pub fn n_weights(&self) -> usize {
        match self {
            Unit::Aw(u) => u.n_weights(),
            Unit::Rbf(u) => u.n_weights(),
            Unit::SrRbf(u) => u.layers.len(),
            Unit::Mt(u) => u.n_weights(),
        }
    }

    pub fn theta(&self) -> Vec<f64> {
        match self {
            Unit::Aw(u) => u.theta(),
            Unit::Rbf(u) => u.theta(),
            Unit::SrRbf(_) => Vec::new(),
            Unit::Mt(u) => u.theta(),
        }
    }

    pub fn set_theta(&mut self, theta: &[f64]) {
        match self {
            Unit::Aw(u) => u.set_theta(theta),
            Unit::Rbf(u) => u.set_theta(theta),
            Unit::SrRbf(_) => {}
            Unit::Mt(u) => u.set_theta(theta),
        }
    }

    pub fn raw_weights(&self) -> Vec<f64> {
        match self {
            Unit::Aw(u) => u.raw_weights(),
            Unit::Rbf(u) => u.raw_weights(),
            Unit::SrRbf(u) => u.layers.iter().map(|l| l.raw_weight).collect(),
            Unit::Mt(u) => u.raw_weights(),
        }
    }

    pub fn set_raw_weights(&mut self, w: &[f64]) {
        match self {
            Unit::Aw(u) => u.set_raw_weights(w),
            Unit::Rbf(u) => u.set_raw_weights(w),
            Unit::SrRbf(u) => {
                for (l, &v) in u.layers.iter_mut().zip(w) {
                    l.raw_weight = v;
                }
            }
            Unit::Mt(u) => u.set_raw_weights(w),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Unit::Aw(_) => "aw",
            Unit::Rbf(_) => "rbf",
            Unit::SrRbf(_) => "srrbf",
            Unit::Mt(_) => "mt",
        }
    }

    pub(crate) fn apply_layer(&self, layer: usize, p: Point) -> Result<Point> {
        match self {
            Unit::Aw(u) => u.apply(p),
            Unit::Rbf(u) => u.apply(p),
            Unit::SrRbf(u) => Ok(u.layers[layer].eval(p)),
            Unit::Mt(u) => u.apply(p),
        }
    }

    pub(crate) fn layer_jacobian(&self, layer: usize, p: Point) -> Result<Jacobian> {
        match self {
            Unit::Aw(u) => u.jacobian(p),
            Unit::Rbf(u) => u.jacobian(p),
            Unit::SrRbf(u) => u.layers[layer].jacobian(p),
            Unit::Mt(u) => u.jacobian(p),
        }
    }

    /// Backward pass through one layer; `grads` is `None` for frozen units.
    pub(crate) fn layer_vjp(
        &self,
        layer: usize,
        p: Point,
        adj: Point,
        grads: Option<(&mut [f64], &mut [f64])>,
    ) -> Result<Point> {
        match grads {
            Some((g_t, g_w)) => self.vjp_into(layer, p, adj, g_t, g_w),
            None => {
                let mut g_t = [0.0; 8];
                let mut g_w = vec![0.0; self.n_weights()];
                self.vjp_into(layer, p, adj, &mut g_t, &mut g_w)
            }
        }
    }

    fn vjp_into(
        &self,
        layer: usize,
        p: Point,
        adj: Point,
        g_t: &mut [f64],
        g_w: &mut [f64],
    ) -> Result<Point> {
        match self {
            Unit::Aw(u) => u.vjp(p, adj, g_t, g_w),
            Unit::Rbf(u) => u.vjp(p, adj, g_t, g_w),
            Unit::SrRbf(u) => Ok(u.layers[layer].backward(p, adj, None, &mut g_w[layer])),
            Unit::Mt(u) => u.vjp(p, adj, g_t, g_w),
        }
    }
}
