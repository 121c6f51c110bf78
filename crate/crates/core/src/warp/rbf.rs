//! Radial basis function units and their single-resolution grids.

use serde::{Deserialize, Serialize};

use super::{Jacobian, Layer};
use crate::error::Result;
use crate::geometry::Point;

/// Margin kept between the effective weight and the injectivity bounds.
pub const WEIGHT_MARGIN: f64 = 1e-3;

/// Open interval of weights for which the unit is injective.
pub fn weight_bounds() -> (f64, f64) {
    (-1.0, (1.5f64).exp() / 2.0)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// How the raw weight maps to the effective weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightConstraint {
    /// Scaled logistic onto `(-1 + margin, e^{3/2}/2 - margin)`.
    #[default]
    Bounded,
    /// Raw value used as is; can fold the plane. Diagnostics only.
    Unconstrained,
}

/// `s + w (s - c) exp(-b |s - c|^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfUnit {
    pub centroid: [f64; 2],
    /// `b = exp(raw_rate)`.
    pub raw_rate: f64,
    pub raw_weight: f64,
    #[serde(default)]
    pub constraint: WeightConstraint,
}

impl RbfUnit {
    /// Identity-initialized unit (`w = 0`).
    pub fn new(centroid: [f64; 2], rate: f64) -> Self {
        assert!(rate > 0.0, "RBF rate must be positive");
        Self {
            centroid,
            raw_rate: rate.ln(),
            raw_weight: Self::raw_for_weight(0.0),
            constraint: WeightConstraint::Bounded,
        }
    }

    /// Unit with the given effective weight, which must lie strictly inside
    /// the constrained interval.
    pub fn with_weight(centroid: [f64; 2], rate: f64, weight: f64) -> Self {
        let mut u = Self::new(centroid, rate);
        u.raw_weight = Self::raw_for_weight(weight);
        u
    }

    /// Unit whose weight bypasses the injectivity constraint.
    pub fn unconstrained(centroid: [f64; 2], rate: f64, weight: f64) -> Self {
        Self {
            centroid,
            raw_rate: rate.ln(),
            raw_weight: weight,
            constraint: WeightConstraint::Unconstrained,
        }
    }

    fn interval() -> (f64, f64) {
        let (lo, hi) = weight_bounds();
        (lo + WEIGHT_MARGIN, hi - WEIGHT_MARGIN)
    }

    pub fn raw_for_weight(weight: f64) -> f64 {
        let (lo, hi) = Self::interval();
        assert!(
            weight > lo && weight < hi,
            "RBF weight {weight} outside ({lo}, {hi})"
        );
        let t = (weight - lo) / (hi - lo);
        (t / (1.0 - t)).ln()
    }

    pub fn weight(&self) -> f64 {
        match self.constraint {
            WeightConstraint::Bounded => {
                let (lo, hi) = Self::interval();
                lo + (hi - lo) * logistic(self.raw_weight)
            }
            WeightConstraint::Unconstrained => self.raw_weight,
        }
    }

    pub(crate) fn weight_derivative(&self) -> f64 {
        match self.constraint {
            WeightConstraint::Bounded => {
                let (lo, hi) = Self::interval();
                let s = logistic(self.raw_weight);
                (hi - lo) * s * (1.0 - s)
            }
            WeightConstraint::Unconstrained => 1.0,
        }
    }

    pub fn rate(&self) -> f64 {
        self.raw_rate.exp()
    }

    /// `(s - c, exp(-b |s - c|^2), |s - c|^2)`
    #[inline]
    fn parts(&self, p: Point) -> (Point, f64, f64) {
        let u = [p[0] - self.centroid[0], p[1] - self.centroid[1]];
        let r2 = u[0] * u[0] + u[1] * u[1];
        (u, (-self.rate() * r2).exp(), r2)
    }

    /// Effective-weight-aware evaluation shared by plain and SR-RBF layers.
    pub(crate) fn eval(&self, p: Point) -> Point {
        let (u, e, _) = self.parts(p);
        let w = self.weight();
        [p[0] + w * u[0] * e, p[1] + w * u[1] * e]
    }

    fn jac(&self, p: Point) -> Jacobian {
        let (u, e, _) = self.parts(p);
        let we = self.weight() * e;
        let c = -2.0 * self.rate() * we;
        [
            [1.0 + we + c * u[0] * u[0], c * u[0] * u[1]],
            [c * u[1] * u[0], 1.0 + we + c * u[1] * u[1]],
        ]
    }

    /// Shared backward pass; `g_theta` is `None` for fixed-centroid layers.
    pub(crate) fn backward(
        &self,
        p: Point,
        adj: Point,
        g_theta: Option<&mut [f64]>,
        g_w: &mut f64,
    ) -> Point {
        let (u, e, r2) = self.parts(p);
        let w = self.weight();
        let j = self.jac(p);
        // J is symmetric.
        let adj_in = [
            j[0][0] * adj[0] + j[0][1] * adj[1],
            j[1][0] * adj[0] + j[1][1] * adj[1],
        ];
        *g_w += (adj[0] * u[0] + adj[1] * u[1]) * e * self.weight_derivative();
        if let Some(g) = g_theta {
            // d f / d c = I - J
            g[0] += adj[0] - adj_in[0];
            g[1] += adj[1] - adj_in[1];
            // d f / d raw_rate = -w u e r^2 b
            g[2] += -(adj[0] * u[0] + adj[1] * u[1]) * w * e * r2 * self.rate();
        }
        adj_in
    }
}

impl Layer for RbfUnit {
    fn apply(&self, p: Point) -> Result<Point> {
        Ok(self.eval(p))
    }

    fn jacobian(&self, p: Point) -> Result<Jacobian> {
        Ok(self.jac(p))
    }

    fn n_theta(&self) -> usize {
        3
    }

    fn n_weights(&self) -> usize {
        1
    }

    fn vjp(&self, p: Point, adj: Point, g_theta: &mut [f64], g_w: &mut [f64]) -> Result<Point> {
        Ok(self.backward(p, adj, Some(g_theta), &mut g_w[0]))
    }

    fn theta(&self) -> Vec<f64> {
        vec![self.centroid[0], self.centroid[1], self.raw_rate]
    }

    fn set_theta(&mut self, theta: &[f64]) {
        self.centroid = [theta[0], theta[1]];
        self.raw_rate = theta[2];
    }

    fn raw_weights(&self) -> Vec<f64> {
        vec![self.raw_weight]
    }

    fn set_raw_weights(&mut self, w: &[f64]) {
        self.raw_weight = w[0];
    }
}

/// `3^l x 3^l` RBF layers with fixed centroids on the unit-square grid and
/// shared rate `2 (3^l - 1)^2`; only the layer weights are trainable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrRbfUnit {
    pub resolution: u32,
    pub layers: Vec<RbfUnit>,
}

impl SrRbfUnit {
    pub fn new(resolution: u32) -> Self {
        assert!(resolution >= 1, "SR-RBF resolution starts at 1");
        let side = 3usize.pow(resolution);
        let rate = 2.0 * ((side - 1) as f64).powi(2);
        let step = 1.0 / (side - 1) as f64;
        let mut layers = Vec::with_capacity(side * side);
        for iy in 0..side {
            for ix in 0..side {
                let c = [-0.5 + ix as f64 * step, -0.5 + iy as f64 * step];
                layers.push(RbfUnit::new(c, rate));
            }
        }
        Self { resolution, layers }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.layers.iter().map(RbfUnit::weight).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_weight_is_identity() {
        let u = RbfUnit::new([0.1, -0.2], 3.0);
        assert_abs_diff_eq!(u.weight(), 0.0, epsilon = 1e-15);
        let p = u.apply([0.37, 0.11]).unwrap();
        assert_abs_diff_eq!(p[0], 0.37, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.11, epsilon = 1e-15);
    }

    #[test]
    fn centroid_is_fixed_point() {
        let u = RbfUnit::with_weight([0.2, 0.3], 5.0, 1.7);
        assert_eq!(u.apply([0.2, 0.3]).unwrap(), [0.2, 0.3]);
    }

    #[test]
    fn hand_evaluation() {
        let u = RbfUnit::with_weight([0.0, 0.0], 1.0, 0.5);
        let p = u.apply([0.5, 0.0]).unwrap();
        assert_abs_diff_eq!(p[0], 0.5 + 0.25 * (-0.25f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(p[0], 0.694_700_195_6, epsilon = 1e-9);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn srrbf_layout() {
        let u = SrRbfUnit::new(1);
        assert_eq!(u.layers.len(), 9);
        assert_abs_diff_eq!(u.layers[0].rate(), 8.0, epsilon = 1e-12);
        assert_eq!(u.layers[4].centroid, [0.0, 0.0]);
        let u = SrRbfUnit::new(2);
        assert_eq!(u.layers.len(), 81);
        assert_abs_diff_eq!(u.layers[0].rate(), 128.0, epsilon = 1e-10);
    }

    proptest! {
        #[test]
        fn weight_stays_inside_interval(raw in -60f64..60.0) {
            let mut u = RbfUnit::new([0.0, 0.0], 1.0);
            u.raw_weight = raw;
            let (lo, hi) = weight_bounds();
            prop_assert!(u.weight() > lo && u.weight() < hi);
        }

        #[test]
        fn displacement_bound(raw in -8f64..8.0, b in 0.1f64..50.0, x in -1f64..1.0, y in -1f64..1.0) {
            let mut u = RbfUnit::new([0.1, -0.1], b);
            u.raw_weight = raw;
            let p = u.apply([x, y]).unwrap();
            let r = ((x - 0.1).powi(2) + (y + 0.1).powi(2)).sqrt();
            let disp = ((p[0] - x).powi(2) + (p[1] - y).powi(2)).sqrt();
            let bound = u.weight().abs() * r * (-b * r * r).exp();
            prop_assert!(disp <= bound * (1.0 + 1e-12) + 1e-15);
        }
    }
}
