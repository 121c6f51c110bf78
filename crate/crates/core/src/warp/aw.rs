//! Axial warping: a monotone sigmoid expansion of one coordinate.

use serde::{Deserialize, Serialize};

use super::{Jacobian, Layer};
use crate::error::Result;
use crate::geometry::Point;

pub const DEFAULT_BASES: usize = 6;
pub const DEFAULT_STEEPNESS: f64 = 10.0;
/// Raw value of the sigmoid weights at initialization (weight ~ 6.7e-3).
const INIT_RAW_SIGMOID: f64 = -5.0;

/// Warps coordinate `axis` by `w_1 s_k + sum_j w_j sigmoid(theta_j1 (s_k - theta_j2))`.
///
/// Weights are `exp(raw)`, hence nonnegative; the map is strictly
/// increasing in `s_k` because `w_1 > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwUnit {
    pub axis: usize,
    pub knots: Vec<f64>,
    pub steepness: Vec<f64>,
    pub raw_weights: Vec<f64>,
}

impl AwUnit {
    /// Near-identity unit with `m` bases; knots sit at the centres of `m - 1`
    /// equal bins of `[-0.5, 0.5]`.
    pub fn new(axis: usize, m: usize) -> Self {
        assert!(axis < 2, "axis must be 0 or 1");
        assert!(m >= 1, "an AW unit needs at least one basis");
        let k = m - 1;
        let knots: Vec<f64> = (0..k)
            .map(|j| -0.5 + (j as f64 + 0.5) / k as f64)
            .collect();
        let mut raw_weights = vec![INIT_RAW_SIGMOID; m];
        raw_weights[0] = 0.0;
        Self {
            axis,
            steepness: vec![DEFAULT_STEEPNESS; k],
            knots,
            raw_weights,
        }
    }

    pub fn m(&self) -> usize {
        self.raw_weights.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.raw_weights.iter().map(|r| r.exp()).collect()
    }

    pub fn set_weights(&mut self, weights: &[f64]) {
        assert!(weights.iter().all(|&w| w > 0.0), "AW weights must be positive");
        self.raw_weights = weights.iter().map(|w| w.ln()).collect();
    }

    #[inline]
    fn sigmoid(&self, j: usize, x: f64) -> f64 {
        1.0 / (1.0 + (-self.steepness[j] * (x - self.knots[j])).exp())
    }

    /// Derivative of the warped coordinate with respect to the input one.
    fn slope(&self, x: f64) -> f64 {
        let mut d = self.raw_weights[0].exp();
        for j in 0..self.knots.len() {
            let s = self.sigmoid(j, x);
            d += self.raw_weights[j + 1].exp() * self.steepness[j] * s * (1.0 - s);
        }
        d
    }

    pub fn warp_coordinate(&self, x: f64) -> f64 {
        let mut y = self.raw_weights[0].exp() * x;
        for j in 0..self.knots.len() {
            y += self.raw_weights[j + 1].exp() * self.sigmoid(j, x);
        }
        y
    }
}

impl Layer for AwUnit {
    fn apply(&self, p: Point) -> Result<Point> {
        let mut out = p;
        out[self.axis] = self.warp_coordinate(p[self.axis]);
        Ok(out)
    }

    fn jacobian(&self, p: Point) -> Result<Jacobian> {
        let mut j = [[1.0, 0.0], [0.0, 1.0]];
        j[self.axis][self.axis] = self.slope(p[self.axis]);
        Ok(j)
    }

    fn n_theta(&self) -> usize {
        0
    }

    fn n_weights(&self) -> usize {
        self.m()
    }

    fn vjp(&self, p: Point, adj: Point, _g_theta: &mut [f64], g_w: &mut [f64]) -> Result<Point> {
        let x = p[self.axis];
        let a = adj[self.axis];
        g_w[0] += a * self.raw_weights[0].exp() * x;
        for j in 0..self.knots.len() {
            g_w[j + 1] += a * self.raw_weights[j + 1].exp() * self.sigmoid(j, x);
        }
        let mut out = adj;
        out[self.axis] = a * self.slope(x);
        Ok(out)
    }

    fn theta(&self) -> Vec<f64> {
        Vec::new()
    }

    fn set_theta(&mut self, _theta: &[f64]) {}

    fn raw_weights(&self) -> Vec<f64> {
        self.raw_weights.clone()
    }

    fn set_raw_weights(&mut self, w: &[f64]) {
        self.raw_weights.copy_from_slice(w);
    }
}
