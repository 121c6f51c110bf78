//! Möbius transformation unit on the complex plane.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Jacobian, Layer};
use crate::error::{Error, Result};
use crate::geometry::Point;

/// Sites closer than this to the pole are rejected.
pub const POLE_EPS: f64 = 1e-8;

/// `(a1 z + a2) / (a3 z + a4)` with `z = x + iy`; parameters are stored as
/// `[Re a1, Im a1, ..., Re a4, Im a4]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtUnit {
    pub params: [f64; 8],
}

impl Default for MtUnit {
    fn default() -> Self {
        Self::identity()
    }
}

impl MtUnit {
    pub fn identity() -> Self {
        Self::from_complex([
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
        ])
    }

    pub fn from_complex(a: [Complex64; 4]) -> Self {
        let mut params = [0.0; 8];
        for (k, c) in a.iter().enumerate() {
            params[2 * k] = c.re;
            params[2 * k + 1] = c.im;
        }
        Self { params }
    }

    pub fn coefficients(&self) -> [Complex64; 4] {
        let p = &self.params;
        [
            Complex64::new(p[0], p[1]),
            Complex64::new(p[2], p[3]),
            Complex64::new(p[4], p[5]),
            Complex64::new(p[6], p[7]),
        ]
    }

    pub fn determinant(&self) -> Complex64 {
        let [a1, a2, a3, a4] = self.coefficients();
        a1 * a4 - a2 * a3
    }

    /// Pole of the map, `None` when it sits at infinity.
    pub fn pole(&self) -> Option<Point> {
        let [_, _, a3, a4] = self.coefficients();
        if a3.norm() == 0.0 {
            None
        } else {
            let z = -a4 / a3;
            Some([z.re, z.im])
        }
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &MtUnit) -> MtUnit {
        let [a1, a2, a3, a4] = self.coefficients();
        let [b1, b2, b3, b4] = first.coefficients();
        MtUnit::from_complex([
            a1 * b1 + a2 * b3,
            a1 * b2 + a2 * b4,
            a3 * b1 + a4 * b3,
            a3 * b2 + a4 * b4,
        ])
    }

    fn check(&self) -> Result<()> {
        if self.determinant().norm() < 1e-14 {
            return Err(Error::Numeric(
                "degenerate Möbius transform (a1 a4 - a2 a3 = 0)".into(),
            ));
        }
        Ok(())
    }

    /// Returns `(z, numerator, denominator)`; errors near the pole.
    fn parts(&self, p: Point) -> Result<(Complex64, Complex64, Complex64)> {
        self.check()?;
        let [a1, a2, a3, a4] = self.coefficients();
        let z = Complex64::new(p[0], p[1]);
        let den = a3 * z + a4;
        let scale = a3.norm().max(f64::MIN_POSITIVE);
        if den.norm() / scale < POLE_EPS || den.norm() == 0.0 {
            return Err(Error::MobiusPole {
                site: usize::MAX,
                eps: POLE_EPS,
            });
        }
        Ok((z, a1 * z + a2, den))
    }

    fn derivative(&self, den: Complex64) -> Complex64 {
        self.determinant() / (den * den)
    }
}

impl Layer for MtUnit {
    fn apply(&self, p: Point) -> Result<Point> {
        let (_, num, den) = self.parts(p)?;
        let w = num / den;
        Ok([w.re, w.im])
    }

    fn jacobian(&self, p: Point) -> Result<Jacobian> {
        let (_, _, den) = self.parts(p)?;
        let d = self.derivative(den);
        Ok([[d.re, -d.im], [d.im, d.re]])
    }

    fn n_theta(&self) -> usize {
        8
    }

    fn n_weights(&self) -> usize {
        0
    }

    fn vjp(&self, p: Point, adj: Point, g_theta: &mut [f64], _g_w: &mut [f64]) -> Result<Point> {
        let (z, num, den) = self.parts(p)?;
        let phi = num / den;
        let g = Complex64::new(adj[0], adj[1]);
        let gc = g.conj();
        let partials = [z / den, 1.0 / den, -z * phi / den, -phi / den];
        for (k, c) in partials.iter().enumerate() {
            let v = gc * c;
            g_theta[2 * k] += v.re;
            g_theta[2 * k + 1] -= v.im;
        }
        let adj_in = self.derivative(den).conj() * g;
        Ok([adj_in.re, adj_in.im])
    }

    fn theta(&self) -> Vec<f64> {
        self.params.to_vec()
    }

    fn set_theta(&mut self, theta: &[f64]) {
        self.params.copy_from_slice(theta);
    }

    fn raw_weights(&self) -> Vec<f64> {
        Vec::new()
    }

    fn set_raw_weights(&mut self, _w: &[f64]) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(a: [(f64, f64); 4]) -> MtUnit {
        MtUnit::from_complex(a.map(|(re, im)| Complex64::new(re, im)))
    }

    #[test]
    fn identity() {
        let u = MtUnit::identity();
        assert_eq!(u.apply([0.3, -0.4]).unwrap(), [0.3, -0.4]);
    }

    #[test]
    fn inversion_of_i() {
        let u = unit([(0.0, 0.0), (1.0, 0.0), (1.0, 0.0), (0.0, 0.0)]);
        let p = u.apply([0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(p[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn translation() {
        let u = unit([(1.0, 0.0), (1.0, 0.0), (0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(u.apply([0.25, 0.5]).unwrap(), [1.25, 0.5]);
    }

    #[test]
    fn pole_is_rejected() {
        let u = unit([(0.0, 0.0), (1.0, 0.0), (1.0, 0.0), (0.0, 0.0)]);
        assert!(matches!(u.apply([0.0, 0.0]), Err(Error::MobiusPole { .. })));
        assert_eq!(u.pole(), Some([-0.0, -0.0]));
    }

    #[test]
    fn degenerate_is_rejected() {
        let u = unit([(1.0, 0.0), (2.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        assert!(u.apply([0.1, 0.1]).is_err());
    }

    #[test]
    fn group_closure() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut a = MtUnit::identity();
            let mut b = MtUnit::identity();
            for k in 0..8 {
                a.params[k] += rng.random_range(-0.3..0.3);
                b.params[k] += rng.random_range(-0.3..0.3);
            }
            let ab = a.compose(&b);
            for _ in 0..20 {
                let p = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
                let (Ok(q1), Ok(q2)) = (b.apply(p).and_then(|q| a.apply(q)), ab.apply(p)) else {
                    continue;
                };
                assert!((q1[0] - q2[0]).abs() < 1e-10 * (1.0 + q1[0].abs()));
                assert!((q1[1] - q2[1]).abs() < 1e-10 * (1.0 + q1[1].abs()));
            }
        }
    }
}
