//! Site containers, pairwise distances and rescaling into the unit square.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Per-dimension affine map `y = (x - offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineRecord {
    pub offset: [f64; 2],
    pub scale: [f64; 2],
}

impl Default for AffineRecord {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineRecord {
    pub fn identity() -> Self {
        Self {
            offset: [0.0, 0.0],
            scale: [1.0, 1.0],
        }
    }

    /// Min-max map of the bounding box of `coords` onto `[-0.5, 0.5]^2`.
    pub fn unit_square(coords: &[Point]) -> Result<Self> {
        let mut offset = [0.0; 2];
        let mut scale = [0.0; 2];
        for axis in 0..2 {
            let (lo, hi) = coords
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p[axis]), hi.max(p[axis]))
                });
            let width = hi - lo;
            if !(width > 0.0) || !width.is_finite() {
                return Err(Error::DegenerateAxis { axis });
            }
            offset[axis] = 0.5 * (lo + hi);
            scale[axis] = width;
        }
        Ok(Self { offset, scale })
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        [
            (p[0] - self.offset[0]) / self.scale[0],
            (p[1] - self.offset[1]) / self.scale[1],
        ]
    }

    #[inline]
    pub fn invert(&self, p: Point) -> Point {
        [
            p[0] * self.scale[0] + self.offset[0],
            p[1] * self.scale[1] + self.offset[1],
        ]
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &AffineRecord) -> AffineRecord {
        let mut offset = [0.0; 2];
        let mut scale = [0.0; 2];
        for a in 0..2 {
            scale[a] = self.scale[a] * next.scale[a];
            offset[a] = self.offset[a] + next.offset[a] * self.scale[a];
        }
        AffineRecord { offset, scale }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }
}

/// An ordered set of 2-D sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationSet {
    coords: Vec<Point>,
    labels: Option<Vec<String>>,
    /// Affine map that produced `coords` from the original inputs.
    record: AffineRecord,
}

impl LocationSet {
    pub fn new(coords: Vec<Point>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::invalid(format!(
                "a location set needs at least 2 sites, got {}",
                coords.len()
            )));
        }
        if let Some(i) = coords.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::invalid(format!("site {i} has a non-finite coordinate")));
        }
        Ok(Self {
            coords,
            labels: None,
            record: AffineRecord::identity(),
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.coords.len() {
            return Err(Error::invalid(format!(
                "{} labels for {} sites",
                labels.len(),
                self.coords.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Label of site `i`, falling back to its index.
    pub fn label(&self, i: usize) -> String {
        self.labels
            .as_ref()
            .map(|l| l[i].clone())
            .unwrap_or_else(|| i.to_string())
    }

    pub fn record(&self) -> &AffineRecord {
        &self.record
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Sub-set of sites by index, keeping labels and record.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let coords = idx.iter().map(|&i| self.coords[i]).collect();
        let mut out = LocationSet::new(coords)?;
        out.labels = self
            .labels
            .as_ref()
            .map(|l| idx.iter().map(|&i| l[i].clone()).collect());
        out.record = self.record;
        Ok(out)
    }

    /// Applies an affine record, composing it into the stored one.
    pub fn map_affine(&self, record: &AffineRecord) -> Self {
        Self {
            coords: self.coords.iter().map(|&p| record.apply(p)).collect(),
            labels: self.labels.clone(),
            record: self.record.then(record),
        }
    }

    /// Undoes every stored rescaling.
    pub fn original(&self) -> Self {
        Self {
            coords: self.coords.iter().map(|&p| self.record.invert(p)).collect(),
            labels: self.labels.clone(),
            record: AffineRecord::identity(),
        }
    }
}

/// Rescales `sites` per dimension onto `[-0.5, 0.5]^2`; the returned record
/// maps further (e.g. holdout) sites with the same parameters.
pub fn rescale_unit_square(sites: &LocationSet) -> Result<(LocationSet, AffineRecord)> {
    let record = AffineRecord::unit_square(sites.coords())?;
    Ok((sites.map_affine(&record), record))
}

#[inline]
pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Symmetric matrix of Euclidean distances.
pub fn pairwise_distances(coords: &[Point]) -> DMatrix<f64> {
    let d = coords.len();
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            let v = distance(coords[i], coords[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// `n x n` regular grid over `[-0.5, 0.5]^2`, row-major in y then x.
pub fn unit_grid(n: usize) -> Vec<Point> {
    assert!(n >= 2, "grid needs at least 2 points per side");
    let step = 1.0 / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            out.push([-0.5 + ix as f64 * step, -0.5 + iy as f64 * step]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn set(pts: &[Point]) -> LocationSet {
        LocationSet::new(pts.to_vec()).unwrap()
    }

    #[test]
    fn rescale_endpoints() {
        let (out, _) = rescale_unit_square(&set(&[[0.0, 0.0], [10.0, 10.0]])).unwrap();
        assert_eq!(out.coords(), &[[-0.5, -0.5], [0.5, 0.5]]);
    }

    #[test]
    fn rescale_of_unit_square_is_identity() {
        let (out, rec) = rescale_unit_square(&set(&[[-0.5, -0.5], [0.5, 0.5]])).unwrap();
        assert_eq!(out.coords(), &[[-0.5, -0.5], [0.5, 0.5]]);
        assert!(rec.is_identity());
    }

    #[test]
    fn rescale_per_dimension() {
        let (out, _) = rescale_unit_square(&set(&[[0.0, 0.0], [4.0, 2.0], [2.0, 1.0]])).unwrap();
        assert_eq!(out.coords(), &[[-0.5, -0.5], [0.5, 0.5], [0.0, 0.0]]);
    }

    #[test]
    fn collapsed_axis_is_reported() {
        let err = rescale_unit_square(&set(&[[1.0, 0.0], [1.0, 3.0]])).unwrap_err();
        assert!(matches!(err, Error::DegenerateAxis { axis: 0 }));
    }

    #[test]
    fn holdout_uses_training_record() {
        let (_, rec) = rescale_unit_square(&set(&[[0.0, 0.0], [2.0, 2.0]])).unwrap();
        assert_eq!(rec.apply([4.0, -2.0]), [1.5, -1.5]);
    }

    #[test]
    fn distances() {
        let d = pairwise_distances(&[[0.0, 0.0], [3.0, 4.0]]);
        assert_eq!(d[(0, 1)], 5.0);
        assert_eq!(d[(1, 0)], 5.0);
        assert_eq!(pairwise_distances(&[[1.0, 1.0], [1.0, 1.0]])[(0, 1)], 0.0);
        let d = pairwise_distances(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert_abs_diff_eq!(d[(1, 2)], std::f64::consts::SQRT_2, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn rescale_round_trip(pts in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..30)) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let s = set(&pts);
            if let Ok((out, _)) = rescale_unit_square(&s) {
                for (p, q) in pts.iter().zip(out.original().coords()) {
                    for a in 0..2 {
                        prop_assert!((p[a] - q[a]).abs() <= 1e-12 * p[a].abs().max(1.0));
                    }
                }
                for p in out.coords() {
                    prop_assert!(p[0].abs() <= 0.5 + 1e-12 && p[1].abs() <= 0.5 + 1e-12);
                }
            }
        }

        #[test]
        fn distances_translate_and_scale(
            pts in prop::collection::vec((-10f64..10.0, -10f64..10.0), 2..12),
            shift in (-5f64..5.0, -5f64..5.0),
            c in 0.1f64..10.0,
        ) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let moved: Vec<Point> = pts.iter().map(|p| [c * (p[0] + shift.0), c * (p[1] + shift.1)]).collect();
            let a = pairwise_distances(&pts);
            let b = pairwise_distances(&moved);
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((c * x - y).abs() <= 1e-9 * (1.0 + y));
            }
        }
    }
}
