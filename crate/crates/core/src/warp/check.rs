//! Numerical confirmation that a warping does not fold the plane.

use serde::Serialize;

use super::WarpStack;
use crate::geometry::{distance, Point};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InjectivityReport {
    /// Smallest distance between images of distinct grid points.
    pub min_distance: f64,
    pub positive_det: usize,
    pub negative_det: usize,
    pub zero_det: usize,
    /// Evaluation failure (e.g. a Möbius pole inside the grid).
    pub error: Option<String>,
    pub fold: bool,
}

/// Warps `grid` and reports the minimum image separation and the sign
/// pattern of the composite Jacobian determinant. A fold is flagged when the
/// separation is `<= tol`, the determinant changes sign or vanishes, or the
/// warp cannot be evaluated.
pub fn injectivity_check(stack: &WarpStack, grid: &[Point], tol: f64) -> InjectivityReport {
    let (coords, dets) = match stack.forward_with_jacobians(grid) {
        Ok(v) => v,
        Err(e) => {
            return InjectivityReport {
                min_distance: 0.0,
                positive_det: 0,
                negative_det: 0,
                zero_det: 0,
                error: Some(e.to_string()),
                fold: true,
            }
        }
    };
    let positive_det = dets.iter().filter(|&&d| d > 0.0).count();
    let negative_det = dets.iter().filter(|&&d| d < 0.0).count();
    let zero_det = dets.len() - positive_det - negative_det;
    let min_distance = min_pairwise_distance(&coords);
    let fold = !(min_distance > tol) || zero_det > 0 || (positive_det > 0 && negative_det > 0);
    InjectivityReport {
        min_distance,
        positive_det,
        negative_det,
        zero_det,
        error: None,
        fold,
    }
}

/// Closest-pair distance by a sweep over x-sorted points.
pub fn min_pairwise_distance(points: &[Point]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            if pts[j][0] - pts[i][0] >= best {
                break;
            }
            best = best.min(distance(pts[i], pts[j]));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::unit_grid;
    use crate::warp::{rbf::weight_bounds, RbfUnit, Unit};
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_on_small_grid() {
        let grid = unit_grid(5);
        let r = injectivity_check(&WarpStack::identity(), &grid, 0.0);
        assert!(!r.fold);
        assert_abs_diff_eq!(r.min_distance, 0.25, epsilon = 1e-12);
        assert_eq!(r.positive_det, 25);
    }

    #[test]
    fn rbf_near_upper_bound_does_not_fold() {
        let w = weight_bounds().1 - 1e-3;
        let s = WarpStack::new(vec![Unit::Rbf(RbfUnit::unconstrained([0.0, 0.0], 10.0, w))]);
        let r = injectivity_check(&s, &unit_grid(101), 0.0);
        assert!(!r.fold, "{r:?}");
    }

    #[test]
    fn rbf_below_lower_bound_folds() {
        let s = WarpStack::new(vec![Unit::Rbf(RbfUnit::unconstrained([0.0, 0.0], 10.0, -1.5))]);
        let r = injectivity_check(&s, &unit_grid(101), 0.0);
        assert!(r.fold);
        assert!(r.negative_det > 0 && r.positive_det > 0);
    }

    #[test]
    fn closest_pair_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point> = (0..300).map(|_| [rng.random(), rng.random()]).collect();
        let mut brute = f64::INFINITY;
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                brute = brute.min(distance(pts[i], pts[j]));
            }
        }
        assert_eq!(min_pairwise_distance(&pts), brute);
    }
}
