use serde::{Deserialize, Serialize};

use super::Unit;
use crate::error::{Error, Result};
use crate::geometry::{AffineRecord, LocationSet, Point};

/// When intermediate warped spaces are mapped back onto `[-0.5, 0.5]^2`.
/// The input space is always rescaled first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescalePolicy {
    /// After every elementary layer (each RBF of an SR-RBF unit included).
    #[default]
    AfterEachLayer,
    AfterEachUnit,
    FinalOnly,
}

/// Ordered composition of warping units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpStack {
    pub units: Vec<Unit>,
    #[serde(default)]
    pub policy: RescalePolicy,
    #[serde(default)]
    pub frozen: Vec<bool>,
}

/// Warped coordinates plus every rescale record used to produce them
/// (`records[0]` maps the input space).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpOutput {
    pub coords: Vec<Point>,
    pub records: Vec<AffineRecord>,
}

/// Gradients with respect to the raw trainable parameters of a stack.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StackGradient {
    pub theta: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Step {
    unit: usize,
    layer: usize,
    rescale_after: bool,
}

struct TapeEntry {
    input: Vec<Point>,
    /// Pre-rescale output when this step rescales.
    rescaled_from: Option<(Vec<Point>, AffineRecord)>,
}

impl Default for WarpStack {
    fn default() -> Self {
        Self::identity()
    }
}

impl WarpStack {
    /// The empty (stationary) warping.
    pub fn identity() -> Self {
        Self::new(Vec::new())
    }

    pub fn new(units: Vec<Unit>) -> Self {
        let frozen = vec![false; units.len()];
        Self {
            units,
            policy: RescalePolicy::default(),
            frozen,
        }
    }

    pub fn with_policy(mut self, policy: RescalePolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Number of elementary layers `n`.
    pub fn depth(&self) -> usize {
        self.units.iter().map(Unit::depth).sum()
    }

    pub fn is_frozen(&self, unit: usize) -> bool {
        self.frozen.get(unit).copied().unwrap_or(false)
    }

    pub fn freeze_all(&mut self) {
        self.frozen = vec![true; self.units.len()];
    }

    fn steps(&self) -> Vec<Step> {
        let mut steps = Vec::with_capacity(self.depth());
        for (u, unit) in self.units.iter().enumerate() {
            let depth = unit.depth();
            for layer in 0..depth {
                let rescale_after = match self.policy {
                    RescalePolicy::AfterEachLayer => true,
                    RescalePolicy::AfterEachUnit => layer + 1 == depth,
                    RescalePolicy::FinalOnly => false,
                };
                steps.push(Step {
                    unit: u,
                    layer,
                    rescale_after,
                });
            }
        }
        if self.policy == RescalePolicy::FinalOnly {
            if let Some(last) = steps.last_mut() {
                last.rescale_after = true;
            }
        }
        steps
    }

    /// `(theta offset, weight offset)` of each unit in the flat vectors;
    /// `None` for frozen units.
    fn offsets(&self) -> Vec<Option<(usize, usize)>> {
        let (mut t, mut w) = (0, 0);
        self.units
            .iter()
            .enumerate()
            .map(|(i, u)| {
                if self.is_frozen(i) {
                    None
                } else {
                    let off = (t, w);
                    t += u.n_theta();
                    w += u.n_weights();
                    Some(off)
                }
            })
            .collect()
    }

    pub fn n_theta(&self) -> usize {
        self.units
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.is_frozen(*i))
            .map(|(_, u)| u.n_theta())
            .sum()
    }

    pub fn n_weights(&self) -> usize {
        self.units
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.is_frozen(*i))
            .map(|(_, u)| u.n_weights())
            .sum()
    }

    /// Trainable basis parameters (RBF centroids and log-rates, Möbius
    /// coefficients) of unfrozen units.
    pub fn theta(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_theta());
        for (i, u) in self.units.iter().enumerate() {
            if !self.is_frozen(i) {
                out.extend(u.theta());
            }
        }
        out
    }

    pub fn set_theta(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.n_theta(), "theta length mismatch");
        let offsets = self.offsets();
        for (u, off) in self.units.iter_mut().zip(offsets) {
            if let Some((t, _)) = off {
                let n = u.n_theta();
                u.set_theta(&theta[t..t + n]);
            }
        }
    }

    /// Raw (unconstrained) weights of unfrozen units.
    pub fn raw_weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_weights());
        for (i, u) in self.units.iter().enumerate() {
            if !self.is_frozen(i) {
                out.extend(u.raw_weights());
            }
        }
        out
    }

    pub fn set_raw_weights(&mut self, w: &[f64]) {
        assert_eq!(w.len(), self.n_weights(), "weight length mismatch");
        let offsets = self.offsets();
        for (u, off) in self.units.iter_mut().zip(offsets) {
            if let Some((_, o)) = off {
                let n = u.n_weights();
                u.set_raw_weights(&w[o..o + n]);
            }
        }
    }

    fn layer_apply(&self, step: Step, coords: &[Point]) -> Result<Vec<Point>> {
        let unit = &self.units[step.unit];
        coords
            .iter()
            .enumerate()
            .map(|(i, &p)| unit.apply_layer(step.layer, p).map_err(|e| tag_site(e, i)))
            .collect()
    }

    /// Warps `coords` (the input space), rescaling per policy.
    pub fn forward(&self, coords: &[Point]) -> Result<WarpOutput> {
        let first = AffineRecord::unit_square(coords)?;
        let mut cur: Vec<Point> = coords.iter().map(|&p| first.apply(p)).collect();
        let mut records = vec![first];
        for step in self.steps() {
            cur = self.layer_apply(step, &cur)?;
            if step.rescale_after {
                let rec = AffineRecord::unit_square(&cur)?;
                cur.iter_mut().for_each(|p| *p = rec.apply(*p));
                records.push(rec);
            }
        }
        Ok(WarpOutput {
            coords: cur,
            records,
        })
    }

    /// Warps further sites with the records of an earlier [`forward`] call.
    ///
    /// [`forward`]: WarpStack::forward
    pub fn apply_with_records(&self, coords: &[Point], records: &[AffineRecord]) -> Result<Vec<Point>> {
        let steps = self.steps();
        let expected = 1 + steps.iter().filter(|s| s.rescale_after).count();
        if records.len() != expected {
            return Err(Error::invalid(format!(
                "stack needs {expected} rescale records, got {}",
                records.len()
            )));
        }
        let mut recs = records.iter();
        let first = recs.next().unwrap();
        let mut cur: Vec<Point> = coords.iter().map(|&p| first.apply(p)).collect();
        for step in steps {
            cur = self.layer_apply(step, &cur)?;
            if step.rescale_after {
                let rec = recs.next().unwrap();
                cur.iter_mut().for_each(|p| *p = rec.apply(*p));
            }
        }
        Ok(cur)
    }

    /// Warps a location set; labels are carried over.
    pub fn apply(&self, sites: &LocationSet) -> Result<(LocationSet, Vec<AffineRecord>)> {
        let out = self.forward(sites.coords())?;
        let mut warped = LocationSet::new(out.coords)?;
        if let Some(l) = sites.labels() {
            warped = warped.with_labels(l.to_vec())?;
        }
        Ok((warped, out.records))
    }

    /// Warped coordinates and the determinant of the composite Jacobian
    /// at every input point.
    pub fn forward_with_jacobians(&self, coords: &[Point]) -> Result<(Vec<Point>, Vec<f64>)> {
        let first = AffineRecord::unit_square(coords)?;
        let mut cur: Vec<Point> = coords.iter().map(|&p| first.apply(p)).collect();
        let mut jac: Vec<[[f64; 2]; 2]> =
            vec![[[1.0 / first.scale[0], 0.0], [0.0, 1.0 / first.scale[1]]]; coords.len()];
        for step in self.steps() {
            let unit = &self.units[step.unit];
            for (i, (p, j)) in cur.iter_mut().zip(jac.iter_mut()).enumerate() {
                let l = unit.layer_jacobian(step.layer, *p).map_err(|e| tag_site(e, i))?;
                *j = matmul(&l, j);
                *p = unit.apply_layer(step.layer, *p).map_err(|e| tag_site(e, i))?;
            }
            if step.rescale_after {
                let rec = AffineRecord::unit_square(&cur)?;
                for (p, j) in cur.iter_mut().zip(jac.iter_mut()) {
                    *p = rec.apply(*p);
                    for a in 0..2 {
                        j[a][0] /= rec.scale[a];
                        j[a][1] /= rec.scale[a];
                    }
                }
            }
        }
        let dets = jac.iter().map(|j| j[0][0] * j[1][1] - j[0][1] * j[1][0]).collect();
        Ok((cur, dets))
    }

    fn forward_tape(&self, coords: &[Point]) -> Result<(Vec<Point>, Vec<(Step, TapeEntry)>)> {
        let first = AffineRecord::unit_square(coords)?;
        let mut cur: Vec<Point> = coords.iter().map(|&p| first.apply(p)).collect();
        let mut tape = Vec::new();
        for step in self.steps() {
            let out = self.layer_apply(step, &cur)?;
            let input = std::mem::replace(&mut cur, out);
            let rescaled_from = if step.rescale_after {
                let rec = AffineRecord::unit_square(&cur)?;
                let pre = cur.clone();
                cur.iter_mut().for_each(|p| *p = rec.apply(*p));
                Some((pre, rec))
            } else {
                None
            };
            tape.push((step, TapeEntry { input, rescaled_from }));
        }
        Ok((cur, tape))
    }

    /// Forward pass, then backward pass: `adjoint` receives the warped
    /// coordinates and returns the loss adjoint with respect to them; the
    /// result holds gradients for the raw trainable parameters.
    pub fn forward_backward<F>(&self, coords: &[Point], adjoint: F) -> Result<StackGradient>
    where
        F: FnOnce(&[Point]) -> Result<Vec<Point>>,
    {
        let (out, tape) = self.forward_tape(coords)?;
        let mut adj = adjoint(&out)?;
        let offsets = self.offsets();
        let mut grad = StackGradient {
            theta: vec![0.0; self.n_theta()],
            weights: vec![0.0; self.n_weights()],
        };
        for (step, entry) in tape.iter().rev() {
            if let Some((pre, rec)) = &entry.rescaled_from {
                adj = rescale_vjp(pre, rec, &adj);
            }
            let unit = &self.units[step.unit];
            let off = offsets[step.unit];
            for (i, (p, a)) in entry.input.iter().zip(adj.iter_mut()).enumerate() {
                let res = match off {
                    Some((t, w)) => {
                        let gt = &mut grad.theta[t..t + unit.n_theta()];
                        let gw = &mut grad.weights[w..w + unit.n_weights()];
                        unit.layer_vjp(step.layer, *p, *a, Some((gt, gw)))
                    }
                    None => unit.layer_vjp(step.layer, *p, *a, None),
                };
                *a = res.map_err(|e| tag_site(e, i))?;
            }
        }
        Ok(grad)
    }
}

fn tag_site(err: Error, site: usize) -> Error {
    match err {
        Error::MobiusPole { eps, .. } => Error::MobiusPole { site, eps },
        other => other,
    }
}

fn matmul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

/// Adjoint of the min-max rescale `y_i = (x_i - m) / R - 1/2` per axis,
/// with `m`, `R` the minimum and range of `x`.
fn rescale_vjp(pre: &[Point], rec: &AffineRecord, adj: &[Point]) -> Vec<Point> {
    let mut out: Vec<Point> = adj
        .iter()
        .map(|a| [a[0] / rec.scale[0], a[1] / rec.scale[1]])
        .collect();
    for axis in 0..2 {
        let (mut imin, mut imax) = (0, 0);
        for (i, p) in pre.iter().enumerate() {
            if p[axis] < pre[imin][axis] {
                imin = i;
            }
            if p[axis] > pre[imax][axis] {
                imax = i;
            }
        }
        let lo = pre[imin][axis];
        let range = rec.scale[axis];
        let sum_a: f64 = adj.iter().map(|a| a[axis]).sum();
        let sum_ax: f64 = adj
            .iter()
            .zip(pre)
            .map(|(a, p)| a[axis] * (p[axis] - lo))
            .sum();
        out[imin][axis] += -sum_a / range + sum_ax / (range * range);
        out[imax][axis] += -sum_ax / (range * range);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::{AwUnit, MtUnit, RbfUnit, SrRbfUnit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sites(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
            .collect()
    }

    fn perturbed_stack(seed: u64) -> WarpStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = WarpStack::new(vec![
            Unit::Aw(AwUnit::new(0, 6)),
            Unit::Aw(AwUnit::new(1, 4)),
            Unit::Rbf(RbfUnit::with_weight([0.1, -0.1], 3.0, 0.6)),
            Unit::SrRbf(SrRbfUnit::new(1)),
            Unit::Mt(MtUnit::identity()),
        ]);
        let t: Vec<f64> = s.theta().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
        let w: Vec<f64> = s.raw_weights().iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
        s.set_theta(&t);
        s.set_raw_weights(&w);
        s
    }

    #[test]
    fn empty_stack_only_rescales() {
        let pts = vec![[0.0, 0.0], [4.0, 2.0], [2.0, 1.0]];
        let out = WarpStack::identity().forward(&pts).unwrap();
        assert_eq!(out.coords, vec![[-0.5, -0.5], [0.5, 0.5], [0.0, 0.0]]);
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn zero_weight_rbf_is_identity_up_to_rescale() {
        let pts = random_sites(20, 1);
        let base = WarpStack::identity().forward(&pts).unwrap();
        let s = WarpStack::new(vec![Unit::Rbf(RbfUnit::new([0.0, 0.0], 2.0))]);
        let out = s.forward(&pts).unwrap();
        for (a, b) in base.coords.iter().zip(&out.coords) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn records_reproduce_training_warp() {
        let s = perturbed_stack(3);
        let pts = random_sites(30, 2);
        let out = s.forward(&pts).unwrap();
        let again = s.apply_with_records(&pts, &out.records).unwrap();
        assert_eq!(out.coords, again);
        assert!(s.apply_with_records(&pts, &out.records[1..]).is_err());
    }

    #[test]
    fn deterministic() {
        let s = perturbed_stack(5);
        let pts = random_sites(40, 6);
        assert_eq!(s.forward(&pts).unwrap(), s.forward(&pts).unwrap());
    }

    #[test]
    fn parameter_round_trip() {
        let mut s = perturbed_stack(9);
        let (t, w) = (s.theta(), s.raw_weights());
        assert_eq!(t.len(), 3 + 8);
        assert_eq!(w.len(), 6 + 4 + 1 + 9);
        s.set_theta(&t);
        s.set_raw_weights(&w);
        assert_eq!(s.theta(), t);
        s.frozen[0] = true;
        assert_eq!(s.raw_weights().len(), 4 + 1 + 9);
    }

    fn objective(coords: &[Point]) -> f64 {
        // Arbitrary smooth function of all pairwise offsets.
        let mut v = 0.0;
        for (i, a) in coords.iter().enumerate() {
            v += (1.3 * a[0]).sin() * (0.7 * a[1] + 0.2).cos();
            for b in &coords[i + 1..] {
                v += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + 0.01).sqrt();
            }
        }
        v
    }

    fn objective_adjoint(coords: &[Point]) -> Vec<Point> {
        let mut g = vec![[0.0, 0.0]; coords.len()];
        for (i, a) in coords.iter().enumerate() {
            g[i][0] += 1.3 * (1.3 * a[0]).cos() * (0.7 * a[1] + 0.2).cos();
            g[i][1] += -0.7 * (1.3 * a[0]).sin() * (0.7 * a[1] + 0.2).sin();
            for (j, b) in coords.iter().enumerate().skip(i + 1) {
                let r = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + 0.01).sqrt();
                for k in 0..2 {
                    let d = (a[k] - b[k]) / r;
                    g[i][k] += d;
                    g[j][k] -= d;
                }
            }
        }
        g
    }

    #[test]
    fn backward_matches_finite_differences() {
        for policy in [
            RescalePolicy::AfterEachLayer,
            RescalePolicy::AfterEachUnit,
            RescalePolicy::FinalOnly,
        ] {
            let s = perturbed_stack(21).with_policy(policy);
            let pts = random_sites(12, 22);
            let grad = s
                .forward_backward(&pts, |c| Ok(objective_adjoint(c)))
                .unwrap();
            let f = |s: &WarpStack| objective(&s.forward(&pts).unwrap().coords);
            let h = 1e-6;
            let theta = s.theta();
            for k in 0..theta.len() {
                let mut sp = s.clone();
                let mut sm = s.clone();
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += h;
                tm[k] -= h;
                sp.set_theta(&tp);
                sm.set_theta(&tm);
                let fd = (f(&sp) - f(&sm)) / (2.0 * h);
                assert!(
                    (fd - grad.theta[k]).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "{policy:?} theta[{k}]: fd {fd} vs {}",
                    grad.theta[k]
                );
            }
            let w = s.raw_weights();
            for k in 0..w.len() {
                let mut sp = s.clone();
                let mut sm = s.clone();
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[k] += h;
                wm[k] -= h;
                sp.set_raw_weights(&wp);
                sm.set_raw_weights(&wm);
                let fd = (f(&sp) - f(&sm)) / (2.0 * h);
                assert!(
                    (fd - grad.weights[k]).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "{policy:?} w[{k}]: fd {fd} vs {}",
                    grad.weights[k]
                );
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let s = perturbed_stack(4);
        let pts = random_sites(10, 8);
        let (_, dets) = s.forward_with_jacobians(&pts).unwrap();
        // The input rescale depends on all sites, so differentiate the
        // record-based map instead.
        let recs = s.forward(&pts).unwrap().records;
        let h = 1e-6;
        for (i, p) in pts.iter().enumerate() {
            let eval = |q: Point| s.apply_with_records(&[q], &recs).unwrap()[0];
            let dx = {
                let a = eval([p[0] + h, p[1]]);
                let b = eval([p[0] - h, p[1]]);
                [(a[0] - b[0]) / (2.0 * h), (a[1] - b[1]) / (2.0 * h)]
            };
            let dy = {
                let a = eval([p[0], p[1] + h]);
                let b = eval([p[0], p[1] - h]);
                [(a[0] - b[0]) / (2.0 * h), (a[1] - b[1]) / (2.0 * h)]
            };
            let det = dx[0] * dy[1] - dy[0] * dx[1];
            assert!((det - dets[i]).abs() < 1e-5 * (1.0 + det.abs()), "{det} vs {}", dets[i]);
        }
    }
}
