//! Gradient score matching on the Brown–Resnick r-Pareto intensity.
//!
//! Site 0 is the anchor `z_1` of the intensity; `z̃_k = log(z_k / z_0) + γ_k0`
//! for `k >= 1`, `Σ` as in [`BrMatrix`], `P = Σ⁻¹`, `q = P z̃`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{evaluate, GammaLoss};
use crate::data::DataMatrix;
use crate::dependence::{BrMatrix, VariogramParams};
use crate::empirics::ExceedanceSet;
use crate::error::{Error, Result};
use crate::geometry::LocationSet;
use crate::risk::RiskSpec;
use crate::warp::WarpStack;

/// Slack allowed on `r(z) >= 1` for rounding in `z = x / u`.
const RISK_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsmConfig {
    pub risk: RiskSpec,
}

fn z_tilde(z: &[f64], br: &BrMatrix) -> DVector<f64> {
    DVector::from_fn(br.dim(), |k, _| (z[k + 1] / z[0]).ln() + br.gamma[(k + 1, 0)])
}

fn check_event(z: &[f64], d: usize) -> Result<()> {
    if z.len() != d {
        return Err(Error::invalid(format!("event has {} sites, expected {d}", z.len())));
    }
    if let Some(k) = z.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!("event component {k} is {}", z[k])));
    }
    Ok(())
}

/// `log λ(z)` of the Brown–Resnick r-Pareto intensity.
pub fn br_log_intensity(z: &[f64], br: &BrMatrix) -> Result<f64> {
    let d = br.dim() + 1;
    check_event(z, d)?;
    let zt = z_tilde(z, br);
    let q = br.solve(&zt);
    let log_z: f64 = z[1..].iter().map(|v| v.ln()).sum();
    Ok(-0.5 * br.log_det() - 2.0 * z[0].ln() - log_z
        - 0.5 * (d - 1) as f64 * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * zt.dot(&q))
}

/// `∂ log λ / ∂z_i` and `∂² log λ / ∂z_i²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogIntensityDerivatives {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Precomputed pieces of `P` shared by every event.
struct Precision {
    p: DMatrix<f64>,
    diag: Vec<f64>,
    total: f64,
}

impl Precision {
    fn new(br: &BrMatrix) -> Self {
        let p = br.inverse();
        let diag = p.diagonal().iter().copied().collect();
        let total = p.sum();
        Self { p, diag, total }
    }
}

fn derivatives_from_q(z: &[f64], q: &[f64], prec: &Precision) -> (Vec<f64>, Vec<f64>) {
    let d = z.len();
    let s: f64 = q.iter().sum();
    let mut g = vec![0.0; d];
    let mut h = vec![0.0; d];
    g[0] = (s - 2.0) / z[0];
    h[0] = (2.0 - s - prec.total) / (z[0] * z[0]);
    for k in 1..d {
        let (zk, qk) = (z[k], q[k - 1]);
        g[k] = (-1.0 - qk) / zk;
        h[k] = (1.0 + qk - prec.diag[k - 1]) / (zk * zk);
    }
    (g, h)
}

pub fn log_intensity_derivatives(z: &[f64], br: &BrMatrix) -> Result<LogIntensityDerivatives> {
    check_event(z, br.dim() + 1)?;
    let prec = Precision::new(br);
    let q = br.solve(&z_tilde(z, br));
    let (first, second) = derivatives_from_q(z, q.as_slice(), &prec);
    Ok(LogIntensityDerivatives { first, second })
}

/// An event with its score-matching weights `w̃_i = z_i (1 - e^{1-r})` and
/// `∂w̃_i/∂z_i`, which do not depend on the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GsmEvent {
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub dw: Vec<f64>,
}

impl GsmEvent {
    /// `r` and `∂r/∂z` given explicitly; `dr = None` treats the risk as
    /// not depending on these components.
    pub fn with_risk(z: Vec<f64>, r: f64, dr: Option<&[f64]>) -> Result<Self> {
        if r < 1.0 - RISK_SLACK {
            return Err(Error::invalid(format!(
                "event has risk {r} < 1 and should have been filtered"
            )));
        }
        let e = (1.0 - r).exp().min(1.0);
        let w = z.iter().map(|&zi| zi * (1.0 - e)).collect();
        let dw = z
            .iter()
            .enumerate()
            .map(|(i, &zi)| (1.0 - e) + zi * e * dr.map_or(0.0, |g| g[i]))
            .collect();
        Ok(Self { z, w, dw })
    }

    pub fn new(z: Vec<f64>, risk: &RiskSpec) -> Result<Self> {
        let r = risk.evaluate(&z)?;
        let dr = risk.gradient(&z)?;
        Self::with_risk(z, r, Some(&dr))
    }

    /// `δ̂` and optionally `(∂δ/∂g, ∂δ/∂h)`.
    fn score(&self, g: &[f64], h: &[f64]) -> f64 {
        (0..self.z.len())
            .map(|i| {
                let (w, dw) = (self.w[i], self.dw[i]);
                2.0 * w * dw * g[i] + w * w * (h[i] + 0.5 * g[i] * g[i])
            })
            .sum()
    }
}

/// `δ̂(z)` for a single event.
pub fn gsm_event_score(z: &[f64], br: &BrMatrix, risk: &RiskSpec) -> Result<f64> {
    check_event(z, br.dim() + 1)?;
    let ev = GsmEvent::new(z.to_vec(), risk)?;
    let der = log_intensity_derivatives(z, br)?;
    Ok(ev.score(&der.first, &der.second))
}

/// Sum of `δ̂` over a fixed collection of events.
#[derive(Debug, Clone)]
pub struct GsmLoss {
    events: Vec<GsmEvent>,
    dim: usize,
}

impl GsmLoss {
    pub fn new(events: Vec<GsmEvent>, dim: usize) -> Result<Self> {
        for e in &events {
            check_event(&e.z, dim)?;
        }
        Ok(Self { events, dim })
    }

    /// Events of an exceedance set scored with its own risk functional.
    pub fn from_exceedances(set: &ExceedanceSet) -> Result<Self> {
        let events = set
            .z
            .rows()
            .map(|row| GsmEvent::new(row.to_vec(), &set.risk))
            .collect::<Result<Vec<_>>>()?;
        Self::new(events, set.dim())
    }

    /// Events on sites whose risk was computed elsewhere (held-out sites).
    pub fn from_risks(z: &DataMatrix, r: &[f64]) -> Result<Self> {
        if r.len() != z.nrows() {
            return Err(Error::invalid(format!("{} risks for {} events", r.len(), z.nrows())));
        }
        let events = z
            .rows()
            .zip(r)
            .map(|(row, &ri)| GsmEvent::with_risk(row.to_vec(), ri, None))
            .collect::<Result<Vec<_>>>()?;
        Self::new(events, z.ncols())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    fn z_tilde_matrix(&self, br: &BrMatrix) -> DMatrix<f64> {
        let m = br.dim();
        let mut zt = DMatrix::zeros(m, self.events.len());
        for (t, e) in self.events.iter().enumerate() {
            let ln0 = e.z[0].ln();
            for k in 0..m {
                zt[(k, t)] = e.z[k + 1].ln() - ln0 + br.gamma[(k + 1, 0)];
            }
        }
        zt
    }
}

impl GammaLoss for GsmLoss {
    fn value(&self, gamma: &DMatrix<f64>) -> Result<f64> {
        if self.events.is_empty() {
            return Ok(0.0);
        }
        let br = BrMatrix::from_gamma(gamma.clone())?;
        let prec = Precision::new(&br);
        let q = &prec.p * self.z_tilde_matrix(&br);
        Ok(self
            .events
            .iter()
            .enumerate()
            .map(|(t, e)| {
                let (g, h) = derivatives_from_q(&e.z, q.column(t).as_slice(), &prec);
                e.score(&g, &h)
            })
            .sum())
    }

    fn value_and_adjoint(&self, gamma: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let d = self.dim;
        let mut adj = DMatrix::zeros(d, d);
        if self.events.is_empty() {
            return Ok((0.0, adj));
        }
        let br = BrMatrix::from_gamma(gamma.clone())?;
        let m = br.dim();
        let prec = Precision::new(&br);
        let zt = self.z_tilde_matrix(&br);
        let q = &prec.p * &zt;
        let mut b_mat = DMatrix::zeros(m, self.events.len());
        let mut a_sum = vec![0.0; m];
        let mut c_sum = 0.0;
        let mut value = 0.0;
        for (t, e) in self.events.iter().enumerate() {
            let (g, h) = derivatives_from_q(&e.z, q.column(t).as_slice(), &prec);
            value += e.score(&g, &h);
            let dg = |i: usize| 2.0 * e.w[i] * e.dw[i] + e.w[i] * e.w[i] * g[i];
            let dh = |i: usize| e.w[i] * e.w[i];
            let z0 = e.z[0];
            let common = dg(0) / z0 - dh(0) / (z0 * z0);
            c_sum -= dh(0) / (z0 * z0);
            for k in 0..m {
                let zk = e.z[k + 1];
                b_mat[(k, t)] = -dg(k + 1) / zk + dh(k + 1) / (zk * zk) + common;
                a_sum[k] -= dh(k + 1) / (zk * zk);
            }
        }
        // ∂L/∂P, then ∂L/∂Σ = -P (∂L/∂P) P.
        let mut g_p = &b_mat * zt.transpose();
        for k in 0..m {
            g_p[(k, k)] += a_sum[k];
        }
        g_p.add_scalar_mut(c_sum);
        let g_sigma = -(&prec.p * g_p * &prec.p);
        let b_total: DVector<f64> = b_mat.column_sum();
        let via_zt = &prec.p * b_total;
        for k in 0..m {
            let mut s = via_zt[k];
            for l in 0..m {
                s += g_sigma[(k, l)] + g_sigma[(l, k)];
            }
            adj[(0, k + 1)] = s;
            for l in (k + 1)..m {
                adj[(k + 1, l + 1)] = -(g_sigma[(k, l)] + g_sigma[(l, k)]);
            }
        }
        Ok((value, adj))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// GSM loss of the model `(ψ, stack)` on the events of `events`.
pub fn gsm_loss(
    psi: &VariogramParams,
    stack: &WarpStack,
    sites: &LocationSet,
    events: &ExceedanceSet,
    cfg: &GsmConfig,
) -> Result<f64> {
    let set = ExceedanceSet {
        risk: cfg.risk,
        ..events.clone()
    };
    evaluate(&GsmLoss::from_exceedances(&set)?, psi, stack, sites.coords())
}
