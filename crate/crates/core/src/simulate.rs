//! Simulation of Brown–Resnick r-Pareto processes on finite site sets.
//!
//! A single Gaussian field `W` with `W_0 = 0` and `Cov(W_i, W_k) = Σ_ik`
//! serves every anchor: increments relative to site `j` are `W_i - W_j`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::dependence::{gamma_matrix, BrMatrix, VariogramParams};
use crate::error::{Error, Result};
use crate::geometry::{LocationSet, Point};
use crate::risk::RiskSpec;
use crate::warp::WarpStack;

pub const DEFAULT_MAX_REJECTION_TRIES: u64 = 1_000_000;

/// Reusable factor of the increment covariance on a fixed set of sites.
#[derive(Debug, Clone)]
pub struct ExtremalSampler {
    gamma: DMatrix<f64>,
    /// Lower Cholesky factor of `Σ`; empty for a single site.
    lower: DMatrix<f64>,
}

impl ExtremalSampler {
    pub fn new(warped: &[Point], psi: &VariogramParams) -> Result<Self> {
        if warped.is_empty() {
            return Err(Error::invalid("cannot simulate on zero sites"));
        }
        let gamma = gamma_matrix(warped, psi);
        let lower = if warped.len() == 1 {
            DMatrix::zeros(0, 0)
        } else {
            BrMatrix::from_gamma(gamma.clone())?.lower()
        };
        Ok(Self { gamma, lower })
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    fn field<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let m = self.lower.nrows();
        let n = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = &self.lower * n;
        std::iter::once(0.0).chain(w.iter().copied()).collect()
    }

    fn check_anchor(&self, anchor: usize) -> Result<()> {
        if anchor >= self.dim() {
            return Err(Error::invalid(format!(
                "anchor {anchor} out of range for {} sites",
                self.dim()
            )));
        }
        Ok(())
    }

    /// `ε(s_i) - ε(s_j)` for anchor `j`.
    pub fn increments<R: Rng + ?Sized>(&self, anchor: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.check_anchor(anchor)?;
        let w = self.field(rng);
        let wj = w[anchor];
        let mut out: Vec<f64> = w.iter().map(|v| v - wj).collect();
        out[anchor] = 0.0;
        Ok(out)
    }

    /// `Y(s_i) = exp{ε(s_i) - ε(s_j) - γ_ij}`, equal to 1 at the anchor.
    pub fn extremal<R: Rng + ?Sized>(&self, anchor: usize, rng: &mut R) -> Result<Vec<f64>> {
        let inc = self.increments(anchor, rng)?;
        Ok(inc
            .iter()
            .enumerate()
            .map(|(i, e)| (e - self.gamma[(i, anchor)]).exp())
            .collect())
    }

    /// A draw from the sum-normalized spectral measure: a uniformly chosen
    /// anchor, `V = Y / Σ Y`.
    fn sum_spectral<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let j = rng.random_range(0..self.dim());
        let y = self.extremal(j, rng).expect("anchor in range");
        let s: f64 = y.iter().sum();
        y.into_iter().map(|v| v / s).collect()
    }
}

/// Increments relative to `anchor` on warped sites.
pub fn gaussian_increments<R: Rng + ?Sized>(
    warped: &[Point],
    psi: &VariogramParams,
    anchor: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    ExtremalSampler::new(warped, psi)?.increments(anchor, rng)
}

/// Extremal function anchored at `anchor` on warped sites.
pub fn extremal_function<R: Rng + ?Sized>(
    warped: &[Point],
    psi: &VariogramParams,
    anchor: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    ExtremalSampler::new(warped, psi)?.extremal(anchor, rng)
}

/// Standard Pareto variate.
fn pareto<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 / (1.0 - rng.random::<f64>())
}

/// Independent stream for replicate `t` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, t: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t);
    rng
}

/// Simulated replicates with rejection statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub data: DataMatrix,
    pub proposals: u64,
    pub acceptance_rate: f64,
}

fn collect(rows: Vec<(Vec<f64>, u64)>, d: usize) -> Result<SimOutput> {
    let n = rows.len();
    let proposals: u64 = rows.iter().map(|r| r.1).sum();
    let mut data = Vec::with_capacity(n * d);
    for (row, _) in rows {
        data.extend(row);
    }
    Ok(SimOutput {
        data: DataMatrix::new(d, data)?,
        proposals,
        acceptance_rate: if proposals == 0 { 1.0 } else { n as f64 / proposals as f64 },
    })
}

/// Exact sampling for the site functional at `site`: `Z = U Y_site`.
pub fn simulate_site_pareto(sampler: &ExtremalSampler, site: usize, n: usize, seed: u64) -> Result<SimOutput> {
    sampler.check_anchor(site)?;
    let rows = (0..n as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = replicate_rng(seed, t);
            let y = sampler.extremal(site, &mut rng)?;
            let u = pareto(&mut rng);
            Ok((y.into_iter().map(|v| u * v).collect(), 1))
        })
        .collect::<Result<Vec<_>>>()?;
    collect(rows, sampler.dim())
}

/// Exact sampling for the sum functional.
pub fn simulate_sum_pareto(sampler: &ExtremalSampler, n: usize, seed: u64) -> Result<SimOutput> {
    let rows = (0..n as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = replicate_rng(seed, t);
            let v = sampler.sum_spectral(&mut rng);
            let u = pareto(&mut rng);
            (v.into_iter().map(|x| u * x).collect(), 1)
        })
        .collect();
    collect(rows, sampler.dim())
}

/// Constant `C` with `r(v) <= C r_sum(v)` for positive `v`.
fn sum_bound(risk: &RiskSpec, d: usize) -> f64 {
    match *risk {
        RiskSpec::SumBeta { beta } if beta < 1.0 => (d as f64).powf(1.0 / beta - 1.0),
        _ => 1.0,
    }
}

/// Rejection sampling from the sum-spectral proposal for a functional `r`
/// bounded by the sum; `max` uses the exact maximum.
pub fn simulate_rpareto_rejection(
    sampler: &ExtremalSampler,
    risk: &RiskSpec,
    n: usize,
    seed: u64,
    max_tries: u64,
) -> Result<SimOutput> {
    risk.validate(sampler.dim())?;
    let bound = sum_bound(risk, sampler.dim());
    let results: Vec<std::result::Result<(Vec<f64>, u64), u64>> = (0..n as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = replicate_rng(seed, t);
            for tries in 1..=max_tries {
                let v = sampler.sum_spectral(&mut rng);
                let r = risk.exact(&v).unwrap_or(0.0);
                if rng.random::<f64>() * bound < r {
                    let u = pareto(&mut rng);
                    return Ok((v.into_iter().map(|x| u * x / r).collect(), tries));
                }
            }
            Err(max_tries)
        })
        .collect();
    if results.iter().any(|r| r.is_err()) {
        let tries: u64 = results.iter().map(|r| r.as_ref().map_or_else(|t| *t, |o| o.1)).sum();
        let accepted = results.iter().filter(|r| r.is_ok()).count();
        return Err(Error::RejectionBudget {
            tries,
            rate: accepted as f64 / tries as f64,
        });
    }
    collect(results.into_iter().map(|r| r.unwrap()).collect(), sampler.dim())
}

/// Full simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub sites: LocationSet,
    pub psi: VariogramParams,
    /// Warping of the truth; `None` is stationary.
    #[serde(default)]
    pub truth: Option<WarpStack>,
    pub risk: RiskSpec,
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_max_tries")]
    pub max_rejection_tries: u64,
}

fn default_max_tries() -> u64 {
    DEFAULT_MAX_REJECTION_TRIES
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("the number of replicates must be at least 1"));
        }
        VariogramParams::new(self.psi.range, self.psi.smoothness)?;
        self.risk.validate(self.sites.len())
    }

    /// Sites in the space where the process is isotropic.
    pub fn warped_sites(&self) -> Result<Vec<Point>> {
        let identity = WarpStack::identity();
        let stack = self.truth.as_ref().unwrap_or(&identity);
        Ok(stack.forward(self.sites.coords())?.coords)
    }
}

/// Simulates `cfg.n` replicates with the sampler suited to `cfg.risk`.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let sampler = ExtremalSampler::new(&cfg.warped_sites()?, &cfg.psi)?;
    match cfg.risk {
        RiskSpec::Site { site } => simulate_site_pareto(&sampler, site, cfg.n, cfg.seed),
        RiskSpec::Sum => simulate_sum_pareto(&sampler, cfg.n, cfg.seed),
        _ => simulate_rpareto_rejection(&sampler, &cfg.risk, cfg.n, cfg.seed, cfg.max_rejection_tries),
    }
}

/// JSON written next to simulated data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSidecar {
    pub config: SimConfig,
    pub seed: u64,
    pub proposals: u64,
    pub acceptance_rate: f64,
}

pub fn write_sidecar(path: impl AsRef<Path>, cfg: &SimConfig, out: &SimOutput) -> Result<()> {
    let side = SimSidecar {
        config: cfg.clone(),
        seed: cfg.seed,
        proposals: out.proposals,
        acceptance_rate: out.acceptance_rate,
    };
    std::fs::write(path, serde_json::to_string_pretty(&side)?)?;
    Ok(())
}
