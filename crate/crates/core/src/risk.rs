//! Homogeneous risk functionals and their gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SMOOTH_MAX_POWER: f64 = 20.0;

fn default_power() -> f64 {
    DEFAULT_SMOOTH_MAX_POWER
}

/// A 1-homogeneous risk functional over the training sites.
///
/// `Max` is evaluated through the smooth surrogate `(Σ x^p)^{1/p}`; use
/// [`RiskSpec::exact`] for threshold selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "risk", rename_all = "snake_case", deny_unknown_fields)]
pub enum RiskSpec {
    Site {
        site: usize,
    },
    Max {
        #[serde(default = "default_power")]
        p: f64,
    },
    Sum,
    SumBeta {
        beta: f64,
    },
}

impl RiskSpec {
    pub fn max() -> Self {
        RiskSpec::Max {
            p: DEFAULT_SMOOTH_MAX_POWER,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RiskSpec::Site { .. } => "site",
            RiskSpec::Max { .. } => "max",
            RiskSpec::Sum => "sum",
            RiskSpec::SumBeta { .. } => "sum_beta",
        }
    }

    /// Checks parameters against a dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        match *self {
            RiskSpec::Site { site } if site >= d => Err(Error::invalid(format!(
                "site functional index {site} out of range for {d} sites"
            ))),
            RiskSpec::Max { p } if !(p >= 1.0) => {
                Err(Error::invalid(format!("smooth-max power must be >= 1, got {p}")))
            }
            RiskSpec::SumBeta { beta } if !(beta > 0.0) => {
                Err(Error::invalid(format!("beta must be positive, got {beta}")))
            }
            _ => Ok(()),
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        self.validate(x.len())?;
        if x.is_empty() {
            return Err(Error::invalid("risk of an empty vector"));
        }
        let strict = matches!(self, RiskSpec::Max { .. } | RiskSpec::SumBeta { .. });
        if let Some(i) = x
            .iter()
            .position(|&v| !v.is_finite() || (strict && v <= 0.0))
        {
            return Err(Error::invalid(format!(
                "{} risk needs finite positive components, x[{i}] = {}",
                self.name(),
                x[i]
            )));
        }
        Ok(())
    }

    /// Value of the functional (smooth surrogate for `Max`).
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(match *self {
            RiskSpec::Site { site } => x[site],
            RiskSpec::Sum => x.iter().sum(),
            RiskSpec::Max { p } => power_mean(x, p),
            RiskSpec::SumBeta { beta } => power_mean(x, beta),
        })
    }

    /// Value used for thresholding: the exact maximum for `Max`, otherwise
    /// the same as [`evaluate`](RiskSpec::evaluate).
    pub fn exact(&self, x: &[f64]) -> Result<f64> {
        match self {
            RiskSpec::Max { .. } => {
                self.check(x)?;
                Ok(x.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            }
            _ => self.evaluate(x),
        }
    }

    /// `∂r/∂x_i` (of the smooth surrogate for `Max`).
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(match *self {
            RiskSpec::Site { site } => {
                let mut g = vec![0.0; x.len()];
                g[site] = 1.0;
                g
            }
            RiskSpec::Sum => vec![1.0; x.len()],
            RiskSpec::Max { p } => power_mean_gradient(x, p),
            RiskSpec::SumBeta { beta } => power_mean_gradient(x, beta),
        })
    }
}

/// `(Σ x_i^p)^{1/p}` with the largest component factored out.
fn power_mean(x: &[f64], p: f64) -> f64 {
    let m = x.iter().copied().fold(0.0, f64::max);
    let s: f64 = x.iter().map(|&v| (v / m).powf(p)).sum();
    m * s.powf(1.0 / p)
}

/// `(x_i / r)^{p-1}`.
fn power_mean_gradient(x: &[f64], p: f64) -> Vec<f64> {
    let r = power_mean(x, p);
    x.iter().map(|&v| (v / r).powf(p - 1.0)).collect()
}
