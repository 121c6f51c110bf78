//! Nonparametric bootstrap over exceedance events.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, FitConfig, FitResult, Objective};
use crate::dependence::VariogramParams;
use crate::empirics::ExceedanceSet;
use crate::error::{Error, Result};
use crate::geometry::LocationSet;
use crate::simulate::replicate_rng;
use crate::stats::std_dev;

/// Largest tolerated share of failed replicate fits.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMode {
    /// Refit `ψ` only, warping held at the baseline.
    FixedWarping,
    /// Refit `ψ` and the warping, warm-started at the baseline.
    ReestimatedWarping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub mode: BootstrapMode,
    pub seed: u64,
    /// Every replicate reuses the first resample.
    #[serde(default)]
    pub identical_resamples: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSd {
    pub i: usize,
    pub j: usize,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub mode: BootstrapMode,
    pub psi: Vec<VariogramParams>,
    /// Standard deviations of `(φ̂, κ̂)`.
    pub psi_sd: [f64; 2],
    pub cep_sd: Vec<PairSd>,
    pub failures: Vec<(usize, String)>,
}

impl BootstrapResult {
    pub fn write_cep_sd_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.cep_sd {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Resamples the events of `set` with replacement and refits from the
/// `baseline` state.
pub fn bootstrap(
    sites: &LocationSet,
    set: &ExceedanceSet,
    baseline: &FitResult,
    cfg: &FitConfig,
    bcfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    if bcfg.replicates < 2 {
        return Err(Error::invalid("the bootstrap needs at least 2 replicates"));
    }
    if set.is_empty() {
        return Err(Error::invalid("no events to resample"));
    }
    let mut start = baseline.stack.clone();
    if bcfg.mode == BootstrapMode::FixedWarping {
        start.freeze_all();
    }
    let n = set.len();
    let outcomes: Vec<Result<FitResult>> = (0..bcfg.replicates)
        .into_par_iter()
        .map(|b| {
            let stream = if bcfg.identical_resamples { 0 } else { b as u64 };
            let mut rng = replicate_rng(bcfg.seed, stream);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let resampled = set.resample(&idx);
            let objective = Objective::from_exceedances(cfg.loss, &resampled, cfg.weight_scheme)?;
            fit(sites, &objective, start.clone(), baseline.psi, cfg)
        })
        .collect();
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for (b, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(f) => fits.push(f),
            Err(e) => failures.push((b, e.to_string())),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_SHARE * bcfg.replicates as f64 {
        return Err(Error::Numeric(format!(
            "{} of {} bootstrap fits failed; first: {}",
            failures.len(),
            bcfg.replicates,
            failures[0].1
        )));
    }
    if fits.len() < 2 {
        return Err(Error::Numeric("fewer than 2 successful bootstrap fits".into()));
    }
    let psi: Vec<VariogramParams> = fits.iter().map(|f| f.psi).collect();
    let phi: Vec<f64> = psi.iter().map(|p| p.range).collect();
    let kappa: Vec<f64> = psi.iter().map(|p| p.smoothness).collect();
    let ceps: Vec<_> = fits.iter().map(|f| f.model_cep(&f.warped)).collect();
    let d = sites.len();
    let mut cep_sd = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in (i + 1)..d {
            let v: Vec<f64> = ceps.iter().map(|c| c[(i, j)]).collect();
            cep_sd.push(PairSd { i, j, sd: std_dev(&v) });
        }
    }
    Ok(BootstrapResult {
        mode: bcfg.mode,
        psi,
        psi_sd: [std_dev(&phi), std_dev(&kappa)],
        cep_sd,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirics::{extract_exceedances, ExceedanceOptions};
    use crate::fit::fit_exceedances;
    use crate::geometry::Point;
    use crate::risk::RiskSpec;
    use crate::simulate::{simulate, SimConfig};
    use crate::warp::Architecture;

    #[test]
    fn identical_resamples_give_zero_sd() {
        let coords: Vec<Point> = (0..8).map(|k| [(k as f64).sin() * 0.4, (k as f64 * 2.1).cos() * 0.4]).collect();
        let sites = LocationSet::new(coords).unwrap();
        let sim = SimConfig {
            sites: sites.clone(),
            psi: VariogramParams::new(0.3, 1.0).unwrap(),
            truth: None,
            risk: RiskSpec::Sum,
            n: 600,
            seed: 3,
            max_rejection_tries: 100,
        };
        let x = simulate(&sim).unwrap().data;
        let set = extract_exceedances(&x, &RiskSpec::Sum, 0.9, 0.9, &ExceedanceOptions::default()).unwrap();
        let cfg = FitConfig {
            max_steps: 60,
            ..Default::default()
        };
        let base = fit_exceedances(&sites, &set, &Architecture::preset(0).unwrap(), &cfg).unwrap();
        let bcfg = BootstrapConfig {
            replicates: 2,
            mode: BootstrapMode::FixedWarping,
            seed: 9,
            identical_resamples: true,
        };
        let r = bootstrap(&sites, &set, &base, &cfg, &bcfg).unwrap();
        assert_eq!(r.psi_sd, [0.0, 0.0]);
        assert!(r.cep_sd.iter().all(|p| p.sd == 0.0));
        assert_eq!(r.cep_sd.len(), 28);
        let one = BootstrapConfig { replicates: 1, ..bcfg };
        assert!(bootstrap(&sites, &set, &base, &cfg, &one).is_err());
    }
}
