//! Bootstrap standard deviations of stationary dependence parameters under
//! both losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpareto_warp::dependence::VariogramParams;
use rpareto_warp::empirics::{extract_exceedances, ExceedanceOptions};
use rpareto_warp::fit::{bootstrap, fit_exceedances, BootstrapConfig, BootstrapMode, FitConfig, LossKind};
use rpareto_warp::geometry::LocationSet;
use rpareto_warp::risk::RiskSpec;
use rpareto_warp::simulate::{simulate, SimConfig};
use rpareto_warp::warp::Architecture;

fn main() -> rpareto_warp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let coords = (0..50)
        .map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5])
        .collect();
    let sites = LocationSet::new(coords)?;
    let sim = SimConfig {
        sites: sites.clone(),
        psi: VariogramParams::new(0.2, 1.0)?,
        truth: None,
        risk: RiskSpec::Site { site: 0 },
        n: 5000,
        seed: 2,
        max_rejection_tries: 1_000_000,
    };
    let x = simulate(&sim)?.data;
    let events = extract_exceedances(&x, &sim.risk, 0.95, 0.95, &ExceedanceOptions::default())?;
    let bcfg = BootstrapConfig {
        replicates: 10,
        mode: BootstrapMode::FixedWarping,
        seed: 4,
        identical_resamples: false,
    };
    for loss in [LossKind::Gsm, LossKind::Wls] {
        let cfg = FitConfig { loss, ..Default::default() };
        let fit = fit_exceedances(&sites, &events, &Architecture::preset(0)?, &cfg)?;
        let boot = bootstrap(&sites, &events, &fit, &cfg, &bcfg)?;
        println!(
            "{loss:?}: phi = {:.3} (sd {:.4}), kappa = {:.3} (sd {:.4})",
            fit.psi.range, boot.psi_sd[0], fit.psi.smoothness, boot.psi_sd[1]
        );
    }
    Ok(())
}
