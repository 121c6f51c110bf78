//! Simulates a stationary Brown–Resnick r-Pareto process and recovers its
//! range and smoothness by gradient score matching.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpareto_warp::dependence::VariogramParams;
use rpareto_warp::empirics::{extract_exceedances, ExceedanceOptions};
use rpareto_warp::fit::{fit_exceedances, FitConfig, LossKind};
use rpareto_warp::geometry::LocationSet;
use rpareto_warp::risk::RiskSpec;
use rpareto_warp::simulate::{simulate, SimConfig};
use rpareto_warp::warp::Architecture;

fn main() -> rpareto_warp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let coords = (0..100)
        .map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5])
        .collect();
    let sites = LocationSet::new(coords)?;
    let sim = SimConfig {
        sites: sites.clone(),
        psi: VariogramParams::new(0.2, 1.0)?,
        truth: None,
        risk: RiskSpec::Site { site: 0 },
        n: 5000,
        seed: 7,
        max_rejection_tries: 1_000_000,
    };
    let x = simulate(&sim)?.data;
    let events = extract_exceedances(&x, &sim.risk, 0.95, 0.95, &ExceedanceOptions::default())?;
    println!("{} events above u = {:.3}", events.len(), events.u);

    let loss = std::env::args().nth(1).unwrap_or_else(|| "gsm".into());
    let cfg = FitConfig {
        loss: if loss == "wls" { LossKind::Wls } else { LossKind::Gsm },
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let fit = fit_exceedances(&sites, &events, &Architecture::preset(0)?, &cfg)?;
    println!(
        "{loss}: phi = {:.4}, kappa = {:.4}, loss = {:.6e}, steps = {}, converged = {} ({:.1?})",
        fit.psi.range,
        fit.psi.smoothness,
        fit.loss,
        fit.steps,
        fit.converged,
        start.elapsed()
    );
    Ok(())
}
