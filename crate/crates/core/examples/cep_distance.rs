//! Empirical conditional exceedance probabilities against distance, in the
//! original and in the true warped space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpareto_warp::dependence::VariogramParams;
use rpareto_warp::empirics::{cep_vs_distance, exceedance_cep, extract_exceedances, ExceedanceOptions, ExceedanceSet};
use rpareto_warp::geometry::LocationSet;
use rpareto_warp::risk::RiskSpec;
use rpareto_warp::simulate::{simulate, SimConfig};
use rpareto_warp::warp::{RbfUnit, Unit, WarpStack};

fn main() -> rpareto_warp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let coords = (0..40)
        .map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5])
        .collect();
    let sites = LocationSet::new(coords)?;
    let psi = VariogramParams::new(0.3, 1.0)?;
    let cfg = SimConfig {
        sites: sites.clone(),
        psi,
        truth: Some(WarpStack::new(vec![Unit::Rbf(RbfUnit::with_weight([0.0, 0.0], 4.0, 0.8))])),
        risk: RiskSpec::Sum,
        n: 5000,
        seed: 1,
        max_rejection_tries: 1_000_000,
    };
    let x = simulate(&cfg)?.data;
    let set = extract_exceedances(&x, &cfg.risk, 0.95, 0.95, &ExceedanceOptions::default())?;
    // Every simulated row is an extreme event, so the pooled marginal
    // quantile sits far below u; exceedances of u itself are exact.
    let set = ExceedanceSet { u_marginal: set.u, ..set };
    let cep = exceedance_cep(&set);
    println!("{} events, {} of {} pairs missing", set.len(), cep.n_missing(), 40 * 39 / 2);
    let original = cep_vs_distance(&cep, sites.coords(), Some(&psi))?;
    let warped = cep_vs_distance(&cep, &cfg.warped_sites()?, Some(&psi))?;
    println!(
        "mean |CEP - model| by distance: original {:.4}, warped {:.4}",
        original.concentration.unwrap_or(f64::NAN),
        warped.concentration.unwrap_or(f64::NAN)
    );
    Ok(())
}
