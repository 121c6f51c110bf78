//! Fits a generalized Pareto tail to synthetic data and maps the series to
//! the unit Pareto scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpareto_warp::tailmargins::{fit_gpd, gpd_quantile, SiteMargin, DEFAULT_THRESHOLD_QUANTILE};

fn main() -> rpareto_warp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let excesses: Vec<f64> = (0..2000).map(|_| gpd_quantile(rng.random(), 1.0, 0.2)).collect();
    let fit = fit_gpd(&excesses)?;
    println!(
        "GPD(1, 0.2) sample: tau = {:.3}, xi = {:.3}, KS p = {:.3}",
        fit.tau, fit.xi, fit.ks_p_value
    );

    // A daily-like series: lognormal body with a GPD tail.
    let series: Vec<f64> = (0..5000)
        .map(|_| {
            if rng.random::<f64>() < 0.05 {
                3.0 + gpd_quantile(rng.random(), 0.8, 0.15)
            } else {
                (0.5 * rng.random::<f64>()).exp()
            }
        })
        .collect();
    let margin = SiteMargin::fit(&series, DEFAULT_THRESHOLD_QUANTILE).map_err(|(_, e)| e)?;
    let z = margin.to_pareto_scale(&series);
    let top = z.iter().copied().fold(0.0, f64::max);
    println!(
        "site threshold {:.3}, xi = {:.3}; largest value on the Pareto scale {top:.1}",
        margin.threshold,
        margin.fit.as_ref().map_or(f64::NAN, |f| f.xi)
    );
    Ok(())
}
