//! Draws random constrained warpings from each architecture and checks them
//! for space folding; an unconstrained RBF weight is caught.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rpareto_warp::geometry::unit_grid;
use rpareto_warp::warp::{injectivity_check, Architecture, RbfUnit, Unit, WarpStack};

fn main() -> rpareto_warp::Result<()> {
    let grid = unit_grid(51);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in 1..=4 {
        let arch = Architecture::preset(k)?;
        let mut folds = 0;
        let mut min_sep = f64::INFINITY;
        for _ in 0..50 {
            let report = injectivity_check(&arch.random(&mut rng)?, &grid, 0.0);
            folds += report.fold as usize;
            min_sep = min_sep.min(report.min_distance);
        }
        println!("architecture {k}: {folds} folds in 50 draws, smallest image separation {min_sep:.2e}");
    }
    let bad = WarpStack::new(vec![Unit::Rbf(RbfUnit::unconstrained([0.0, 0.0], 4.0, -1.5))]);
    let report = injectivity_check(&bad, &grid, 0.0);
    println!(
        "RBF with w = -1.5: fold = {}, determinant signs +{} / -{}",
        report.fold, report.positive_det, report.negative_det
    );
    Ok(())
}
