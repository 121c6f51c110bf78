use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpareto_warp::dependence::{gamma_matrix, theoretical_cep, VariogramParams};
use rpareto_warp::empirics::{exceedance_cep, extract_exceedances, ExceedanceOptions, ExceedanceSet};
use rpareto_warp::geometry::{LocationSet, Point};
use rpareto_warp::risk::RiskSpec;
use rpareto_warp::simulate::{simulate, SimConfig};
use rpareto_warp::warp::{RbfUnit, Unit, WarpStack};

fn truth() -> WarpStack {
    WarpStack::new(vec![Unit::Rbf(RbfUnit::with_weight([0.0, 0.0], 4.0, 0.8))])
}

fn sites(d: usize, seed: u64) -> LocationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..d)
        .map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5])
        .collect();
    LocationSet::new(coords).unwrap()
}

fn squared_error(set: &ExceedanceSet, warped: &[Point], psi: &VariogramParams) -> f64 {
    let model = gamma_matrix(warped, psi).map(theoretical_cep);
    exceedance_cep(set).pairs().map(|(i, j, p)| (p - model[(i, j)]).powi(2)).sum()
}

#[test]
fn truth_has_the_smallest_square_error() {
    let cfg = SimConfig {
        sites: sites(40, 3),
        psi: VariogramParams::new(0.3, 1.0).unwrap(),
        truth: Some(truth()),
        risk: RiskSpec::Sum,
        n: 20_000,
        seed: 5,
        max_rejection_tries: 1000,
    };
    let x = simulate(&cfg).unwrap().data;
    let set = extract_exceedances(&x, &cfg.risk, 0.95, 0.95, &ExceedanceOptions::default()).unwrap();
    // Exceedances of u itself give the limiting CEP exactly.
    let set = ExceedanceSet { u_marginal: set.u, ..set };
    let warped = cfg.warped_sites().unwrap();
    let se_truth = squared_error(&set, &warped, &cfg.psi);

    let identity = cfg.sites.coords().to_vec();
    let perturbed = [
        (warped.clone(), VariogramParams::new(0.45, 1.0).unwrap()),
        (warped.clone(), VariogramParams::new(0.2, 1.0).unwrap()),
        (warped, VariogramParams::new(0.3, 1.4).unwrap()),
        (identity, cfg.psi),
    ];
    for (coords, psi) in perturbed {
        let se = squared_error(&set, &coords, &psi);
        assert!(se_truth < se, "truth {se_truth} vs perturbed {psi:?}: {se}");
    }
}

fn run(args: &[&str], cwd: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_rpareto-warp"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn gs(path: &Path) -> f64 {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["gs"].as_f64().unwrap()
}

#[test]
fn nonstationary_fit_scores_better_on_held_out_sites() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = serde_json::json!({
        "sites": {"random": 80},
        "psi": {"range": 0.2, "smoothness": 1.0},
        "truth_stack": truth(),
        "risk": {"risk": "sum"},
        "n": 5000,
        "seed": 9,
    });
    std::fs::write(d.join("sim.json"), sim.to_string()).unwrap();
    run(&["simulate", "--config", "sim.json", "--out", "sim"], d);

    for (name, arch) in [("stat", serde_json::json!("arch0")), ("rbf", serde_json::json!([{"type": "rbf"}]))] {
        let cfg = serde_json::json!({"architecture": arch, "risk": {"risk": "sum"}, "n_train": 60});
        std::fs::write(d.join(format!("{name}.json")), cfg.to_string()).unwrap();
        let cfg_path = format!("{name}.json");
        let fit_dir = format!("fit_{name}");
        let eval_dir = format!("eval_{name}");
        run(
            &["fit", "--data", "sim/data.csv", "--sites", "sim/sites.csv", "--config", &cfg_path, "--out", &fit_dir],
            d,
        );
        run(&["evaluate", "--fit", &fit_dir, "--out", &eval_dir], d);
    }
    let stat = gs(&d.join("eval_stat/metrics.json"));
    let rbf = gs(&d.join("eval_rbf/metrics.json"));
    assert!(rbf < stat, "nonstationary GS {rbf} vs stationary {stat}");
}
