//! Risk thresholds, rescaled r-exceedances and empirical pairwise
//! conditional exceedance probabilities.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::dependence::{theoretical_cep, VariogramParams};
use crate::error::{Error, Result};
use crate::geometry::{distance, Point};
use crate::risk::RiskSpec;
use crate::stats::quantile_type7;

pub const DEFAULT_RISK_QUANTILE: f64 = 0.95;
pub const DEFAULT_MARGINAL_QUANTILE: f64 = 0.95;

/// Minimum sizes enforced by [`extract_exceedances`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceOptions {
    pub min_rows: usize,
    pub min_exceedances: usize,
}

impl Default for ExceedanceOptions {
    fn default() -> Self {
        Self {
            min_rows: 20,
            min_exceedances: 10,
        }
    }
}

/// Events `z_t = x_t / u` with `r(x_t) >= u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceSet {
    pub z: DataMatrix,
    /// Risk threshold.
    pub u: f64,
    /// Pooled marginal threshold on the Pareto scale.
    pub u_marginal: f64,
    pub risk: RiskSpec,
    pub q_risk: f64,
    pub q_marginal: f64,
    /// Row indices of the events in the source matrix.
    pub rows: Vec<usize>,
    pub n_total: usize,
}

impl ExceedanceSet {
    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    /// Marginal level on the `z` scale, `u' / u`.
    pub fn z_level(&self) -> f64 {
        self.u_marginal / self.u
    }

    /// Same thresholds, events resampled by index.
    pub fn resample(&self, idx: &[usize]) -> Self {
        Self {
            z: self.z.select_rows(idx),
            rows: idx.iter().map(|&i| self.rows[i]).collect(),
            ..self.clone()
        }
    }

    /// Restricts events to a subset of sites, keeping thresholds.
    pub fn select_sites(&self, idx: &[usize]) -> Self {
        Self {
            z: self.z.select_columns(idx),
            ..self.clone()
        }
    }
}

/// Risk of every row (the exact maximum for `max`).
pub fn risks(x: &DataMatrix, risk: &RiskSpec) -> Result<Vec<f64>> {
    x.rows().map(|row| risk.exact(row)).collect()
}

/// Thresholds the rows of `x` (standard Pareto margins) on their risk.
pub fn extract_exceedances(
    x: &DataMatrix,
    risk: &RiskSpec,
    q_risk: f64,
    q_marginal: f64,
    opts: &ExceedanceOptions,
) -> Result<ExceedanceSet> {
    let r = risks(x, risk)?;
    extract_with_risks(x, &r, risk, q_risk, q_marginal, opts)
}

/// As [`extract_exceedances`] with precomputed risks, e.g. risks taken over
/// a different set of columns than those kept in `x`.
pub fn extract_with_risks(
    x: &DataMatrix,
    r: &[f64],
    risk: &RiskSpec,
    q_risk: f64,
    q_marginal: f64,
    opts: &ExceedanceOptions,
) -> Result<ExceedanceSet> {
    let n = x.nrows();
    if r.len() != n {
        return Err(Error::invalid(format!("{} risks for {n} rows", r.len())));
    }
    if n < opts.min_rows {
        return Err(Error::invalid(format!(
            "thresholding needs at least {} rows, got {n}",
            opts.min_rows
        )));
    }
    let u = quantile_type7(r, q_risk)?;
    if !(u > 0.0) {
        return Err(Error::invalid(format!("risk threshold must be positive, got {u}")));
    }
    let u_marginal = quantile_type7(x.values(), q_marginal)?;
    let rows: Vec<usize> = (0..n).filter(|&t| r[t] >= u).collect();
    if rows.len() < opts.min_exceedances {
        return Err(Error::invalid(format!(
            "only {} exceedances of the risk threshold, need {}",
            rows.len(),
            opts.min_exceedances
        )));
    }
    let z = x.select_rows(&rows).scaled(1.0 / u);
    Ok(ExceedanceSet {
        z,
        u,
        u_marginal,
        risk: *risk,
        q_risk,
        q_marginal,
        rows,
        n_total: n,
    })
}

/// How pair weights are derived from `π̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    #[default]
    OneOverTwoMinusPi,
    PiHat,
    Uniform,
}

impl WeightScheme {
    pub fn weight(&self, pi_hat: f64) -> f64 {
        match self {
            WeightScheme::OneOverTwoMinusPi => 1.0 / (2.0 - pi_hat),
            WeightScheme::PiHat => pi_hat,
            WeightScheme::Uniform => 1.0,
        }
    }
}

/// Symmetric CEP estimates; `NaN` marks pairs without marginal exceedances.
#[derive(Debug, Clone, PartialEq)]
pub struct CepMatrix {
    pub pi_hat: DMatrix<f64>,
    pub n_joint: DMatrix<f64>,
    pub n_marginal: Vec<f64>,
    pub n_events: usize,
}

impl CepMatrix {
    pub fn dim(&self) -> usize {
        self.n_marginal.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let v = self.pi_hat[(i, j)];
        (!v.is_nan()).then_some(v)
    }

    /// Defined off-diagonal pairs `(i, j, π̂)` with `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let d = self.dim();
        (0..d).flat_map(move |i| ((i + 1)..d).filter_map(move |j| self.get(i, j).map(|p| (i, j, p))))
    }

    pub fn n_missing(&self) -> usize {
        let d = self.dim();
        d * (d - 1) / 2 - self.pairs().count()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, scheme: WeightScheme) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["i", "j", "pi_hat", "weight", "n_joint", "n_marg"])?;
        for (i, j, p) in self.pairs() {
            w.write_record([
                i.to_string(),
                j.to_string(),
                p.to_string(),
                scheme.weight(p).to_string(),
                self.n_joint[(i, j)].to_string(),
                (0.5 * (self.n_marginal[i] + self.n_marginal[j])).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Counts exceedances of `level` over the given events.
fn cep_from_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, d: usize, level: f64) -> CepMatrix {
    let mut indicators: Vec<f64> = Vec::new();
    let mut n_events = 0;
    for row in rows {
        indicators.extend(row.iter().map(|&v| if v > level { 1.0 } else { 0.0 }));
        n_events += 1;
    }
    // Row-major events x sites is the column-major sites x events matrix.
    let ind = DMatrix::from_vec(d, n_events, indicators);
    let n_joint = &ind * ind.transpose();
    let n_marginal: Vec<f64> = (0..d).map(|i| n_joint[(i, i)]).collect();
    let pi_hat = DMatrix::from_fn(d, d, |i, j| {
        let denom = 0.5 * (n_marginal[i] + n_marginal[j]);
        if denom > 0.0 {
            n_joint[(i, j)] / denom
        } else {
            f64::NAN
        }
    });
    CepMatrix {
        pi_hat,
        n_joint,
        n_marginal,
        n_events,
    }
}

/// `π̂_ij` over rows with `r(x) >= u`, marginal exceedances of `u'`.
pub fn empirical_cep(x: &DataMatrix, risk: &RiskSpec, u: f64, u_marginal: f64) -> Result<CepMatrix> {
    let r = risks(x, risk)?;
    let rows = x.rows().zip(r).filter(|(_, r)| *r >= u).map(|(row, _)| row);
    Ok(cep_from_rows(rows, x.ncols(), u_marginal))
}

/// `π̂_ij` of an exceedance set, at level `u' / u` on the `z` scale.
pub fn exceedance_cep(set: &ExceedanceSet) -> CepMatrix {
    cep_from_rows(set.z.rows(), set.dim(), set.z_level())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CepDistanceRow {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub pi_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CepDistanceTable {
    pub rows: Vec<CepDistanceRow>,
    /// Mean `|π̂ - π(γ(d))|` when `ψ` was given.
    pub concentration: Option<f64>,
}

impl CepDistanceTable {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pairs `(d_ij, π̂_ij)` in the space given by `coords`.
pub fn cep_vs_distance(
    cep: &CepMatrix,
    coords: &[Point],
    psi: Option<&VariogramParams>,
) -> Result<CepDistanceTable> {
    if coords.len() != cep.dim() {
        return Err(Error::invalid(format!(
            "{} sites for a {}-site CEP matrix",
            coords.len(),
            cep.dim()
        )));
    }
    let rows: Vec<CepDistanceRow> = cep
        .pairs()
        .map(|(i, j, p)| CepDistanceRow {
            i,
            j,
            distance: distance(coords[i], coords[j]),
            pi_hat: p,
        })
        .collect();
    let concentration = match psi {
        Some(psi) if !rows.is_empty() => Some(
            rows.iter()
                .map(|r| (r.pi_hat - theoretical_cep(psi.gamma(r.distance))).abs())
                .sum::<f64>()
                / rows.len() as f64,
        ),
        _ => None,
    };
    Ok(CepDistanceTable { rows, concentration })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pareto_matrix(n: usize, d: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n * d).map(|_| 1.0 / (1.0 - rng.random::<f64>())).collect();
        DataMatrix::new(d, v).unwrap()
    }

    fn naive_cep(x: &DataMatrix, risk: &RiskSpec, u: f64, um: f64) -> DMatrix<f64> {
        let d = x.ncols();
        let mut out = DMatrix::from_element(d, d, f64::NAN);
        for i in 0..d {
            for j in 0..d {
                let (mut joint, mut ni, mut nj) = (0usize, 0usize, 0usize);
                for row in x.rows() {
                    if risk.exact(row).unwrap() < u {
                        continue;
                    }
                    let (a, b) = (row[i] > um, row[j] > um);
                    joint += (a && b) as usize;
                    ni += a as usize;
                    nj += b as usize;
                }
                if ni + nj > 0 {
                    out[(i, j)] = joint as f64 / ((ni + nj) as f64 / 2.0);
                }
            }
        }
        out
    }

    #[test]
    fn five_percent_of_5000_rows() {
        let x = pareto_matrix(5000, 3, 1);
        let set = extract_exceedances(&x, &RiskSpec::Site { site: 0 }, 0.95, 0.95, &Default::default())
            .unwrap();
        assert_eq!(set.len(), 250);
        assert!(set.z.rows().all(|r| r[0] >= 1.0));
    }

    #[test]
    fn zero_quantile_keeps_everything() {
        let x = pareto_matrix(40, 2, 2);
        let set = extract_exceedances(&x, &RiskSpec::Sum, 0.0, 0.95, &Default::default()).unwrap();
        assert_eq!(set.len(), 40);
        let min = risks(&x, &RiskSpec::Sum).unwrap().into_iter().fold(f64::INFINITY, f64::min);
        assert_eq!(set.u, min);
    }

    #[test]
    fn hand_filter() {
        let x = DataMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        let opts = ExceedanceOptions {
            min_rows: 1,
            min_exceedances: 1,
        };
        let set = extract_exceedances(&x, &RiskSpec::Sum, 0.5, 0.5, &opts).unwrap();
        assert_abs_diff_eq!(set.u, 2.5, epsilon = 1e-15);
        assert_eq!(set.rows, vec![2, 3]);
        assert_abs_diff_eq!(set.z.row(0)[0], 3.0 / 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(set.z.row(1)[0], 4.0 / 2.5, epsilon = 1e-15);
        // Default minimums reject such a small sample.
        assert!(extract_exceedances(&x, &RiskSpec::Sum, 0.5, 0.5, &Default::default()).is_err());
    }

    #[test]
    fn too_few_exceedances() {
        let x = pareto_matrix(100, 2, 3);
        assert!(extract_exceedances(&x, &RiskSpec::Sum, 0.95, 0.95, &Default::default()).is_err());
    }

    #[test]
    fn three_event_toy() {
        let x = DataMatrix::from_rows(&[vec![5.0, 5.0], vec![5.0, 0.5], vec![0.5, 5.0]]).unwrap();
        let cep = empirical_cep(&x, &RiskSpec::Sum, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(cep.get(0, 1).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(cep.get(0, 0), Some(1.0));
    }

    #[test]
    fn duplicated_site_and_missing_pairs() {
        let base = pareto_matrix(300, 2, 4);
        let rows: Vec<Vec<f64>> = base.rows().map(|r| vec![r[0], r[0], r[1], 0.1]).collect();
        let x = DataMatrix::from_rows(&rows).unwrap();
        let cep = empirical_cep(&x, &RiskSpec::Site { site: 0 }, 2.0, 3.0).unwrap();
        assert_eq!(cep.get(0, 1), Some(1.0));
        assert_eq!(cep.get(3, 3), None);
        assert!(cep.get(2, 3).is_some());
        assert_eq!(cep.n_missing(), 0);
    }

    #[test]
    fn independent_columns_give_marginal_rate() {
        let x = pareto_matrix(200_000, 2, 5);
        let cep = empirical_cep(&x, &RiskSpec::Site { site: 0 }, 1.0, 10.0).unwrap();
        assert!((cep.get(0, 1).unwrap() - 0.1).abs() < 0.01);
    }

    #[test]
    fn weights_schemes() {
        assert_eq!(WeightScheme::OneOverTwoMinusPi.weight(0.0), 0.5);
        assert_eq!(WeightScheme::OneOverTwoMinusPi.weight(1.0), 1.0);
        assert_eq!(WeightScheme::Uniform.weight(0.3), 1.0);
        assert_eq!(WeightScheme::PiHat.weight(0.3), 0.3);
    }

    #[test]
    fn distance_table() {
        let x = pareto_matrix(2000, 3, 6);
        let cep = empirical_cep(&x, &RiskSpec::Sum, 3.0, 2.0).unwrap();
        let coords = [[0.0, 0.0], [3.0, 4.0], [0.0, 1.0]];
        let psi = VariogramParams::new(0.5, 1.0).unwrap();
        let t = cep_vs_distance(&cep, &coords, Some(&psi)).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[0].distance, 5.0);
        assert!(t.concentration.unwrap() >= 0.0);
        assert!(cep_vs_distance(&cep, &coords[..2], None).is_err());

        let empty = empirical_cep(&x, &RiskSpec::Sum, 3.0, 1e9).unwrap();
        let t = cep_vs_distance(&empty, &coords, Some(&psi)).unwrap();
        assert!(t.rows.is_empty() && t.concentration.is_none());
    }

    #[test]
    fn csv_export() {
        let x = pareto_matrix(500, 3, 8);
        let cep = empirical_cep(&x, &RiskSpec::Sum, 3.0, 2.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cep.csv");
        cep.write_csv(&path, WeightScheme::default()).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("i,j,pi_hat,weight,n_joint,n_marg"));
        assert_eq!(text.lines().count(), 4);
    }

    proptest! {
        #[test]
        fn matches_naive_oracle(n in 5usize..50, d in 2usize..10, seed in 0u64..1000, um in 1.0f64..4.0) {
            let x = pareto_matrix(n, d, seed);
            let risk = RiskSpec::max();
            let u = quantile_type7(&risks(&x, &risk).unwrap(), 0.3).unwrap();
            let cep = empirical_cep(&x, &risk, u, um).unwrap();
            let naive = naive_cep(&x, &risk, u, um);
            for i in 0..d {
                for j in 0..d {
                    let (a, b) = (cep.pi_hat[(i, j)], naive[(i, j)]);
                    prop_assert!(a == b || (a.is_nan() && b.is_nan()));
                    if !a.is_nan() {
                        prop_assert!((0.0..=1.0).contains(&a));
                        prop_assert_eq!(a, cep.pi_hat[(j, i)]);
                    }
                }
            }
        }

        #[test]
        fn homogeneous_in_scale(c in 1.1f64..10.0, seed in 0u64..100) {
            let x = pareto_matrix(200, 4, seed);
            let a = extract_exceedances(&x, &RiskSpec::Sum, 0.9, 0.9, &Default::default()).unwrap();
            let b = extract_exceedances(&x.scaled(c), &RiskSpec::Sum, 0.9, 0.9, &Default::default()).unwrap();
            prop_assert_eq!(&a.rows, &b.rows);
            for (ra, rb) in a.z.rows().zip(b.z.rows()) {
                for (va, vb) in ra.iter().zip(rb) {
                    prop_assert!((va - vb).abs() <= 1e-12 * va.abs());
                }
            }
        }
    }
}
