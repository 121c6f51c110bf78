//! Weighted least squares between empirical and limiting model CEPs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{evaluate, GammaLoss};
use crate::dependence::{theoretical_cep, theoretical_cep_derivative, VariogramParams};
use crate::empirics::{CepMatrix, WeightScheme};
use crate::error::{Error, Result};
use crate::geometry::LocationSet;
use crate::warp::WarpStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WlsConfig {
    #[serde(default)]
    pub weight_scheme: WeightScheme,
}

/// `w (π - π̂)²`.
pub fn wls_pair_term(pi_model: f64, pi_hat: f64, weight: f64) -> f64 {
    weight * (pi_model - pi_hat).powi(2)
}

/// Pairs `(i, j, π̂, w)` of a CEP matrix with nonzero weight.
#[derive(Debug, Clone)]
pub struct WlsLoss {
    pairs: Vec<(usize, usize, f64, f64)>,
    dim: usize,
}

impl WlsLoss {
    pub fn new(cep: &CepMatrix, cfg: &WlsConfig) -> Result<Self> {
        let pairs: Vec<_> = cep
            .pairs()
            .map(|(i, j, p)| (i, j, p, cfg.weight_scheme.weight(p)))
            .filter(|t| t.3 > 0.0)
            .collect();
        if pairs.is_empty() {
            return Err(Error::invalid("every CEP pair is missing; nothing to fit"));
        }
        Ok(Self {
            pairs,
            dim: cep.dim(),
        })
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }
}

impl GammaLoss for WlsLoss {
    fn value(&self, gamma: &DMatrix<f64>) -> Result<f64> {
        Ok(self
            .pairs
            .iter()
            .map(|&(i, j, p, w)| wls_pair_term(theoretical_cep(gamma[(i, j)]), p, w))
            .sum())
    }

    fn value_and_adjoint(&self, gamma: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let mut adj = DMatrix::zeros(self.dim, self.dim);
        let mut value = 0.0;
        for &(i, j, p, w) in &self.pairs {
            let g = gamma[(i, j)];
            if !(g > 0.0) {
                return Err(Error::Numeric(format!(
                    "sites {i} and {j} coincide after warping"
                )));
            }
            let pi = theoretical_cep(g);
            value += wls_pair_term(pi, p, w);
            adj[(i, j)] += 2.0 * w * (pi - p) * theoretical_cep_derivative(g);
        }
        Ok((value, adj))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// WLS loss of the model `(ψ, stack)` on `sites`.
pub fn wls_loss(
    psi: &VariogramParams,
    stack: &WarpStack,
    sites: &LocationSet,
    cep: &CepMatrix,
    cfg: &WlsConfig,
) -> Result<f64> {
    evaluate(&WlsLoss::new(cep, cfg)?, psi, stack, sites.coords())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dependence::gamma_matrix;
    use crate::loss::evaluate_with_gradient;
    use crate::warp::Architecture;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cep_from(pi: DMatrix<f64>) -> CepMatrix {
        let d = pi.nrows();
        CepMatrix {
            pi_hat: pi,
            n_joint: DMatrix::zeros(d, d),
            n_marginal: vec![1.0; d],
            n_events: 1,
        }
    }

    #[test]
    fn hand_pair() {
        assert_abs_diff_eq!(wls_pair_term(0.3, 0.5, 1.0 / 1.5), 0.04 / 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(wls_pair_term(0.3, 0.5, 1.0 / 1.5), 0.02667, epsilon = 1e-5);
    }

    #[test]
    fn zero_at_model_cep() {
        let sites = LocationSet::new(vec![[0.0, 0.0], [1.0, 0.3], [0.2, 1.0], [0.7, 0.8]]).unwrap();
        let psi = VariogramParams::new(0.4, 1.2).unwrap();
        let stack = WarpStack::identity();
        let warped = stack.forward(sites.coords()).unwrap().coords;
        let pi = gamma_matrix(&warped, &psi).map(theoretical_cep);
        let cep = cep_from(pi);
        let l = wls_loss(&psi, &stack, &sites, &cep, &WlsConfig::default()).unwrap();
        assert!(l.abs() < 1e-28);
        let other = VariogramParams::new(0.3, 1.2).unwrap();
        assert!(wls_loss(&other, &stack, &sites, &cep, &WlsConfig::default()).unwrap() > 0.0);
    }

    #[test]
    fn all_missing_is_an_error() {
        let cep = cep_from(DMatrix::from_element(3, 3, f64::NAN));
        assert!(WlsLoss::new(&cep, &WlsConfig::default()).is_err());
    }

    #[test]
    fn gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let stack = Architecture::preset(1).unwrap().random(&mut rng).unwrap();
        let coords: Vec<_> = (0..5)
            .map(|k| [(k as f64 * 1.3).sin(), (k as f64 * 0.7).cos()])
            .collect();
        let pi = DMatrix::from_fn(5, 5, |i, j| if i == j { 1.0 } else { 0.2 + 0.05 * (i + j) as f64 });
        let loss = WlsLoss::new(&cep_from(pi), &WlsConfig::default()).unwrap();
        let raw = VariogramParams::new(0.3, 0.9).unwrap().to_raw();
        let (v, g) = evaluate_with_gradient(&loss, raw, &stack, &coords).unwrap();
        let f = |raw: [f64; 2], s: &WarpStack| {
            evaluate(&loss, &VariogramParams::from_raw(raw), s, &coords).unwrap()
        };
        assert_abs_diff_eq!(v, f(raw, &stack), epsilon = 1e-14);
        let h = 1e-6;
        for k in 0..2 {
            let (mut a, mut b) = (raw, raw);
            a[k] += h;
            b[k] -= h;
            let fd = (f(a, &stack) - f(b, &stack)) / (2.0 * h);
            assert!((fd - g.psi[k]).abs() <= 1e-4 * fd.abs().max(1e-6), "psi {k}");
        }
        let w0 = stack.raw_weights();
        for k in 0..w0.len() {
            let mut s = stack.clone();
            let mut w = w0.clone();
            w[k] += h;
            s.set_raw_weights(&w);
            let up = f(raw, &s);
            w[k] -= 2.0 * h;
            s.set_raw_weights(&w);
            let fd = (up - f(raw, &s)) / (2.0 * h);
            assert!((fd - g.weights[k]).abs() <= 1e-4 * fd.abs().max(1e-6), "w {k}: {fd} vs {}", g.weights[k]);
        }
    }
}
