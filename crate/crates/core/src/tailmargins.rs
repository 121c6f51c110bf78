//! Marginal tails: GPD fits above site-wise thresholds, the semiparametric
//! CDF and the transform to the standard Pareto scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{ks_one_sample, quantile_sorted};

/// Below this `|ξ|` the exponential limit of the GPD is used.
pub const XI_ZERO: f64 = 1e-8;
pub const MIN_EXCESSES: usize = 30;
pub const DEFAULT_THRESHOLD_QUANTILE: f64 = 0.95;

/// `G(y) = 1 - (1 + ξ y / τ)_+^{-1/ξ}`.
pub fn gpd_cdf(y: f64, tau: f64, xi: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if xi.abs() < XI_ZERO {
        return -(-y / tau).exp_m1();
    }
    let t = 1.0 + xi * y / tau;
    if t <= 0.0 {
        return 1.0;
    }
    -((-1.0 / xi) * t.ln()).exp_m1()
}

pub fn gpd_quantile(p: f64, tau: f64, xi: f64) -> f64 {
    let l = (-p).ln_1p();
    if xi.abs() < XI_ZERO {
        -tau * l
    } else {
        tau * (-xi * l).exp_m1() / xi
    }
}

/// Negative log-likelihood of excesses; `+inf` outside the support.
pub fn gpd_neg_log_likelihood(excesses: &[f64], tau: f64, xi: f64) -> f64 {
    if !(tau > 0.0) {
        return f64::INFINITY;
    }
    let n = excesses.len() as f64;
    if xi.abs() < XI_ZERO {
        return n * tau.ln() + excesses.iter().sum::<f64>() / tau;
    }
    let mut s = 0.0;
    for &y in excesses {
        let t = 1.0 + xi * y / tau;
        if t <= 0.0 {
            return f64::INFINITY;
        }
        s += t.ln();
    }
    n * tau.ln() + (1.0 + 1.0 / xi) * s
}

/// Fitted tail of one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    /// Threshold in data units.
    pub threshold: f64,
    pub tau: f64,
    pub xi: f64,
    pub n_excess: usize,
    pub neg_log_likelihood: f64,
    pub ks_distance: f64,
    pub ks_p_value: f64,
    pub converged: bool,
}

impl GpdFit {
    pub fn cdf(&self, excess: f64) -> f64 {
        gpd_cdf(excess, self.tau, self.xi)
    }
}

/// Minimizes `f` with the Nelder–Mead simplex; returns `(x, f(x), converged)`.
fn nelder_mead<const N: usize>(
    f: impl Fn(&[f64; N]) -> f64,
    x0: [f64; N],
    step: [f64; N],
    tol: f64,
    max_iter: usize,
) -> ([f64; N], f64, bool) {
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((x0, f(&x0)));
    for i in 0..N {
        let mut x = x0;
        x[i] += step[i];
        simplex.push((x, f(&x)));
    }
    let combine = |a: &[f64; N], b: &[f64; N], t: f64| -> [f64; N] {
        let mut out = [0.0; N];
        for k in 0..N {
            out[k] = a[k] + t * (b[k] - a[k]);
        }
        out
    };
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[N].1);
        if (worst - best).abs() <= tol * (best.abs() + tol) {
            return (simplex[0].0, best, true);
        }
        let mut centroid = [0.0; N];
        for (x, _) in &simplex[..N] {
            for k in 0..N {
                centroid[k] += x[k] / N as f64;
            }
        }
        let xw = simplex[N].0;
        let xr = combine(&centroid, &xw, -1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = combine(&centroid, &xw, -2.0);
            let fe = f(&xe);
            simplex[N] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (xr, fr);
        } else {
            let xc = combine(&centroid, &xw, 0.5);
            let fc = f(&xc);
            if fc < simplex[N].1 {
                simplex[N] = (xc, fc);
            } else {
                let x0 = simplex[0].0;
                for s in simplex.iter_mut().skip(1) {
                    s.0 = combine(&x0, &s.0, 0.5);
                    s.1 = f(&s.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (simplex[0].0, simplex[0].1, false)
}

/// Maximum-likelihood GPD fit over `(log τ, ξ)` from moment starting values.
/// The returned `threshold` is 0; callers fitting raw data set it.
pub fn fit_gpd(excesses: &[f64]) -> Result<GpdFit> {
    if excesses.len() < MIN_EXCESSES {
        return Err(Error::invalid(format!(
            "GPD fit needs at least {MIN_EXCESSES} excesses, got {}",
            excesses.len()
        )));
    }
    if let Some(v) = excesses.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::invalid(format!("excess {v} is not a finite nonnegative value")));
    }
    let n = excesses.len() as f64;
    let mean = excesses.iter().sum::<f64>() / n;
    let var = excesses.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::invalid("all excesses are equal"));
    }
    let ratio = mean * mean / var;
    let xi0 = (0.5 * (1.0 - ratio)).clamp(-0.45, 0.45);
    let tau0 = (0.5 * mean * (1.0 + ratio)).max(1e-12 * mean.max(1e-300));
    let objective = |p: &[f64; 2]| gpd_neg_log_likelihood(excesses, p[0].exp(), p[1]);
    let mut start = [tau0.ln(), xi0];
    let mut result = None;
    // Restart from the previous optimum until the simplex settles.
    for _ in 0..4 {
        let (x, fx, conv) = nelder_mead(objective, start, [0.1, 0.05], 1e-12, 2000);
        let settled = result
            .map(|(_, f_prev, _): ([f64; 2], f64, bool)| (f_prev - fx).abs() <= 1e-10 * fx.abs().max(1.0))
            .unwrap_or(false);
        result = Some((x, fx, conv));
        if conv && settled {
            break;
        }
        start = x;
    }
    let (x, fx, converged) = result.unwrap();
    if !converged || !fx.is_finite() {
        return Err(Error::Numeric(format!(
            "GPD likelihood optimization did not converge (tau = {}, xi = {}, nll = {fx})",
            x[0].exp(),
            x[1]
        )));
    }
    let (tau, xi) = (x[0].exp(), x[1]);
    let pit: Vec<f64> = excesses.iter().map(|&y| gpd_cdf(y, tau, xi)).collect();
    let (ks_distance, ks_p_value) = ks_test(&pit)?;
    Ok(GpdFit {
        threshold: 0.0,
        tau,
        xi,
        n_excess: excesses.len(),
        neg_log_likelihood: fx,
        ks_distance,
        ks_p_value,
        converged,
    })
}

/// One-sample KS test against Uniform(0, 1).
pub fn ks_test(u_values: &[f64]) -> Result<(f64, f64)> {
    ks_one_sample(u_values, |x| x.clamp(0.0, 1.0))
}

/// Rank-based CDF `#{v <= y} / (n + 1)` of a sorted sample.
pub fn empirical_cdf(sorted: &[f64], y: f64) -> f64 {
    let rank = sorted.partition_point(|&v| v <= y);
    rank as f64 / (sorted.len() as f64 + 1.0)
}

/// `X = 1 / (1 - F)`.
pub fn pareto_from_cdf(f: f64) -> f64 {
    1.0 / (1.0 - f)
}

/// Semiparametric marginal model of one site: empirical below the
/// threshold, GPD above it. Without a tail fit the empirical CDF is used
/// throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteMargin {
    pub threshold: f64,
    pub fit: Option<GpdFit>,
    sorted: Vec<f64>,
}

impl SiteMargin {
    /// Fits the tail above the `q` empirical quantile; a failed GPD fit is
    /// returned as the error together with the empirical-only model.
    pub fn fit(values: &[f64], q: f64) -> std::result::Result<Self, (Self, Error)> {
        let mut sorted: Vec<f64> = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let empirical = |sorted: Vec<f64>, threshold| SiteMargin {
            threshold,
            fit: None,
            sorted,
        };
        if sorted.is_empty() {
            return Err((empirical(sorted, f64::NAN), Error::invalid("site has no observations")));
        }
        let threshold = quantile_sorted(&sorted, q);
        let excesses: Vec<f64> = sorted
            .iter()
            .filter(|&&v| v > threshold)
            .map(|&v| v - threshold)
            .collect();
        match fit_gpd(&excesses) {
            Ok(mut fit) => {
                fit.threshold = threshold;
                Ok(SiteMargin {
                    threshold,
                    fit: Some(fit),
                    sorted,
                })
            }
            Err(e) => Err((empirical(sorted, threshold), e)),
        }
    }

    pub fn n(&self) -> usize {
        self.sorted.len()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match &self.fit {
            Some(fit) if y > self.threshold => {
                let fu = empirical_cdf(&self.sorted, self.threshold);
                fu + (1.0 - fu) * fit.cdf(y - self.threshold)
            }
            _ => empirical_cdf(&self.sorted, y),
        }
    }

    pub fn to_pareto_scale(&self, ys: &[f64]) -> Vec<f64> {
        ys.iter().map(|&y| pareto_from_cdf(self.cdf(y))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gpd_sample(n: usize, tau: f64, xi: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| gpd_quantile(rng.random::<f64>(), tau, xi)).collect()
    }

    #[test]
    fn cdf_values() {
        assert_eq!(gpd_cdf(0.0, 1.0, 0.3), 0.0);
        assert_abs_diff_eq!(gpd_cdf(1.0, 1.0, 0.0), 1.0 - (-1f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(gpd_cdf(2.0, 1.0, 0.5), 0.75, epsilon = 1e-15);
        // Beyond the upper endpoint -τ/ξ.
        assert_eq!(gpd_cdf(3.0, 1.0, -0.5), 1.0);
    }

    #[test]
    fn continuity_at_zero_shape() {
        for y in [0.01, 0.5, 1.0, 3.0, 20.0] {
            assert!((gpd_cdf(y, 1.3, 1e-9) - gpd_cdf(y, 1.3, 0.0)).abs() < 1e-8);
            assert!((gpd_cdf(y, 1.3, -1e-9) - gpd_cdf(y, 1.3, 0.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn recovers_parameters() {
        let fit = fit_gpd(&gpd_sample(2000, 1.0, 0.2, 42)).unwrap();
        assert!((fit.tau - 1.0).abs() < 0.1, "tau {}", fit.tau);
        assert!((fit.xi - 0.2).abs() < 0.05, "xi {}", fit.xi);
        assert!(fit.converged);
    }

    #[test]
    fn exponential_gives_zero_shape() {
        let fit = fit_gpd(&gpd_sample(3000, 2.0, 0.0, 7)).unwrap();
        assert!(fit.xi.abs() < 0.05, "xi {}", fit.xi);
        assert!((fit.tau - 2.0).abs() < 0.15);
    }

    #[test]
    fn negative_shape_respects_support() {
        let ys = gpd_sample(2000, 1.0, -0.3, 3);
        let fit = fit_gpd(&ys).unwrap();
        let ymax = ys.iter().copied().fold(0.0, f64::max);
        assert!(fit.xi < 0.0);
        assert!(ymax <= -fit.tau / fit.xi + 1e-9);
    }

    #[test]
    fn fit_errors() {
        assert!(fit_gpd(&[1.0; 29]).is_err());
        assert!(fit_gpd(&[1.0; 100]).is_err());
    }

    #[test]
    fn pareto_scale_definitions() {
        assert_abs_diff_eq!(pareto_from_cdf(0.99), 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pareto_from_cdf(0.5), 2.0, epsilon = 1e-15);
        let sorted: Vec<f64> = (1..=99).map(f64::from).collect();
        assert_abs_diff_eq!(pareto_from_cdf(empirical_cdf(&sorted, 99.0)), 100.0, epsilon = 1e-9);
    }

    #[test]
    fn ks_cases() {
        let (d, _) = ks_test(&[0.5; 10]).unwrap();
        assert_abs_diff_eq!(d, 0.5, epsilon = 1e-15);
        assert!(ks_test(&[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2000);
        let u: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        assert!(ks_test(&u).unwrap().1 > 0.05);
    }

    #[test]
    fn site_margin_tail_and_ties() {
        let ys = gpd_sample(4000, 2.0, 0.1, 9);
        let m = SiteMargin::fit(&ys, 0.95).unwrap();
        let x = m.to_pareto_scale(&[ys[0], ys[0], m.threshold, m.threshold * 3.0]);
        assert_eq!(x[0], x[1]);
        assert!(x.iter().all(|&v| v >= 1.0));
        // Tail probability of the threshold is ~5%, so X(u) ~ 20.
        assert!((x[2] - 20.0).abs() < 0.5);
        assert!(x[3] > x[2]);
    }

    #[test]
    fn constant_series_falls_back() {
        let (m, _) = SiteMargin::fit(&[3.0; 200], 0.95).unwrap_err();
        assert!(m.fit.is_none());
    }

    proptest! {
        #[test]
        fn quantile_round_trip(tau in 0.1f64..10.0, xi in -0.4f64..0.8, p in 0.001f64..0.999) {
            let y = gpd_quantile(p, tau, xi);
            let back = gpd_quantile(gpd_cdf(y, tau, xi), tau, xi);
            prop_assert!((back - y).abs() <= 1e-9 * y.max(1.0));
        }

        #[test]
        fn transform_is_monotone(seed in 0u64..200) {
            let ys = gpd_sample(600, 1.0, 0.2, seed);
            let m = SiteMargin::fit(&ys, 0.95).unwrap();
            let mut sorted = ys.clone();
            sorted.sort_by(f64::total_cmp);
            let x = m.to_pareto_scale(&sorted);
            for w in x.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
        }
    }
}
