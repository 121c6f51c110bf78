//! Adam with bias correction, one parameter block per call.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates of one block.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// Updates `params` in place; a non-finite gradient leaves everything
/// untouched and names `block` in the error.
pub fn adam_step(
    params: &mut [f64],
    state: &mut AdamState,
    grad: &[f64],
    lr: f64,
    cfg: &AdamConfig,
    block: &str,
) -> Result<()> {
    assert_eq!(params.len(), grad.len(), "gradient length mismatch");
    if state.m.len() != params.len() {
        *state = AdamState::new(params.len());
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            block: block.to_string(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for k in 0..params.len() {
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * grad[k];
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        params[k] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn first_step() {
        let mut p = [0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &mut s, &[1.0], 0.01, &AdamConfig::default(), "psi").unwrap();
        assert_abs_diff_eq!(p[0], -0.01 / (1.0 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn zero_gradient_stays() {
        let mut p = [0.3, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &mut s, &[0.0, 0.0], 0.01, &AdamConfig::default(), "w").unwrap();
        assert_eq!(p, [0.3, -2.0]);
    }

    #[test]
    fn descends_a_quadratic() {
        let f = |x: &[f64; 2]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 0.5).powi(2);
        let mut p = [0.0, 0.0];
        let before = f(&p);
        let mut s = AdamState::default();
        for _ in 0..2 {
            let g = [2.0 * (p[0] - 1.0), 6.0 * (p[1] + 0.5)];
            adam_step(&mut p, &mut s, &g, 0.1, &AdamConfig::default(), "q").unwrap();
        }
        assert!(f(&p) < before);
    }

    #[test]
    fn nan_names_the_block() {
        let mut p = [0.0];
        let mut s = AdamState::new(1);
        let err = adam_step(&mut p, &mut s, &[f64::NAN], 0.01, &AdamConfig::default(), "theta").unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(p, [0.0]);
        assert_eq!(s.t, 0);
    }
}
