//! Block-coordinate Adam fitting of `(ψ, Θ, W)` and the nonparametric
//! bootstrap.

pub mod adam;
mod bootstrap;

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dependence::VariogramParams;
use crate::empirics::{exceedance_cep, ExceedanceSet, WeightScheme};
use crate::error::{Error, Result};
use crate::geometry::{AffineRecord, LocationSet, Point};
use crate::loss::{evaluate_with_gradient, GammaLoss, GsmLoss, LossGradient, Regularizer, TraceRow, WlsConfig, WlsLoss};
use crate::risk::RiskSpec;
use crate::warp::{Architecture, WarpStack};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use bootstrap::{bootstrap, BootstrapConfig, BootstrapMode, BootstrapResult, PairSd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Wls,
    #[default]
    Gsm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Psi,
    Theta,
    Weights,
}

impl Block {
    pub fn name(&self) -> &'static str {
        match self {
            Block::Psi => "psi",
            Block::Theta => "theta",
            Block::Weights => "weights",
        }
    }
}

fn default_schedule() -> Vec<Block> {
    vec![Block::Psi, Block::Theta, Block::Weights]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub loss: LossKind,
    pub lr_psi: f64,
    pub lr_warp: f64,
    pub adam: AdamConfig,
    pub max_steps: usize,
    /// Stop when the relative loss change over `window` steps drops below.
    pub tolerance: f64,
    pub window: usize,
    pub schedule: Vec<Block>,
    pub alpha: f64,
    pub seed: u64,
    pub init_psi: VariogramParams,
    pub weight_scheme: WeightScheme,
    /// Consecutive rejected steps (pole or factorization failures) before
    /// the optimizer gives up.
    pub max_rejections: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Gsm,
            lr_psi: 0.01,
            lr_warp: 0.005,
            adam: AdamConfig::default(),
            max_steps: 10_000,
            tolerance: 1e-7,
            window: 50,
            schedule: default_schedule(),
            alpha: 1.0,
            seed: 0,
            init_psi: VariogramParams {
                range: 0.5,
                smoothness: 1.0,
            },
            weight_scheme: WeightScheme::default(),
            max_rejections: 50,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |pointer: &str, message: String| Error::Config {
            pointer: pointer.into(),
            message,
        };
        if !(self.lr_psi > 0.0) {
            return Err(bad("/lr_psi", format!("must be positive, got {}", self.lr_psi)));
        }
        if !(self.lr_warp > 0.0) {
            return Err(bad("/lr_warp", format!("must be positive, got {}", self.lr_warp)));
        }
        if self.schedule.is_empty() {
            return Err(bad("/schedule", "needs at least one block".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(bad("/alpha", format!("must be nonnegative, got {}", self.alpha)));
        }
        VariogramParams::new(self.init_psi.range, self.init_psi.smoothness)
            .map_err(|e| bad("/init_psi", e.to_string()))?;
        Ok(())
    }
}

/// Context recorded alongside a fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub loss: LossKind,
    pub risk: Option<RiskSpec>,
    pub u: Option<f64>,
    pub u_marginal: Option<f64>,
    pub q_risk: Option<f64>,
    pub q_marginal: Option<f64>,
    pub n_events: usize,
    pub seed: u64,
    /// Site 0 is the anchor of the intensity.
    pub site_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub psi: VariogramParams,
    pub psi_raw: [f64; 2],
    pub stack: WarpStack,
    pub loss: f64,
    pub penalty: f64,
    pub converged: bool,
    pub steps: usize,
    pub rejected_steps: usize,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
    /// Rescale records of the training sites, for warping further sites.
    pub records: Vec<AffineRecord>,
    pub warped: Vec<Point>,
    pub metadata: FitMetadata,
}

impl FitResult {
    /// Warps sites in the original training coordinates.
    pub fn warp(&self, coords: &[Point]) -> Result<Vec<Point>> {
        self.stack.apply_with_records(coords, &self.records)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Limiting model CEPs between the given warped sites.
    pub fn model_cep(&self, warped: &[Point]) -> DMatrix<f64> {
        crate::dependence::gamma_matrix(warped, &self.psi).map(crate::dependence::theoretical_cep)
    }
}

/// The fitting objective built from data.
#[derive(Debug, Clone)]
pub enum Objective {
    Wls(WlsLoss),
    Gsm(GsmLoss),
}

impl Objective {
    pub fn from_exceedances(kind: LossKind, set: &ExceedanceSet, scheme: WeightScheme) -> Result<Self> {
        Ok(match kind {
            LossKind::Wls => Objective::Wls(WlsLoss::new(
                &exceedance_cep(set),
                &WlsConfig {
                    weight_scheme: scheme,
                },
            )?),
            LossKind::Gsm => Objective::Gsm(GsmLoss::from_exceedances(set)?),
        })
    }
}

impl GammaLoss for Objective {
    fn value(&self, gamma: &DMatrix<f64>) -> Result<f64> {
        match self {
            Objective::Wls(l) => l.value(gamma),
            Objective::Gsm(l) => l.value(gamma),
        }
    }

    fn value_and_adjoint(&self, gamma: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        match self {
            Objective::Wls(l) => l.value_and_adjoint(gamma),
            Objective::Gsm(l) => l.value_and_adjoint(gamma),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Objective::Wls(l) => l.dim(),
            Objective::Gsm(l) => l.dim(),
        }
    }
}

/// Step failures that reject the proposed parameters instead of aborting.
fn is_recoverable(e: &Error) -> bool {
    matches!(e, Error::MobiusPole { .. } | Error::Cholesky { .. } | Error::Numeric(_))
}

struct Evaluated {
    loss: f64,
    penalty: f64,
    grad: LossGradient,
}

fn eval_state<L: GammaLoss + ?Sized>(
    loss: &L,
    psi_raw: [f64; 2],
    stack: &WarpStack,
    coords: &[Point],
    reg: &Regularizer,
) -> Result<Evaluated> {
    let (value, mut grad) = evaluate_with_gradient(loss, psi_raw, stack, coords)?;
    let penalty = reg.penalty(stack);
    for (g, r) in grad.weights.iter_mut().zip(reg.gradient(stack)) {
        *g += r;
    }
    Ok(Evaluated {
        loss: value,
        penalty,
        grad,
    })
}

/// Minimizes `loss` over `ψ` and the unfrozen parameters of `stack`,
/// starting from `init_psi` and `stack`. Sites are in their original
/// coordinates; the stack rescales them first.
pub fn fit<L: GammaLoss + ?Sized>(
    sites: &LocationSet,
    loss: &L,
    stack: WarpStack,
    init_psi: VariogramParams,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    let coords = sites.coords();
    let reg = Regularizer::new(cfg.alpha)?;
    let mut psi_raw = init_psi.to_raw();
    let mut stack = stack;
    let mut cur = eval_state(loss, psi_raw, &stack, coords, &reg)?;
    if !cur.loss.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            value: cur.loss,
        });
    }
    let blocks: Vec<Block> = cfg
        .schedule
        .iter()
        .copied()
        .filter(|b| match b {
            Block::Psi => true,
            Block::Theta => stack.n_theta() > 0,
            Block::Weights => stack.n_weights() > 0,
        })
        .collect();
    let mut states = [AdamState::new(2), AdamState::new(stack.n_theta()), AdamState::new(stack.n_weights())];
    let mut best = (cur.loss + cur.penalty, psi_raw, stack.clone(), cur.loss, cur.penalty);
    let mut trace = Vec::new();
    let mut history = vec![cur.loss + cur.penalty];
    let (mut converged, mut rejected, mut consecutive) = (false, 0usize, 0usize);
    let mut steps = 0;
    for step in 0..cfg.max_steps {
        steps = step + 1;
        if blocks.is_empty() {
            break;
        }
        let block = blocks[step % blocks.len()];
        let (old_psi, old_stack) = (psi_raw, stack.clone());
        match block {
            Block::Psi => {
                adam_step(&mut psi_raw, &mut states[0], &cur.grad.psi, cfg.lr_psi, &cfg.adam, "psi")?
            }
            Block::Theta => {
                let mut t = stack.theta();
                adam_step(&mut t, &mut states[1], &cur.grad.theta, cfg.lr_warp, &cfg.adam, "theta")?;
                stack.set_theta(&t);
            }
            Block::Weights => {
                let mut w = stack.raw_weights();
                adam_step(&mut w, &mut states[2], &cur.grad.weights, cfg.lr_warp, &cfg.adam, "weights")?;
                stack.set_raw_weights(&w);
            }
        }
        match eval_state(loss, psi_raw, &stack, coords, &reg) {
            Ok(next) if next.loss.is_finite() => {
                cur = next;
                consecutive = 0;
            }
            Ok(next) => {
                return Err(Error::Divergence {
                    step: steps,
                    value: next.loss,
                })
            }
            Err(e) if is_recoverable(&e) => {
                psi_raw = old_psi;
                stack = old_stack;
                let k = block as usize;
                let n = states[k].m.len();
                states[k] = AdamState::new(n);
                rejected += 1;
                consecutive += 1;
                if consecutive >= cfg.max_rejections {
                    break;
                }
                continue;
            }
            Err(e) => return Err(e),
        }
        debug_assert!({
            let p = VariogramParams::from_raw(psi_raw);
            p.range > 0.0 && p.smoothness > 0.05 && p.smoothness < 1.95
        });
        trace.push(TraceRow {
            step: steps,
            block: block.name().to_string(),
            loss: cur.loss,
            penalty: cur.penalty,
        });
        let total = cur.loss + cur.penalty;
        if total < best.0 {
            best = (total, psi_raw, stack.clone(), cur.loss, cur.penalty);
        }
        history.push(total);
        if history.len() > cfg.window {
            let then = history[history.len() - 1 - cfg.window];
            if (total - then).abs() <= cfg.tolerance * then.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    let (_, psi_raw, stack, loss_value, penalty) = best;
    let out = stack.forward(coords)?;
    Ok(FitResult {
        psi: VariogramParams::from_raw(psi_raw),
        psi_raw,
        stack,
        loss: loss_value,
        penalty,
        converged,
        steps,
        rejected_steps: rejected,
        trace,
        records: out.records,
        warped: out.coords,
        metadata: FitMetadata {
            seed: cfg.seed,
            site_order: (0..sites.len()).map(|i| sites.label(i)).collect(),
            ..Default::default()
        },
    })
}

/// Builds `architecture` near the identity (seeded) and fits it to an
/// exceedance set with the loss named in `cfg`.
pub fn fit_exceedances(
    sites: &LocationSet,
    set: &ExceedanceSet,
    architecture: &Architecture,
    cfg: &FitConfig,
) -> Result<FitResult> {
    if set.dim() != sites.len() {
        return Err(Error::invalid(format!(
            "{} sites but events have {} columns",
            sites.len(),
            set.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let stack = architecture.build(&mut rng)?;
    let objective = Objective::from_exceedances(cfg.loss, set, cfg.weight_scheme)?;
    let mut result = fit(sites, &objective, stack, cfg.init_psi, cfg)?;
    result.metadata = metadata_for(set, cfg, sites);
    Ok(result)
}

pub(crate) fn metadata_for(set: &ExceedanceSet, cfg: &FitConfig, sites: &LocationSet) -> FitMetadata {
    FitMetadata {
        loss: cfg.loss,
        risk: Some(set.risk),
        u: Some(set.u),
        u_marginal: Some(set.u_marginal),
        q_risk: Some(set.q_risk),
        q_marginal: Some(set.q_marginal),
        n_events: set.len(),
        seed: cfg.seed,
        site_order: (0..sites.len()).map(|i| sites.label(i)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirics::{extract_exceedances, ExceedanceOptions};
    use crate::simulate::{simulate, SimConfig};

    fn small_problem(seed: u64) -> (LocationSet, ExceedanceSet) {
        let coords: Vec<Point> = (0..12)
            .map(|k| {
                let t = k as f64;
                [(t * 0.77).sin() * 0.5, (t * 1.31).cos() * 0.5]
            })
            .collect();
        let sites = LocationSet::new(coords).unwrap();
        let cfg = SimConfig {
            sites: sites.clone(),
            psi: VariogramParams::new(0.3, 1.0).unwrap(),
            truth: None,
            risk: RiskSpec::Site { site: 0 },
            n: 1000,
            seed,
            max_rejection_tries: 1000,
        };
        let x = simulate(&cfg).unwrap().data;
        let set = extract_exceedances(&x, &cfg.risk, 0.9, 0.9, &ExceedanceOptions::default()).unwrap();
        (sites, set)
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let (sites, set) = small_problem(1);
        let cfg = FitConfig {
            max_steps: 0,
            ..Default::default()
        };
        let r = fit_exceedances(&sites, &set, &Architecture::preset(0).unwrap(), &cfg).unwrap();
        assert_eq!(r.psi_raw, cfg.init_psi.to_raw());
        assert!(r.trace.is_empty());
    }

    #[test]
    fn fit_reduces_loss_and_is_deterministic() {
        let (sites, set) = small_problem(2);
        let cfg = FitConfig {
            max_steps: 300,
            ..Default::default()
        };
        let arch = Architecture::single_rbf();
        let a = fit_exceedances(&sites, &set, &arch, &cfg).unwrap();
        let b = fit_exceedances(&sites, &set, &arch, &cfg).unwrap();
        assert_eq!(a, b);
        let init = fit_exceedances(&sites, &set, &arch, &FitConfig { max_steps: 0, ..cfg.clone() }).unwrap();
        assert!(a.loss + a.penalty < init.loss + init.penalty);
        // The returned state is the best one seen.
        let best = a.trace.iter().map(|r| r.loss + r.penalty).fold(init.loss + init.penalty, f64::min);
        assert_eq!(best, a.loss + a.penalty);
        assert!(a.psi.smoothness > 0.05 && a.psi.smoothness < 1.95);
    }

    #[test]
    fn wls_all_missing_fails() {
        let (sites, mut set) = small_problem(3);
        set.u_marginal = 1e12;
        let cfg = FitConfig {
            loss: LossKind::Wls,
            ..Default::default()
        };
        assert!(fit_exceedances(&sites, &set, &Architecture::preset(0).unwrap(), &cfg).is_err());
    }

    #[test]
    fn config_validation_points_at_field() {
        let cfg = FitConfig {
            lr_psi: 0.0,
            ..Default::default()
        };
        match cfg.validate().unwrap_err() {
            Error::Config { pointer, .. } => assert_eq!(pointer, "/lr_psi"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn holdout_warp_uses_training_records() {
        let (sites, set) = small_problem(4);
        let cfg = FitConfig {
            max_steps: 30,
            ..Default::default()
        };
        let r = fit_exceedances(&sites, &set, &Architecture::single_rbf(), &cfg).unwrap();
        let again = r.warp(sites.coords()).unwrap();
        for (a, b) in again.iter().zip(&r.warped) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
        let json = serde_json::to_string(&r).unwrap();
        let back: FitResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back.psi, r.psi);
    }
}
