//! Nonstationary spatial extremal dependence with deep compositional
//! warpings of Brown–Resnick r-Pareto processes.
//!
//! The crate is organised along the modelling pipeline:
//!
//! - [`tailmargins`]: GPD tails and the transform to the unit Pareto scale;
//! - [`risk`], [`empirics`]: risk functionals, r-exceedances and empirical
//!   conditional exceedance probabilities (CEPs);
//! - [`geometry`], [`warp`]: site sets and bijective warpings;
//! - [`dependence`]: power variogram, Brown–Resnick matrix, limiting CEPs;
//! - [`loss`], [`fit`]: weighted least squares and gradient score matching
//!   objectives, Adam block-coordinate fitting and the bootstrap;
//! - [`simulate`]: exact and rejection samplers of r-Pareto processes;
//! - [`cli`]: the file-based pipeline behind the `rpareto-warp` binary.

pub mod cli;
pub mod data;
pub mod dependence;
pub mod empirics;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod loss;
pub mod risk;
pub mod simulate;
pub mod stats;
pub mod tailmargins;
pub mod warp;

pub use error::{Error, Result};
