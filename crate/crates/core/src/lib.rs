//! Covariate-conditional net benefit separation (NBS).
//!
//! The NBS at willingness-to-pay `λ` is the probability that a treated
//! subject's individual net benefit `λZ − Y` exceeds that of an independent
//! control subject. This crate estimates it conditional on effect-modifier
//! covariates `X` from observational cost-effectiveness data:
//!
//! 1. outcome models are fitted for survival (Weibull) and cost (log-normal or
//!    zero-inflated), with inverse-probability-of-censoring weights for the
//!    cost fit ([`survival`], [`cost`]);
//! 2. Monte Carlo standardization draws treated and control pseudo-populations
//!    over the empirical confounder distribution ([`standardization`]);
//! 3. placement values against control survivor quantiles are regressed on `X`
//!    with a probit link and integrated over `ω ∈ (0, 1)` ([`nbs`]);
//! 4. the whole procedure is bootstrapped for inference ([`inference`]).
//!
//! [`sim`] regenerates the simulation studies used to validate the estimator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod data;
pub mod error;
pub mod formula;
pub mod inference;
pub mod linalg;
pub mod models;
pub mod nbs;
pub mod normal;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod standardization;
pub mod survival;

pub use data::{compute_inb, Arm, CostEffectivenessRecord, Dataset, Schema};
pub use error::{Error, Result};
pub use formula::Formula;
pub use pipeline::{PipelineEstimate, PipelineSpec};
