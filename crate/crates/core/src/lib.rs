//! Time-to-event inference with misclassified event indicators.
//!
//! A reference cohort with both coded (`Δ`) and adjudicated (`C`) causes of
//! death trains a BART probit model for `P(C = 1 | Δ, covariates, trajectory
//! features)`. Multiply-adjudicated event sets drawn from it for a target
//! cohort are each fitted with a Bayesian joint longitudinal–survival model,
//! and the fits are pooled with a Monte Carlo standard error.
//!
//! Modules, bottom-up:
//!
//! * [`cohort`]: data model, file I/O, splitting, confusion metrics
//! * [`legendre`]: shifted Legendre trajectories and value/slope/area features
//! * [`dpm`]: Dirichlet-process-mixture risk-factor sampler
//! * [`bart`]: BART probit classifier
//! * [`joint`]: joint longitudinal–survival model and its NUTS sampler
//! * [`pipeline`]: the multiple-adjudication procedure and its pooling rules
//! * [`sim`]: simulation study harness

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bart;
pub mod cohort;
pub mod dpm;
pub mod error;
pub mod joint;
pub mod kvconfig;
pub mod legendre;
pub mod pipeline;
pub mod seed;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
