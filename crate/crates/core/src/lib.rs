//! Synthetic controls for survival outcomes.
//!
//! This crate builds weighted donor composites ("synthetic controls") for
//! treated subjects in survival data and evaluates how well they reproduce
//! untreated outcomes:
//!
//! - [`data`]: subjects, cohorts, CSV loading, and covariate z-scoring
//! - [`weights`]: simplex weight vectors over donor pools
//! - [`solver`]: projected-gradient weight solvers with variance and
//!   overlap penalties
//! - [`estimators`]: synthetic outcomes on the natural and log time scales,
//!   with censoring rules for composite units
//! - [`dgp`]: AFT data-generating processes, closed-form bias oracles, and
//!   stylized scenarios
//! - [`survival`]: Kaplan-Meier curves, KS distance, restricted-mean
//!   survival, and Cox regression
//! - [`experiment`]: biased resampling, negative-control evaluation runs,
//!   and penalty cross-validation

pub mod data;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod rng;
pub mod solver;
pub mod survival;
pub mod weights;

pub use error::{Error, Result};
