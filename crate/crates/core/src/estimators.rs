//! Synthetic outcomes and composite control units.
//!
//! Given solved weights, a synthetic outcome is either the weighted donor
//! time (natural scale), the exponential of the weighted log time (log
//! scale), or the log-scale value multiplied by the log-normal debiasing
//! factor `exp(σ²/2 · (1 − Σw²))`. Censoring is handled per composite unit:
//! either weights are restricted to uncensored donors, or every donor is
//! eligible and the composite inherits a weighted majority event indicator.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, Subject, SubjectId};
use crate::error::{Error, Result};
use crate::solver::{nearest_neighbor, solve_group_weights, solve_sc_weights, SolverConfig};
use crate::weights::WeightVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScale {
    Natural,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Weighted donor time.
    ScNatural,
    /// Weights applied to log times.
    ScLog,
    /// Log-scale estimator times the debiasing factor; `sigma` is the known
    /// (or estimated) AFT noise scale.
    ScLogDebiased { sigma: f64 },
    /// One-hot nearest-neighbor match.
    NnMatch,
}

impl Method {
    pub fn scale(&self) -> TimeScale {
        match self {
            Method::ScNatural | Method::NnMatch => TimeScale::Natural,
            Method::ScLog | Method::ScLogDebiased { .. } => TimeScale::Log,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Censoring {
    /// Solve weights over donors with observed events only; the composite
    /// is an event by construction.
    UncensoredDonorsOnly,
    /// Solve over all donors; the composite is an event when the weighted
    /// event share reaches `threshold`.
    WeightedIndicator { threshold: f64 },
}

impl Default for Censoring {
    fn default() -> Self {
        Censoring::WeightedIndicator { threshold: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorKind {
    pub method: Method,
    #[serde(default)]
    pub censoring: Censoring,
}

impl EstimatorKind {
    pub fn new(method: Method, censoring: Censoring) -> Self {
        EstimatorKind { method, censoring }
    }

    pub fn validate(&self) -> Result<()> {
        if let Method::ScLogDebiased { sigma } = self.method {
            if !sigma.is_finite() || sigma <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "debiasing sigma must be finite and > 0, got {sigma}"
                )));
            }
        }
        if let Censoring::WeightedIndicator { threshold } = self.censoring {
            if !threshold.is_finite() || threshold <= 0.0 || threshold >= 1.0 {
                return Err(Error::InvalidInput(format!(
                    "event-indicator threshold must lie in (0, 1), got {threshold}"
                )));
            }
        }
        Ok(())
    }
}

/// A constructed control unit for one treated target.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUnit {
    target_id: SubjectId,
    time: f64,
    event: bool,
    scale: TimeScale,
    weights: WeightVector,
    match_distance: f64,
}

impl SyntheticUnit {
    pub fn new(
        target_id: SubjectId,
        time: f64,
        event: bool,
        scale: TimeScale,
        weights: WeightVector,
        match_distance: f64,
    ) -> Result<Self> {
        if !time.is_finite() || time < 0.0 {
            return Err(Error::InvalidInput(format!(
                "synthetic time must be finite and non-negative, got {time}"
            )));
        }
        if !match_distance.is_finite() || match_distance < 0.0 {
            return Err(Error::InvalidInput(format!(
                "match distance must be finite and non-negative, got {match_distance}"
            )));
        }
        Ok(SyntheticUnit {
            target_id,
            time,
            event,
            scale,
            weights,
            match_distance,
        })
    }

    pub fn target_id(&self) -> &SubjectId {
        &self.target_id
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn event(&self) -> bool {
        self.event
    }

    pub fn scale(&self) -> TimeScale {
        self.scale
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    /// Squared Euclidean distance between the target covariates and the
    /// weighted donor covariates.
    pub fn match_distance(&self) -> f64 {
        self.match_distance
    }
}

fn check_times(weights: &WeightVector, donor_times: &[f64]) -> Result<()> {
    if weights.len() != donor_times.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights but {} donor times",
            weights.len(),
            donor_times.len()
        )));
    }
    if donor_times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::InvalidInput(
            "donor times must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Weighted donor time `Σ w_j T_j`.
pub fn synthetic_outcome(weights: &WeightVector, donor_times: &[f64]) -> Result<f64> {
    check_times(weights, donor_times)?;
    Ok(weights
        .weights()
        .iter()
        .zip(donor_times)
        .map(|(w, t)| w * t)
        .sum())
}

/// Log-scale synthetic outcome `exp(Σ w_j log T_j)`.
///
/// Zero or negative donor times are rejected rather than clamped: a zero
/// time means the log-scale estimator is simply not applicable.
pub fn log_sc_outcome(weights: &WeightVector, donor_times: &[f64]) -> Result<f64> {
    check_times(weights, donor_times)?;
    if donor_times.iter().any(|t| *t <= 0.0) {
        return Err(Error::InvalidInput(
            "log-scale outcomes require strictly positive donor times".into(),
        ));
    }
    let log_mean: f64 = weights
        .weights()
        .iter()
        .zip(donor_times)
        .map(|(w, t)| w * t.ln())
        .sum();
    Ok(log_mean.exp())
}

/// Log-scale outcome multiplied by `exp(σ²/2 · (1 − Σw²))`, which removes
/// the geometric-mean shrinkage of the log-scale estimator under a
/// log-normal AFT with noise scale `sigma`.
pub fn debiased_log_sc(weights: &WeightVector, donor_times: &[f64], sigma: f64) -> Result<f64> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "debiasing sigma must be finite and > 0, got {sigma}"
        )));
    }
    let base = log_sc_outcome(weights, donor_times)?;
    let factor = (sigma * sigma / 2.0 * (1.0 - weights.l2_sq())).exp();
    Ok(base * factor)
}

/// Donor pool after applying a censoring rule, with covariates and outcomes
/// laid out for repeated solves.
struct DonorPool {
    ids: Arc<Vec<SubjectId>>,
    matrix: Array2<f64>,
    times: Vec<f64>,
    events: Vec<bool>,
}

impl DonorPool {
    fn build(donors: &Cohort, censoring: Censoring) -> Result<DonorPool> {
        if donors.is_empty() {
            return Err(Error::Empty("donor cohort is empty".into()));
        }
        let keep: Vec<&Subject> = match censoring {
            Censoring::UncensoredDonorsOnly => {
                donors.subjects().iter().filter(|s| s.event()).collect()
            }
            Censoring::WeightedIndicator { .. } => donors.subjects().iter().collect(),
        };
        if keep.is_empty() {
            return Err(Error::Empty(
                "no uncensored donors available for the uncensored-donors-only rule".into(),
            ));
        }
        let d = donors.n_features();
        let mut matrix = Array2::zeros((keep.len(), d));
        for (i, s) in keep.iter().enumerate() {
            for (j, x) in s.covariates().iter().enumerate() {
                matrix[[i, j]] = *x;
            }
        }
        Ok(DonorPool {
            ids: Arc::new(keep.iter().map(|s| s.id().clone()).collect()),
            matrix,
            times: keep.iter().map(|s| s.time()).collect(),
            events: keep.iter().map(|s| s.event()).collect(),
        })
    }

    fn match_distance(&self, target: &[f64], weights: &WeightVector) -> f64 {
        let d = self.matrix.ncols();
        let mut synth = vec![0.0; d];
        for (w, row) in weights.weights().iter().zip(self.matrix.outer_iter()) {
            if *w != 0.0 {
                for (s, x) in synth.iter_mut().zip(row) {
                    *s += w * x;
                }
            }
        }
        synth
            .iter()
            .zip(target)
            .map(|(s, t)| (s - t) * (s - t))
            .sum()
    }

    fn unit(
        &self,
        target: &Subject,
        kind: &EstimatorKind,
        weights: WeightVector,
    ) -> Result<SyntheticUnit> {
        let time = match kind.method {
            Method::ScNatural | Method::NnMatch => synthetic_outcome(&weights, &self.times)?,
            Method::ScLog => log_sc_outcome(&weights, &self.times)?,
            Method::ScLogDebiased { sigma } => debiased_log_sc(&weights, &self.times, sigma)?,
        };
        let event = match kind.censoring {
            Censoring::UncensoredDonorsOnly => true,
            Censoring::WeightedIndicator { threshold } => {
                let share: f64 = weights
                    .weights()
                    .iter()
                    .zip(&self.events)
                    .map(|(w, e)| if *e { *w } else { 0.0 })
                    .sum();
                share >= threshold
            }
        };
        let match_distance = self.match_distance(target.covariates(), &weights);
        SyntheticUnit::new(
            target.id().clone(),
            time,
            event,
            kind.method.scale(),
            weights,
            match_distance,
        )
    }

    fn solve(
        &self,
        target: &Subject,
        kind: &EstimatorKind,
        config: &SolverConfig,
    ) -> Result<WeightVector> {
        match kind.method {
            Method::NnMatch => {
                nearest_neighbor(target.covariates(), self.matrix.view(), self.ids.clone())
            }
            _ => Ok(solve_sc_weights(
                target.covariates(),
                self.matrix.view(),
                self.ids.clone(),
                config,
            )?
            .weights),
        }
    }
}

/// Builds the composite control unit for a single treated target.
pub fn build_synthetic_unit(
    target: &Subject,
    donors: &Cohort,
    kind: &EstimatorKind,
    config: &SolverConfig,
) -> Result<SyntheticUnit> {
    kind.validate()?;
    if target.covariates().len() != donors.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "target has {} covariates, donors have {}",
            target.covariates().len(),
            donors.n_features()
        )));
    }
    let pool = DonorPool::build(donors, kind.censoring)?;
    let weights = pool.solve(target, kind, config)?;
    pool.unit(target, kind, weights)
}

/// Builds one composite unit per target, in target order.
///
/// With `lambda_cov > 0` and a synthetic-control method the weights come
/// from the joint group solve; otherwise every unit is solved independently.
pub fn build_control_group(
    targets: &Cohort,
    donors: &Cohort,
    kind: &EstimatorKind,
    config: &SolverConfig,
) -> Result<Vec<SyntheticUnit>> {
    kind.validate()?;
    config.validate()?;
    if targets.feature_names() != donors.feature_names() {
        return Err(Error::Schema(
            "target and donor cohorts have different covariate schemas".into(),
        ));
    }
    if targets.is_empty() {
        return Err(Error::Empty("target cohort is empty".into()));
    }
    let pool = DonorPool::build(donors, kind.censoring)?;

    let group_solve = config.lambda_cov > 0.0 && !matches!(kind.method, Method::NnMatch);
    if group_solve {
        let solved = solve_group_weights(
            targets.covariate_matrix().view(),
            pool.matrix.view(),
            pool.ids.clone(),
            config,
        )?;
        return targets
            .subjects()
            .iter()
            .zip(solved.weights.rows())
            .map(|(target, row)| pool.unit(target, kind, row.clone()))
            .collect();
    }

    targets
        .subjects()
        .iter()
        .map(|target| {
            let weights = pool.solve(target, kind, config)?;
            pool.unit(target, kind, weights)
        })
        .collect()
}
