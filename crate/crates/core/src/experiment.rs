//! Negative-control experiments: a biased resampling scheme that
//! manufactures a target sample with inflated survival from a no-effect
//! cohort, evaluation runs that score how well each construction method
//! removes that induced bias, and control-only cross-validation for the
//! variance penalty.

use serde::{Deserialize, Serialize};

use crate::data::{pairwise_distance, Cohort};
use crate::error::{Error, Result};
use crate::estimators::{build_control_group, EstimatorKind, SyntheticUnit};
use crate::rng::{derive_seed, seeded_rng};
use crate::solver::SolverConfig;
use crate::survival::{
    fit_cox, kaplan_meier, ks_statistic, mae_rmst, predict_median_survival, SurvivalCurve,
};
use crate::weights::WeightVector;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleConfig {
    /// Probability that a subject enters the target candidate pool.
    pub target_pool_prob: f64,
    /// Multiplier on the z-scored risk score inside the expit selection
    /// probability.
    pub selection_scale: f64,
    /// Donors closer than this (mean squared covariate distance) to any
    /// target are excluded; 0 excludes nobody.
    pub delta_min: f64,
    pub seed: u64,
}

impl ResampleConfig {
    pub fn new(delta_min: f64, seed: u64) -> Self {
        ResampleConfig {
            target_pool_prob: 0.1,
            selection_scale: 3.0,
            delta_min,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.target_pool_prob.is_finite()
            || self.target_pool_prob <= 0.0
            || self.target_pool_prob >= 1.0
        {
            return Err(Error::InvalidInput(format!(
                "target_pool_prob must lie in (0, 1), got {}",
                self.target_pool_prob
            )));
        }
        if !self.selection_scale.is_finite() {
            return Err(Error::InvalidInput("selection_scale must be finite".into()));
        }
        if !self.delta_min.is_finite() || self.delta_min < 0.0 {
            return Err(Error::InvalidInput(format!(
                "delta_min must be finite and non-negative, got {}",
                self.delta_min
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ResampleSplit {
    pub targets: Cohort,
    pub donors: Cohort,
    /// Predicted medians that never crossed 1/2 and were replaced by
    /// (max observed time + 1) before z-scoring.
    pub infinite_medians: usize,
}

fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Splits an untreated cohort into a survival-enriched target sample and a
/// donor pool.
///
/// A Cox fit supplies predicted median survival per subject; subjects land
/// in the target candidate pool with probability `target_pool_prob` and are
/// then kept as targets with probability `expit(scale · Z)` where `Z` is
/// the z-scored median. Unselected candidates are dropped entirely. Donors
/// within `delta_min` of any target are removed.
pub fn biased_resample(cohort: &Cohort, config: &ResampleConfig) -> Result<ResampleSplit> {
    config.validate()?;
    if cohort.is_empty() {
        return Err(Error::Empty("cannot resample an empty cohort".into()));
    }
    if cohort.subjects().iter().any(|s| s.treated()) {
        return Err(Error::InvalidInput(
            "biased_resample expects an all-untreated cohort; filter treated subjects first"
                .into(),
        ));
    }

    let model = fit_cox(cohort)?;
    let mut medians = Vec::with_capacity(cohort.len());
    let mut infinite_medians = 0;
    for subject in cohort.subjects() {
        let m = predict_median_survival(&model, subject.covariates())?;
        if m.is_infinite() {
            infinite_medians += 1;
        }
        medians.push(m);
    }
    let max_time = cohort
        .times()
        .iter()
        .fold(0.0f64, |a, b| a.max(*b));
    for m in &mut medians {
        if m.is_infinite() {
            *m = max_time + 1.0;
        }
    }
    let n = medians.len() as f64;
    let mean = medians.iter().sum::<f64>() / n;
    let sd = (medians.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n).sqrt();
    let zs: Vec<f64> = medians
        .iter()
        .map(|m| if sd > 0.0 { (m - mean) / sd } else { 0.0 })
        .collect();

    // Two fixed passes over one stream keep the draw order independent of
    // the data values, so a seed pins the whole split.
    let mut rng = seeded_rng(config.seed);
    let in_pool: Vec<bool> = (0..cohort.len())
        .map(|_| rng.gen_bool(config.target_pool_prob))
        .collect();
    let mut target_idx = Vec::new();
    let mut donor_idx = Vec::new();
    for (i, pooled) in in_pool.iter().enumerate() {
        if !pooled {
            donor_idx.push(i);
        }
    }
    let pool_size = cohort.len() - donor_idx.len();
    for (i, pooled) in in_pool.iter().enumerate() {
        if *pooled && rng.gen_bool(expit(config.selection_scale * zs[i])) {
            target_idx.push(i);
        }
    }
    if target_idx.is_empty() {
        return Err(Error::Empty(format!(
            "no targets selected ({pool_size} pool candidates from {} subjects)",
            cohort.len()
        )));
    }

    let subjects = cohort.subjects();
    let donors_before = donor_idx.len();
    let kept: Vec<usize> = donor_idx
        .into_iter()
        .filter(|j| {
            !target_idx.iter().any(|t| {
                pairwise_distance(subjects[*j].covariates(), subjects[*t].covariates())
                    .expect("same cohort, same dimension")
                    < config.delta_min
            })
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::Empty(format!(
            "no donors left: delta_min {} excluded all {donors_before} candidates ({} targets)",
            config.delta_min,
            target_idx.len()
        )));
    }

    Ok(ResampleSplit {
        targets: cohort.select(&target_idx)?,
        donors: cohort.select(&kept)?,
        infinite_medians,
    })
}

/// A named estimator plus the solver settings it runs with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub kind: EstimatorKind,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub method: String,
    pub delta_min: f64,
    pub repeat: usize,
    pub seed: u64,
    pub ks: f64,
    pub mae_rmst: f64,
    pub n_targets: usize,
    pub n_donors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// RMST horizon.
    pub t_end: f64,
    pub target_pool_prob: f64,
    pub selection_scale: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            t_end: 120.0,
            target_pool_prob: 0.1,
            selection_scale: 3.0,
        }
    }
}

fn observed_pairs(cohort: &Cohort) -> Vec<(f64, bool)> {
    cohort
        .subjects()
        .iter()
        .map(|s| (s.time(), s.event()))
        .collect()
}

fn unit_pairs(units: &[SyntheticUnit]) -> Vec<(f64, bool)> {
    units.iter().map(|u| (u.time(), u.event())).collect()
}

fn curve_of_units(units: &[SyntheticUnit]) -> Result<SurvivalCurve> {
    let times: Vec<f64> = units.iter().map(|u| u.time()).collect();
    let events: Vec<bool> = units.iter().map(|u| u.event()).collect();
    kaplan_meier(&times, &events)
}

fn run_error(method: &str, delta_min: f64, repeat: usize, source: Error) -> Error {
    Error::Run {
        method: method.to_string(),
        delta_min,
        repeat,
        source: Box::new(source),
    }
}

/// Runs the full negative-control protocol: for every `(delta_min, repeat)`
/// the cohort is resampled with a repeat-specific seed (shared across the
/// delta grid, so growing `delta_min` only shrinks the donor pool), every
/// method builds its control group, and each run is scored by the KS
/// distance between the target and constructed KM curves (evaluated at the
/// target sample's observed times) plus the restricted-mean MAE.
pub fn run_negative_control_eval(
    cohort: &Cohort,
    methods: &[MethodSpec],
    delta_grid: &[f64],
    repeats: usize,
    seed: u64,
    eval: &EvalConfig,
) -> Result<Vec<RunReport>> {
    if methods.is_empty() {
        return Err(Error::InvalidInput("at least one method is required".into()));
    }
    for (i, m) in methods.iter().enumerate() {
        m.kind.validate()?;
        m.solver.validate()?;
        if methods[..i].iter().any(|other| other.name == m.name) {
            return Err(Error::InvalidInput(format!(
                "duplicate method name {:?}",
                m.name
            )));
        }
    }
    if delta_grid.is_empty() {
        return Err(Error::InvalidInput("delta grid must be non-empty".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidInput("repeats must be at least 1".into()));
    }

    let mut reports = Vec::with_capacity(delta_grid.len() * repeats * methods.len());
    for delta_min in delta_grid {
        for repeat in 0..repeats {
            let run_seed = derive_seed(seed, repeat as u64);
            let mut config = ResampleConfig::new(*delta_min, run_seed);
            config.target_pool_prob = eval.target_pool_prob;
            config.selection_scale = eval.selection_scale;
            let split = biased_resample(cohort, &config)
                .map_err(|e| run_error("biased_resample", *delta_min, repeat, e))?;
            let target_curve = kaplan_meier(&split.targets.times(), &split.targets.events())
                .map_err(|e| run_error("target_curve", *delta_min, repeat, e))?;
            let eval_times = split.targets.times();
            let observed = observed_pairs(&split.targets);

            for method in methods {
                let tag = |e| run_error(&method.name, *delta_min, repeat, e);
                let units =
                    build_control_group(&split.targets, &split.donors, &method.kind, &method.solver)
                        .map_err(tag)?;
                let constructed = curve_of_units(&units).map_err(tag)?;
                let ks = ks_statistic(&target_curve, &constructed, &eval_times).map_err(tag)?;
                let mae = mae_rmst(&unit_pairs(&units), &observed, eval.t_end).map_err(tag)?;
                reports.push(RunReport {
                    method: method.name.clone(),
                    delta_min: *delta_min,
                    repeat,
                    seed: run_seed,
                    ks,
                    mae_rmst: mae,
                    n_targets: split.targets.len(),
                    n_donors: split.donors.len(),
                });
            }
        }
    }
    reports.sort_by(|a, b| {
        a.delta_min
            .total_cmp(&b.delta_min)
            .then_with(|| a.method.cmp(&b.method))
            .then(a.repeat.cmp(&b.repeat))
    });
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub delta_min: f64,
    pub repeats: usize,
    pub mean_ks: f64,
    pub two_se_ks: f64,
    pub mean_mae: f64,
    pub two_se_mae: f64,
}

fn mean_and_two_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 2.0 * (var / n).sqrt())
}

/// Collapses per-run reports into mean ± 2SE rows per (method, delta_min).
pub fn summarize_reports(reports: &[RunReport]) -> Vec<SummaryRow> {
    let mut sorted: Vec<&RunReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        a.delta_min
            .total_cmp(&b.delta_min)
            .then_with(|| a.method.cmp(&b.method))
    });
    let mut rows: Vec<SummaryRow> = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let key = (&sorted[i].method, sorted[i].delta_min);
        let mut ks = Vec::new();
        let mut mae = Vec::new();
        while i < sorted.len() && (&sorted[i].method, sorted[i].delta_min) == key {
            ks.push(sorted[i].ks);
            mae.push(sorted[i].mae_rmst);
            i += 1;
        }
        let (mean_ks, two_se_ks) = mean_and_two_se(&ks);
        let (mean_mae, two_se_mae) = mean_and_two_se(&mae);
        rows.push(SummaryRow {
            method: key.0.clone(),
            delta_min: key.1,
            repeats: ks.len(),
            mean_ks,
            two_se_ks,
            mean_mae,
            two_se_mae,
        });
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMetric {
    Mae,
    Ks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    pub metric: CvMetric,
    pub seed: u64,
    pub t_end: f64,
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::InvalidInput("lambda grid must be non-empty".into()));
        }
        if self.lambda_grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidInput(
                "lambda values must be finite and non-negative".into(),
            ));
        }
        if self.folds < 2 {
            return Err(Error::InvalidInput(format!(
                "cross-validation needs at least 2 folds, got {}",
                self.folds
            )));
        }
        if !self.t_end.is_finite() || self.t_end <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "t_end must be finite and positive, got {}",
                self.t_end
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub best_lambda: f64,
    /// Per-λ mean metric over folds, ascending in λ.
    pub table: Vec<LambdaScore>,
}

/// Control-only cross-validation of the variance penalty: each fold of
/// donors plays target against the remaining donors, and the λ with the
/// smallest mean metric wins (ties go to the smaller λ).
pub fn cross_validate_lambda(
    donors: &Cohort,
    kind: &EstimatorKind,
    base_solver: &SolverConfig,
    config: &CvConfig,
) -> Result<CvOutcome> {
    config.validate()?;
    kind.validate()?;
    base_solver.validate()?;
    if donors.len() < config.folds {
        return Err(Error::InvalidInput(format!(
            "{} donors cannot fill {} folds",
            donors.len(),
            config.folds
        )));
    }

    let mut indices: Vec<usize> = (0..donors.len()).collect();
    let mut rng = seeded_rng(config.seed);
    // Fisher-Yates, then contiguous blocks as folds.
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    let n = indices.len();
    let fold_ranges: Vec<(usize, usize)> = (0..config.folds)
        .map(|f| (f * n / config.folds, (f + 1) * n / config.folds))
        .collect();

    let mut grid: Vec<f64> = config.lambda_grid.clone();
    grid.sort_by(f64::total_cmp);

    let mut table = Vec::with_capacity(grid.len());
    for lambda in &grid {
        let mut solver = base_solver.clone();
        solver.lambda_var = *lambda;
        let mut total = 0.0;
        for (start, end) in &fold_ranges {
            let held_idx = &indices[*start..*end];
            let train_idx: Vec<usize> = indices[..*start]
                .iter()
                .chain(&indices[*end..])
                .copied()
                .collect();
            let held = donors.select(held_idx)?;
            let train = donors.select(&train_idx)?;
            let units = build_control_group(&held, &train, kind, &solver)?;
            total += match config.metric {
                CvMetric::Mae => {
                    mae_rmst(&unit_pairs(&units), &observed_pairs(&held), config.t_end)?
                }
                CvMetric::Ks => {
                    let held_curve = kaplan_meier(&held.times(), &held.events())?;
                    ks_statistic(&held_curve, &curve_of_units(&units)?, &held.times())?
                }
            };
        }
        table.push(LambdaScore {
            lambda: *lambda,
            score: total / config.folds as f64,
        });
    }

    // Ascending λ plus strict improvement = smallest λ wins ties.
    let mut best = table[0];
    for entry in &table[1..] {
        if entry.score < best.score {
            best = *entry;
        }
    }
    Ok(CvOutcome {
        best_lambda: best.lambda,
        table,
    })
}

/// Sum of squared weights of a group of units, averaged; a diagnostic for
/// how far a method sits between pure matching (1) and uniform averaging.
pub fn mean_variance_factor(units: &[SyntheticUnit]) -> Option<f64> {
    if units.is_empty() {
        return None;
    }
    Some(
        units
            .iter()
            .map(|u| u.weights().l2_sq())
            .sum::<f64>()
            / units.len() as f64,
    )
}

/// Convenience for reporting: the weights of each unit as a row.
pub fn unit_weight_rows(units: &[SyntheticUnit]) -> Vec<&WeightVector> {
    units.iter().map(|u| u.weights()).collect()
}
