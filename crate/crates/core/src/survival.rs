//! Survival-curve estimation and comparison: Kaplan-Meier product-limit
//! curves, KS distance between curves, restricted mean survival time, and a
//! Cox proportional-hazards fitter (Breslow ties) whose risk scores drive
//! the biased resampling scheme.

use ndarray::{Array2, ArrayView2};

use crate::data::Cohort;
use crate::error::{Error, Result};

/// Right-continuous step survival function. Steps occur at event times
/// only; an empty curve is the constant function 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    times: Vec<f64>,
    survival: Vec<f64>,
    at_risk: Vec<usize>,
    events: Vec<usize>,
}

impl SurvivalCurve {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn survival(&self) -> &[f64] {
        &self.survival
    }

    /// Subjects at risk just before each step time.
    pub fn at_risk(&self) -> &[usize] {
        &self.at_risk
    }

    /// Deaths at each step time.
    pub fn events(&self) -> &[usize] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Survival probability at `t` (right-continuous: the step at `t`
    /// counts at `t` itself).
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|x| *x <= t) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }
}

/// Product-limit estimate. Tied deaths and censorings at one time are both
/// counted in that time's risk set (deaths take effect first).
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<SurvivalCurve> {
    if times.is_empty() {
        return Err(Error::Empty("kaplan_meier needs at least one subject".into()));
    }
    if times.len() != events.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} times but {} event flags",
            times.len(),
            events.len()
        )));
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::InvalidInput(
            "survival times must be finite and non-negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|a, b| times[*a].total_cmp(&times[*b]));

    let mut curve = SurvivalCurve {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut surv = 1.0;
    let mut at_risk = times.len();
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut deaths = 0;
        let mut leaving = 0;
        while i < order.len() && times[order[i]] == t {
            if events[order[i]] {
                deaths += 1;
            }
            leaving += 1;
            i += 1;
        }
        if deaths > 0 {
            surv *= 1.0 - deaths as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(surv);
            curve.at_risk.push(at_risk);
            curve.events.push(deaths);
        }
        at_risk -= leaving;
    }
    Ok(curve)
}

/// Largest absolute gap between two survival curves over `eval_times`.
pub fn ks_statistic(a: &SurvivalCurve, b: &SurvivalCurve, eval_times: &[f64]) -> Result<f64> {
    if eval_times.is_empty() {
        return Err(Error::Empty("ks_statistic needs a non-empty evaluation grid".into()));
    }
    if eval_times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("evaluation times must be finite".into()));
    }
    Ok(eval_times
        .iter()
        .map(|t| (a.survival_at(*t) - b.survival_at(*t)).abs())
        .fold(0.0, f64::max))
}

/// Restricted survival time `min(time, t_end)` plus the usability flag:
/// a record is usable when the event was observed or follow-up extends
/// past the horizon.
pub fn rmst(time: f64, event: bool, t_end: f64) -> (f64, bool) {
    (time.min(t_end), event || time > t_end)
}

/// Mean absolute error between paired restricted survival times, over the
/// pairs where both sides are usable.
pub fn mae_rmst(
    predicted: &[(f64, bool)],
    observed: &[(f64, bool)],
    t_end: f64,
) -> Result<f64> {
    if predicted.len() != observed.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions but {} observations",
            predicted.len(),
            observed.len()
        )));
    }
    if !t_end.is_finite() || t_end <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "t_end must be finite and positive, got {t_end}"
        )));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for ((pt, pe), (ot, oe)) in predicted.iter().zip(observed) {
        let (pv, pu) = rmst(*pt, *pe, t_end);
        let (ov, ou) = rmst(*ot, *oe, t_end);
        if pu && ou {
            total += (pv - ov).abs();
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Empty(
            "no pair had both restricted times usable (event observed or follow-up past t_end)"
                .into(),
        ));
    }
    Ok(total / used as f64)
}

/// Fitted proportional-hazards model. `beta` is reported in the original
/// column order; constant columns are dropped from the fit and get zero
/// coefficients. Covariates are centered internally, and predictions undo
/// the centering, so callers never see it.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxModel {
    beta: Vec<f64>,
    center: Vec<f64>,
    dropped: Vec<bool>,
    baseline_times: Vec<f64>,
    baseline_cumhaz: Vec<f64>,
    converged: bool,
    iterations: usize,
}

impl CoxModel {
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Columns excluded from the fit for being constant.
    pub fn dropped(&self) -> &[bool] {
        &self.dropped
    }

    /// Breslow baseline cumulative hazard, as (event times, values).
    pub fn baseline(&self) -> (&[f64], &[f64]) {
        (&self.baseline_times, &self.baseline_cumhaz)
    }

    /// Linear predictor x·β (with the internal centering applied), usable
    /// directly as a risk score.
    pub fn risk_score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.beta.len() {
            return Err(Error::DimensionMismatch(format!(
                "x has length {}, model has {} covariates",
                x.len(),
                self.beta.len()
            )));
        }
        Ok(self
            .beta
            .iter()
            .zip(&self.center)
            .zip(x)
            .map(|((b, c), v)| b * (v - c))
            .sum())
    }

    fn cumhaz_at(&self, t: f64) -> f64 {
        match self.baseline_times.partition_point(|x| *x <= t) {
            0 => 0.0,
            k => self.baseline_cumhaz[k - 1],
        }
    }

    /// Survival probability `exp(−Λ₀(t)·e^{xβ})`.
    pub fn predicted_survival(&self, x: &[f64], t: f64) -> Result<f64> {
        let eta = self.risk_score(x)?;
        Ok((-self.cumhaz_at(t) * eta.exp()).exp())
    }
}

/// Shared evaluation of the Breslow partial likelihood. Subjects are
/// walked by descending time so risk-set sums accumulate incrementally.
struct PartialLikelihood<'a, 'x> {
    times: &'a [f64],
    events: &'a [bool],
    x: ArrayView2<'x, f64>,
    desc: Vec<usize>,
}

struct Evaluation {
    loglik: f64,
    score: Vec<f64>,
    // Observed information (negative Hessian), row-major; empty unless requested.
    info: Vec<Vec<f64>>,
}

impl<'a, 'x> PartialLikelihood<'a, 'x> {
    fn new(times: &'a [f64], events: &'a [bool], x: ArrayView2<'x, f64>) -> Self {
        let mut desc: Vec<usize> = (0..times.len()).collect();
        desc.sort_by(|a, b| times[*b].total_cmp(&times[*a]));
        PartialLikelihood {
            times,
            events,
            x,
            desc,
        }
    }

    fn evaluate(&self, beta: &[f64], want_info: bool) -> Evaluation {
        let n = self.times.len();
        let d = beta.len();
        let etas: Vec<f64> = (0..n)
            .map(|i| {
                self.x
                    .row(i)
                    .iter()
                    .zip(beta)
                    .map(|(v, b)| v * b)
                    .sum::<f64>()
            })
            .collect();
        // The partial likelihood is invariant to a common shift of the
        // linear predictors, so shift by the max to keep exp() in range.
        let shift = etas.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        let shift = if shift.is_finite() { shift } else { 0.0 };

        let mut s0 = 0.0;
        let mut s1 = vec![0.0; d];
        let mut s2 = vec![vec![0.0; d]; if want_info { d } else { 0 }];
        let mut loglik = 0.0;
        let mut score = vec![0.0; d];
        let mut info = vec![vec![0.0; d]; if want_info { d } else { 0 }];

        let mut i = 0;
        while i < n {
            let t = self.times[self.desc[i]];
            let mut deaths = 0usize;
            let mut death_eta = 0.0;
            let mut death_x = vec![0.0; d];
            while i < n && self.times[self.desc[i]] == t {
                let idx = self.desc[i];
                let w = (etas[idx] - shift).exp();
                s0 += w;
                for j in 0..d {
                    s1[j] += w * self.x[[idx, j]];
                }
                if want_info {
                    for j in 0..d {
                        for k in j..d {
                            s2[j][k] += w * self.x[[idx, j]] * self.x[[idx, k]];
                        }
                    }
                }
                if self.events[idx] {
                    deaths += 1;
                    death_eta += etas[idx] - shift;
                    for j in 0..d {
                        death_x[j] += self.x[[idx, j]];
                    }
                }
                i += 1;
            }
            if deaths > 0 {
                let dt = deaths as f64;
                loglik += death_eta - dt * s0.ln();
                for j in 0..d {
                    let mean_j = s1[j] / s0;
                    score[j] += death_x[j] - dt * mean_j;
                    if want_info {
                        for k in j..d {
                            info[j][k] += dt * (s2[j][k] / s0 - mean_j * s1[k] / s0);
                        }
                    }
                }
            }
        }
        if want_info {
            for j in 0..d {
                for k in 0..j {
                    info[j][k] = info[k][j];
                }
            }
        }
        Evaluation {
            loglik,
            score,
            info,
        }
    }

    /// Breslow cumulative baseline hazard at the given coefficients,
    /// returned as ascending (event time, cumulative hazard) pairs.
    fn baseline(&self, beta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.times.len();
        let etas: Vec<f64> = (0..n)
            .map(|i| {
                self.x
                    .row(i)
                    .iter()
                    .zip(beta)
                    .map(|(v, b)| v * b)
                    .sum::<f64>()
            })
            .collect();
        let shift = etas.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        let shift = if shift.is_finite() { shift } else { 0.0 };
        let mut s0 = 0.0;
        let mut increments = Vec::new();
        let mut i = 0;
        while i < n {
            let t = self.times[self.desc[i]];
            let mut deaths = 0usize;
            while i < n && self.times[self.desc[i]] == t {
                s0 += (etas[self.desc[i]] - shift).exp();
                if self.events[self.desc[i]] {
                    deaths += 1;
                }
                i += 1;
            }
            if deaths > 0 {
                // True risk-set sum is s0·e^{shift}.
                increments.push((t, deaths as f64 / s0 * (-shift).exp()));
            }
        }
        increments.reverse();
        let mut times = Vec::with_capacity(increments.len());
        let mut cumhaz = Vec::with_capacity(increments.len());
        let mut total = 0.0;
        for (t, inc) in increments {
            total += inc;
            times.push(t);
            cumhaz.push(total);
        }
        (times, cumhaz)
    }
}

/// Breslow partial log-likelihood on raw (uncentered) data; exposed so the
/// fit can be checked against grid searches and finite differences.
pub fn cox_log_partial_likelihood(
    times: &[f64],
    events: &[bool],
    x: ArrayView2<'_, f64>,
    beta: &[f64],
) -> Result<f64> {
    check_cox_inputs(times, events, x, beta.len())?;
    Ok(PartialLikelihood::new(times, events, x).evaluate(beta, false).loglik)
}

/// Analytic score (gradient of the partial log-likelihood) at `beta`.
pub fn cox_score(
    times: &[f64],
    events: &[bool],
    x: ArrayView2<'_, f64>,
    beta: &[f64],
) -> Result<Vec<f64>> {
    check_cox_inputs(times, events, x, beta.len())?;
    Ok(PartialLikelihood::new(times, events, x).evaluate(beta, false).score)
}

fn check_cox_inputs(
    times: &[f64],
    events: &[bool],
    x: ArrayView2<'_, f64>,
    d: usize,
) -> Result<()> {
    if times.len() != events.len() || times.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} times, {} events, {} covariate rows",
            times.len(),
            events.len(),
            x.nrows()
        )));
    }
    if x.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "{} covariate columns but beta has length {}",
            x.ncols(),
            d
        )));
    }
    if times.is_empty() {
        return Err(Error::Empty("cox likelihood needs at least one subject".into()));
    }
    Ok(())
}

/// Solves the symmetric system `a·x = b` by Gaussian elimination with
/// partial pivoting. `a` is consumed.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let d = b.len();
    for col in 0..d {
        let pivot_row = (col..d)
            .max_by(|r, s| a[*r][col].abs().total_cmp(&a[*s][col].abs()))
            .expect("non-empty range");
        if a[pivot_row][col].abs() < 1e-12 {
            return Err(Error::InvalidInput(
                "singular information matrix; covariates may be collinear".into(),
            ));
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in (col + 1)..d {
            let factor = a[row][col] / a[col][col];
            for k in col..d {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for col in (0..d).rev() {
        let mut val = b[col];
        for k in (col + 1)..d {
            val -= a[col][k] * x[k];
        }
        x[col] = val / a[col][col];
    }
    Ok(x)
}

const MAX_NEWTON_ITERS: usize = 100;
const SCORE_TOL: f64 = 1e-8;
const BETA_NORM_LIMIT: f64 = 50.0;

/// Maximizes the Breslow partial likelihood by Newton iterations with step
/// halving, starting from β = 0. Constant covariate columns are dropped
/// (their coefficients are reported as zero). A coefficient norm above 50
/// is treated as a monotone-likelihood diagnosis and flagged instead of
/// iterating forever.
pub fn fit_cox(cohort: &Cohort) -> Result<CoxModel> {
    if cohort.is_empty() {
        return Err(Error::Empty("cox fit needs a non-empty cohort".into()));
    }
    if cohort.n_features() == 0 {
        return Err(Error::InvalidInput("cox fit needs at least one covariate".into()));
    }
    let times = cohort.times();
    let events = cohort.events();
    if !events.iter().any(|e| *e) {
        return Err(Error::InvalidInput(
            "cox fit needs at least one observed event".into(),
        ));
    }
    let full = cohort.covariate_matrix();
    let d_full = full.ncols();
    let n = full.nrows();

    let mut dropped = vec![false; d_full];
    let mut center = vec![0.0; d_full];
    for j in 0..d_full {
        let col = full.column(j);
        let min = col.iter().fold(f64::INFINITY, |a, b| a.min(*b));
        let max = col.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        dropped[j] = min == max;
        center[j] = col.iter().sum::<f64>() / n as f64;
    }
    let active: Vec<usize> = (0..d_full).filter(|j| !dropped[*j]).collect();

    let mut centered = Array2::zeros((n, active.len()));
    for (aj, j) in active.iter().enumerate() {
        for i in 0..n {
            centered[[i, aj]] = full[[i, *j]] - center[*j];
        }
    }

    let likelihood = PartialLikelihood::new(&times, &events, centered.view());
    let mut beta = vec![0.0; active.len()];
    let mut converged = active.is_empty();
    let mut iterations = 0;

    if !active.is_empty() {
        let mut eval = likelihood.evaluate(&beta, true);
        for iter in 1..=MAX_NEWTON_ITERS {
            let score_norm = eval.score.iter().map(|s| s * s).sum::<f64>().sqrt();
            if score_norm < SCORE_TOL {
                converged = true;
                break;
            }
            let direction = solve_linear(eval.info.clone(), eval.score.clone())?;
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let candidate: Vec<f64> = beta
                    .iter()
                    .zip(&direction)
                    .map(|(b, d)| b + step * d)
                    .collect();
                let cand_eval = likelihood.evaluate(&candidate, true);
                if cand_eval.loglik >= eval.loglik - 1e-12 * eval.loglik.abs() {
                    beta = candidate;
                    eval = cand_eval;
                    accepted = true;
                    break;
                }
                step /= 2.0;
            }
            iterations = iter;
            if !accepted {
                // No ascent direction left; the score says how close we got.
                converged = score_norm < SCORE_TOL;
                break;
            }
            let beta_norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
            if beta_norm > BETA_NORM_LIMIT {
                converged = false;
                break;
            }
        }
        if !converged && iterations == MAX_NEWTON_ITERS {
            let score_norm = eval.score.iter().map(|s| s * s).sum::<f64>().sqrt();
            converged = score_norm < SCORE_TOL;
        }
    }

    let (baseline_times, baseline_cumhaz) = likelihood.baseline(&beta);

    let mut beta_full = vec![0.0; d_full];
    for (aj, j) in active.iter().enumerate() {
        beta_full[*j] = beta[aj];
    }
    // Dropped columns contribute nothing to the predictor either way.
    for j in 0..d_full {
        if dropped[j] {
            center[j] = 0.0;
        }
    }

    Ok(CoxModel {
        beta: beta_full,
        center,
        dropped,
        baseline_times,
        baseline_cumhaz,
        converged,
        iterations,
    })
}

/// Smallest time where the predicted survival curve reaches 1/2, or +∞ if
/// it stays above 1/2 through observed follow-up.
pub fn predict_median_survival(model: &CoxModel, x: &[f64]) -> Result<f64> {
    if !model.converged() {
        return Err(Error::InvalidInput(
            "median prediction requires a converged cox model".into(),
        ));
    }
    let eta = model.risk_score(x)?;
    let hazard_scale = eta.exp();
    for (t, ch) in model.baseline_times.iter().zip(&model.baseline_cumhaz) {
        if (-ch * hazard_scale).exp() <= 0.5 {
            return Ok(*t);
        }
    }
    Ok(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Subject;
    use crate::rng::{seeded_rng, standard_normal};
    use rand::Rng;

    #[test]
    fn product_limit_no_censoring() {
        let curve = kaplan_meier(&[1.0, 2.0, 3.0], &[true, true, true]).unwrap();
        assert_eq!(curve.times(), &[1.0, 2.0, 3.0]);
        // 2/3, then 2/3·1/2 = 1/3, then 0.
        assert!((curve.survival()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((curve.survival()[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(curve.survival()[2], 0.0);
        assert_eq!(curve.at_risk(), &[3, 2, 1]);
    }

    #[test]
    fn product_limit_with_censoring() {
        let curve = kaplan_meier(&[1.0, 2.0, 3.0], &[true, false, true]).unwrap();
        // No step at the censoring time.
        assert_eq!(curve.times(), &[1.0, 3.0]);
        assert!((curve.survival_at(1.0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((curve.survival_at(2.5) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(curve.survival_at(3.0), 0.0);
    }

    #[test]
    fn all_censored_curve_stays_at_one() {
        let curve = kaplan_meier(&[1.0, 2.0], &[false, false]).unwrap();
        assert!(curve.is_empty());
        assert_eq!(curve.survival_at(100.0), 1.0);
    }

    #[test]
    fn tied_deaths_and_censorings_share_the_risk_set() {
        let curve =
            kaplan_meier(&[2.0, 2.0, 2.0, 5.0], &[true, true, false, true]).unwrap();
        assert_eq!(curve.times(), &[2.0, 5.0]);
        // Both deaths at t = 2 see all four subjects at risk.
        assert!((curve.survival()[0] - 0.5).abs() < 1e-12);
        assert_eq!(curve.at_risk(), &[4, 1]);
        assert_eq!(curve.events(), &[2, 1]);
        assert_eq!(curve.survival()[1], 0.0);
    }

    #[test]
    fn km_equals_complement_of_ecdf_without_censoring() {
        let mut rng = seeded_rng(3);
        for _ in 0..20 {
            let n = rng.gen_range(1..40);
            let times: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0f64)).collect();
            let curve = kaplan_meier(&times, &vec![true; n]).unwrap();
            for t in curve.times() {
                let ecdf = times.iter().filter(|x| *x <= t).count() as f64 / n as f64;
                assert!((curve.survival_at(*t) - (1.0 - ecdf)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn survival_evaluation_is_right_continuous() {
        let curve = kaplan_meier(&[1.0, 2.0], &[true, true]).unwrap();
        assert_eq!(curve.survival_at(0.999), 1.0);
        assert!((curve.survival_at(1.0) - 0.5).abs() < 1e-12);
        assert!((curve.survival_at(1.5) - 0.5).abs() < 1e-12);
        assert_eq!(curve.survival_at(2.0), 0.0);
    }

    #[test]
    fn empty_km_input_is_an_error() {
        assert!(kaplan_meier(&[], &[]).is_err());
    }

    #[test]
    fn ks_of_identical_curves_is_zero() {
        let curve = kaplan_meier(&[1.0, 2.0, 3.0], &[true, true, false]).unwrap();
        assert_eq!(ks_statistic(&curve, &curve, &[0.5, 1.5, 2.5]).unwrap(), 0.0);
    }

    #[test]
    fn ks_sees_the_full_gap_between_shifted_steps() {
        let a = kaplan_meier(&[1.0], &[true]).unwrap();
        let b = kaplan_meier(&[2.0], &[true]).unwrap();
        // On [1, 2) curve a is 0 while b is still 1.
        assert_eq!(ks_statistic(&a, &b, &[1.0, 1.5, 2.0]).unwrap(), 1.0);
        // Before either event both curves are at 1.
        assert_eq!(ks_statistic(&a, &b, &[0.5]).unwrap(), 0.0);
        assert!(ks_statistic(&a, &b, &[]).is_err());
    }

    #[test]
    fn ks_is_symmetric_and_bounded() {
        let mut rng = seeded_rng(8);
        for _ in 0..20 {
            let na = rng.gen_range(1..20);
            let nb = rng.gen_range(1..20);
            let ta: Vec<f64> = (0..na).map(|_| rng.gen_range(0.0..10.0f64)).collect();
            let tb: Vec<f64> = (0..nb).map(|_| rng.gen_range(0.0..10.0f64)).collect();
            let ea: Vec<bool> = (0..na).map(|_| rng.gen_bool(0.7)).collect();
            let eb: Vec<bool> = (0..nb).map(|_| rng.gen_bool(0.7)).collect();
            let a = kaplan_meier(&ta, &ea).unwrap();
            let b = kaplan_meier(&tb, &eb).unwrap();
            let grid: Vec<f64> = (0..30).map(|i| i as f64 / 3.0).collect();
            let ab = ks_statistic(&a, &b, &grid).unwrap();
            let ba = ks_statistic(&b, &a, &grid).unwrap();
            assert_eq!(ab, ba);
            assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn restricted_times_and_usability() {
        assert_eq!(rmst(150.0, false, 120.0), (120.0, true));
        assert_eq!(rmst(80.0, true, 120.0), (80.0, true));
        assert_eq!(rmst(80.0, false, 120.0), (80.0, false));
    }

    #[test]
    fn mae_over_usable_pairs_only() {
        // Perfect predictions.
        let obs = vec![(10.0, true), (20.0, true)];
        assert_eq!(mae_rmst(&obs, &obs, 120.0).unwrap(), 0.0);
        // |100 − 110| = 10.
        let mae = mae_rmst(&[(100.0, true)], &[(110.0, true)], 120.0).unwrap();
        assert!((mae - 10.0).abs() < 1e-12);
        // A censored observation before the horizon is excluded; with no
        // usable pair left that's an error, not a silent zero.
        assert!(mae_rmst(&[(100.0, true)], &[(80.0, false)], 120.0).is_err());
        // The censored pair is skipped, the usable one counts.
        let mae = mae_rmst(
            &[(100.0, true), (50.0, true)],
            &[(80.0, false), (60.0, true)],
            120.0,
        )
        .unwrap();
        assert!((mae - 10.0).abs() < 1e-12);
    }

    fn cohort_from(xs: &[Vec<f64>], times: &[f64], events: &[bool]) -> Cohort {
        let subjects: Vec<Subject> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                Subject::new(format!("s{i}"), x.clone(), times[i], events[i], false).unwrap()
            })
            .collect();
        let names = (0..xs[0].len()).map(|j| format!("x{j}")).collect();
        Cohort::new(subjects, names).unwrap()
    }

    /// Seeded single-covariate instance with a real effect.
    fn cox_test_cohort(n: usize, seed: u64) -> Cohort {
        let mut rng = seeded_rng(seed);
        let mut xs = Vec::with_capacity(n);
        let mut times = Vec::with_capacity(n);
        let mut events = Vec::with_capacity(n);
        for _ in 0..n {
            let x = standard_normal(&mut rng);
            // Exponential baseline with hazard e^{0.8x}: t = E/exp(0.8x).
            let u: f64 = rng.gen_range(0.0f64..1.0).max(1e-12);
            times.push(-u.ln() / (0.8 * x).exp());
            events.push(rng.gen_bool(0.85));
            xs.push(vec![x]);
        }
        cohort_from(&xs, &times, &events)
    }

    #[test]
    fn cox_beta_matches_grid_search() {
        let cohort = cox_test_cohort(20, 17);
        let model = fit_cox(&cohort).unwrap();
        assert!(model.converged());

        let times = cohort.times();
        let events = cohort.events();
        let x = cohort.covariate_matrix();
        let mut best_beta = 0.0;
        let mut best_ll = f64::NEG_INFINITY;
        let mut b = -5.0;
        while b <= 5.0 {
            let ll = cox_log_partial_likelihood(&times, &events, x.view(), &[b]).unwrap();
            if ll > best_ll {
                best_ll = ll;
                best_beta = b;
            }
            b += 1e-4;
        }
        assert!(
            (model.beta()[0] - best_beta).abs() < 1e-3,
            "newton {} grid {}",
            model.beta()[0],
            best_beta
        );
    }

    #[test]
    fn cox_score_matches_finite_differences() {
        let cohort = cox_test_cohort(30, 21);
        // Add a second covariate so the gradient check is multivariate.
        let mut rng = seeded_rng(22);
        let xs: Vec<Vec<f64>> = cohort
            .subjects()
            .iter()
            .map(|s| vec![s.covariates()[0], standard_normal(&mut rng)])
            .collect();
        let cohort = cohort_from(&xs, &cohort.times(), &cohort.events());
        let times = cohort.times();
        let events = cohort.events();
        let x = cohort.covariate_matrix();

        for _ in 0..10 {
            let beta = [standard_normal(&mut rng), standard_normal(&mut rng)];
            let analytic = cox_score(&times, &events, x.view(), &beta).unwrap();
            for j in 0..2 {
                let h = 1e-5 * beta[j].abs().max(1.0);
                let mut up = beta;
                up[j] += h;
                let mut down = beta;
                down[j] -= h;
                let fd = (cox_log_partial_likelihood(&times, &events, x.view(), &up).unwrap()
                    - cox_log_partial_likelihood(&times, &events, x.view(), &down).unwrap())
                    / (2.0 * h);
                let rel = (fd - analytic[j]).abs() / analytic[j].abs().max(1.0);
                assert!(rel < 1e-6, "fd {fd} analytic {}", analytic[j]);
            }
        }
    }

    #[test]
    fn converged_fit_has_small_score_and_improves_on_zero() {
        let cohort = cox_test_cohort(40, 33);
        let model = fit_cox(&cohort).unwrap();
        assert!(model.converged());
        let times = cohort.times();
        let events = cohort.events();
        let x = cohort.covariate_matrix();
        let score = cox_score(&times, &events, x.view(), model.beta()).unwrap();
        let norm = score.iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "score norm {norm}");
        let ll_hat =
            cox_log_partial_likelihood(&times, &events, x.view(), model.beta()).unwrap();
        let ll_zero = cox_log_partial_likelihood(&times, &events, x.view(), &[0.0]).unwrap();
        assert!(ll_hat >= ll_zero);
    }

    #[test]
    fn constant_covariates_get_zero_coefficients() {
        let xs: Vec<Vec<f64>> = (0..10).map(|_| vec![7.0]).collect();
        let times: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let cohort = cohort_from(&xs, &times, &vec![true; 10]);
        let model = fit_cox(&cohort).unwrap();
        assert_eq!(model.beta(), &[0.0]);
        assert!(model.converged());
        assert_eq!(model.dropped(), &[true]);
        assert_eq!(model.iterations(), 0);
    }

    #[test]
    fn baseline_cumhaz_is_non_negative_and_non_decreasing() {
        let cohort = cox_test_cohort(40, 44);
        let model = fit_cox(&cohort).unwrap();
        let (times, cumhaz) = model.baseline();
        assert!(!cumhaz.is_empty());
        assert!(cumhaz[0] >= 0.0);
        for i in 1..cumhaz.len() {
            assert!(cumhaz[i] >= cumhaz[i - 1]);
            assert!(times[i] > times[i - 1]);
        }
    }

    #[test]
    fn no_events_is_an_error() {
        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let cohort = cohort_from(&xs, &[1.0, 2.0, 3.0, 4.0, 5.0], &[false; 5]);
        assert!(fit_cox(&cohort).is_err());
    }

    #[test]
    fn separable_data_is_flagged_not_looped() {
        // Perfectly ordered outcomes: the likelihood increases in β without
        // bound. The small covariate scale keeps the score away from zero
        // until ‖β‖ is large, so the norm guard has to fire.
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 10.0]).collect();
        let times: Vec<f64> = (0..8).map(|i| 8.0 - i as f64).collect();
        let cohort = cohort_from(&xs, &times, &vec![true; 8]);
        let model = fit_cox(&cohort).unwrap();
        assert!(!model.converged());
        assert!(predict_median_survival(&model, &[0.1]).is_err());
    }

    #[test]
    fn median_prediction_follows_the_definition() {
        let cohort = cox_test_cohort(60, 55);
        let model = fit_cox(&cohort).unwrap();
        let x = [0.3];
        let median = predict_median_survival(&model, &x).unwrap();
        let (times, _) = model.baseline();
        // First baseline time whose predicted survival is ≤ 1/2.
        let expected = times
            .iter()
            .copied()
            .find(|t| model.predicted_survival(&x, *t).unwrap() <= 0.5)
            .unwrap_or(f64::INFINITY);
        assert_eq!(median, expected);
        assert!(model.predicted_survival(&x, median).unwrap() <= 0.5);
    }

    #[test]
    fn median_prediction_decreases_with_risk() {
        let cohort = cox_test_cohort(60, 55);
        let model = fit_cox(&cohort).unwrap();
        assert!(model.beta()[0] > 0.0);
        let mut last = f64::INFINITY;
        for x in [-1.0, 0.0, 1.0, 2.0] {
            let median = predict_median_survival(&model, &[x]).unwrap();
            assert!(median <= last, "median should fall as risk rises");
            last = median;
        }
    }

    #[test]
    fn median_is_infinite_when_the_curve_stays_high() {
        // Two early events among ten subjects: baseline survival never
        // gets near 1/2.
        let xs: Vec<Vec<f64>> = (0..10).map(|_| vec![1.0]).collect();
        let mut times = vec![10.0; 10];
        times[0] = 1.0;
        times[1] = 2.0;
        let mut events = vec![false; 10];
        events[0] = true;
        events[1] = true;
        let cohort = cohort_from(&xs, &times, &events);
        let model = fit_cox(&cohort).unwrap();
        let median = predict_median_survival(&model, &[1.0]).unwrap();
        assert!(median.is_infinite());
    }

    #[test]
    fn zero_beta_median_tracks_the_sample_median() {
        // Constant covariate forces β = 0; the predicted median then comes
        // from the baseline alone and should sit near the sample median.
        let mut rng = seeded_rng(70);
        let n = 200;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0]).collect();
        let times: Vec<f64> = (0..n)
            .map(|_| (1.0 + 0.5 * standard_normal(&mut rng)).exp())
            .collect();
        let cohort = cohort_from(&xs, &times, &vec![true; n]);
        let model = fit_cox(&cohort).unwrap();
        let median = predict_median_survival(&model, &[1.0]).unwrap();
        let mut sorted = times.clone();
        sorted.sort_by(f64::total_cmp);
        let sample_median = sorted[n / 2];
        assert!(
            (median - sample_median).abs() / sample_median < 0.15,
            "predicted {median} sample {sample_median}"
        );
    }
}
