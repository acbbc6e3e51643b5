//! Simplex-constrained weight solvers.
//!
//! Weights minimize `‖x* − Σ w_j X_j‖² − λ_var ‖w‖²` over the probability
//! simplex via projected gradient descent with a fixed step from a Lipschitz
//! bound. λ_var = 0 is the plain synthetic control; large λ_var concentrates
//! all mass on the nearest neighbor. A group variant adds the overlap
//! penalty `λ_cov Σ_{k<l} w_k·w_l` and is solved by block-coordinate
//! descent, with the overlap term linear in each row given the others.

use std::sync::Arc;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::SubjectId;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};
use crate::weights::{WeightMatrix, WeightVector};

/// Iterates whose largest coordinate moves less than this are treated as
/// stationary. The relative-improvement test alone cannot certify tight
/// residuals on exactly matchable targets, where the optimum is zero.
const MOVE_TOL: f64 = 1e-13;

/// Cap on block-coordinate sweeps for the group solver.
const MAX_SWEEPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    NearestNeighbor,
    Uniform,
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Variance penalty λ_var ≥ 0; subtracted, so it rewards concentration.
    pub lambda_var: f64,
    /// Overlap penalty λ_cov ≥ 0 between weight rows in group solves.
    pub lambda_cov: f64,
    pub max_iters: usize,
    /// Relative objective-improvement stopping threshold.
    pub tol: f64,
    pub init: Init,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda_var: 0.0,
            lambda_cov: 0.0,
            max_iters: 10_000,
            tol: 1e-10,
            init: Init::NearestNeighbor,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda_var.is_finite() || self.lambda_var < 0.0 {
            return Err(Error::InvalidInput(format!(
                "lambda_var must be finite and >= 0, got {}",
                self.lambda_var
            )));
        }
        if !self.lambda_cov.is_finite() || self.lambda_cov < 0.0 {
            return Err(Error::InvalidInput(format!(
                "lambda_cov must be finite and >= 0, got {}",
                self.lambda_cov
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "tol must be finite and > 0, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub weights: WeightVector,
    /// False when the iteration cap was hit before the stopping rule; the
    /// best iterate is still returned.
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSolveResult {
    pub weights: WeightMatrix,
    pub converged: bool,
    pub sweeps: usize,
    pub objective: f64,
}

fn check_pool(
    target: &[f64],
    donors: ArrayView2<'_, f64>,
    donor_ids: &[SubjectId],
) -> Result<()> {
    let (m, d) = donors.dim();
    if m == 0 {
        return Err(Error::Empty("donor pool is empty".into()));
    }
    if target.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "target has {} covariates, donors have {}",
            target.len(),
            d
        )));
    }
    if donor_ids.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} donor rows but {} donor ids",
            m,
            donor_ids.len()
        )));
    }
    if target.iter().any(|x| !x.is_finite()) || donors.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("covariates must be finite".into()));
    }
    Ok(())
}

/// One-hot weights on the donor with the smallest Euclidean distance to the
/// target; ties go to the lowest index.
pub fn nearest_neighbor(
    target: &[f64],
    donors: ArrayView2<'_, f64>,
    donor_ids: impl Into<Arc<Vec<SubjectId>>>,
) -> Result<WeightVector> {
    let donor_ids = donor_ids.into();
    check_pool(target, donors.view(), &donor_ids)?;
    WeightVector::one_hot(nearest_index(target, donors.view()), donor_ids)
}

fn nearest_index(target: &[f64], donors: ArrayView2<'_, f64>) -> usize {
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (j, row) in donors.outer_iter().enumerate() {
        let dist: f64 = row
            .iter()
            .zip(target)
            .map(|(x, t)| (x - t) * (x - t))
            .sum();
        if dist < best_dist {
            best = j;
            best_dist = dist;
        }
    }
    best
}

/// Euclidean projection onto the probability simplex (sorting algorithm).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_to_simplex_in_place(&mut out, &mut v.to_vec());
    out
}

/// `scratch` is clobbered; it only needs the same length as `w`.
fn project_to_simplex_in_place(w: &mut [f64], scratch: &mut [f64]) {
    scratch.copy_from_slice(w);
    scratch.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, u) in scratch.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for x in w.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Gershgorin upper bound on the largest eigenvalue of `AᵀA`; safe (never
/// below the true value) and cheap, at the cost of a somewhat smaller step.
fn gram_eigen_bound(donors: ArrayView2<'_, f64>) -> f64 {
    let d = donors.ncols();
    let mut gram = vec![0.0f64; d * d];
    for row in donors.outer_iter() {
        for a in 0..d {
            let ra = row[a];
            for b in 0..d {
                gram[a * d + b] += ra * row[b];
            }
        }
    }
    let mut bound = 0.0f64;
    for a in 0..d {
        let row_sum: f64 = (0..d).map(|b| gram[a * d + b].abs()).sum();
        bound = bound.max(row_sum);
    }
    bound
}

/// The penalized block objective: `‖x* − Aᵀw‖² − λ_var‖w‖² + c·w`, where the
/// linear term carries the overlap penalty against other rows (empty slice
/// when solving a single unit).
struct BlockProblem<'a> {
    target: &'a [f64],
    donors: ArrayView2<'a, f64>,
    lambda_var: f64,
    linear: &'a [f64],
}

impl BlockProblem<'_> {
    fn residual(&self, w: &[f64], r: &mut [f64]) {
        r.fill(0.0);
        for (wj, row) in w.iter().zip(self.donors.outer_iter()) {
            if *wj != 0.0 {
                for (rk, x) in r.iter_mut().zip(row) {
                    *rk += wj * x;
                }
            }
        }
        for (rk, t) in r.iter_mut().zip(self.target) {
            *rk -= t;
        }
    }

    fn objective(&self, w: &[f64], r: &mut [f64]) -> f64 {
        self.residual(w, r);
        let fit: f64 = r.iter().map(|x| x * x).sum();
        let norm: f64 = w.iter().map(|x| x * x).sum();
        let lin: f64 = if self.linear.is_empty() {
            0.0
        } else {
            w.iter().zip(self.linear).map(|(a, b)| a * b).sum()
        };
        fit - self.lambda_var * norm + lin
    }

    /// grad = 2A(Aᵀw − x*) − 2λ_var w + c, with r = Aᵀw − x* already formed.
    fn gradient(&self, w: &[f64], r: &[f64], grad: &mut [f64]) {
        for ((g, row), wj) in grad.iter_mut().zip(self.donors.outer_iter()).zip(w) {
            let dot: f64 = row.iter().zip(r).map(|(x, rk)| x * rk).sum();
            *g = 2.0 * dot - 2.0 * self.lambda_var * wj;
        }
        if !self.linear.is_empty() {
            for (g, c) in grad.iter_mut().zip(self.linear) {
                *g += c;
            }
        }
    }
}

struct PgdOutcome {
    weights: Vec<f64>,
    converged: bool,
    iterations: usize,
    objective: f64,
}

fn pgd(problem: &BlockProblem<'_>, init: Vec<f64>, max_iters: usize, tol: f64) -> PgdOutcome {
    let m = init.len();
    let d = problem.target.len();
    let step = {
        let lipschitz = 2.0 * (gram_eigen_bound(problem.donors.view()) + problem.lambda_var);
        1.0 / lipschitz.max(1e-12)
    };

    let mut w = init;
    let mut r = vec![0.0; d];
    let mut grad = vec![0.0; m];
    let mut next = vec![0.0; m];
    let mut scratch = vec![0.0; m];

    let mut f = problem.objective(&w, &mut r);
    let mut best_w = w.clone();
    let mut best_f = f;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=max_iters {
        iterations = iter;
        problem.gradient(&w, &r, &mut grad);
        for ((n, x), g) in next.iter_mut().zip(&w).zip(&grad) {
            *n = x - step * g;
        }
        project_to_simplex_in_place(&mut next, &mut scratch);

        let f_next = problem.objective(&next, &mut r);
        let max_move = next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);

        let improvement = f - f_next;
        std::mem::swap(&mut w, &mut next);
        if f_next < best_f {
            best_f = f_next;
            best_w.copy_from_slice(&w);
        }
        f = f_next;

        if improvement <= tol * f.abs() || max_move < MOVE_TOL {
            converged = true;
            break;
        }
    }

    PgdOutcome {
        weights: best_w,
        converged,
        iterations,
        objective: best_f,
    }
}

fn initial_weights(
    target: &[f64],
    donors: ArrayView2<'_, f64>,
    init: Init,
    row: usize,
) -> Vec<f64> {
    let m = donors.nrows();
    match init {
        Init::NearestNeighbor => {
            let mut w = vec![0.0; m];
            w[nearest_index(target, donors)] = 1.0;
            w
        }
        Init::Uniform => vec![1.0 / m as f64; m],
        Init::Random(seed) => {
            let mut rng = seeded_rng(derive_seed(seed, row as u64));
            let mut w: Vec<f64> = (0..m)
                .map(|_| -f64::ln(1.0 - rand::Rng::gen_range(&mut rng, 0.0..1.0)))
                .collect();
            let sum: f64 = w.iter().sum();
            if sum > 0.0 {
                for x in &mut w {
                    *x /= sum;
                }
            } else {
                w.fill(1.0 / m as f64);
            }
            w
        }
    }
}

/// Penalized synthetic-control weights for a single target.
///
/// The objective at the returned weights never exceeds the objective at the
/// initial point. Hitting the iteration cap is flagged via `converged`, not
/// an error.
pub fn solve_sc_weights(
    target: &[f64],
    donors: ArrayView2<'_, f64>,
    donor_ids: impl Into<Arc<Vec<SubjectId>>>,
    config: &SolverConfig,
) -> Result<SolveResult> {
    let donor_ids = donor_ids.into();
    config.validate()?;
    check_pool(target, donors.view(), &donor_ids)?;

    if donors.nrows() == 1 {
        let weights = WeightVector::one_hot(0, donor_ids)?;
        let problem = BlockProblem {
            target,
            donors: donors.view(),
            lambda_var: config.lambda_var,
            linear: &[],
        };
        let objective = problem.objective(weights.weights(), &mut vec![0.0; target.len()]);
        return Ok(SolveResult {
            weights,
            converged: true,
            iterations: 0,
            objective,
        });
    }

    let problem = BlockProblem {
        target,
        donors: donors.view(),
        lambda_var: config.lambda_var,
        linear: &[],
    };
    let init = initial_weights(target, donors.view(), config.init, 0);
    let out = pgd(&problem, init, config.max_iters, config.tol);
    Ok(SolveResult {
        weights: WeightVector::new(out.weights, donor_ids)?,
        converged: out.converged,
        iterations: out.iterations,
        objective: out.objective,
    })
}

fn joint_objective(
    targets: ArrayView2<'_, f64>,
    donors: ArrayView2<'_, f64>,
    rows: &[Vec<f64>],
    lambda_var: f64,
    lambda_cov: f64,
) -> f64 {
    let d = donors.ncols();
    let mut r = vec![0.0; d];
    let mut total = 0.0;
    for (k, w) in rows.iter().enumerate() {
        let target: Vec<f64> = targets.row(k).to_vec();
        let problem = BlockProblem {
            target: &target,
            donors: donors.view(),
            lambda_var,
            linear: &[],
        };
        total += problem.objective(w, &mut r);
    }
    for k in 0..rows.len() {
        for l in (k + 1)..rows.len() {
            let dot: f64 = rows[k].iter().zip(&rows[l]).map(|(a, b)| a * b).sum();
            total += lambda_cov * dot;
        }
    }
    total
}

/// Joint weights for several targets sharing a donor pool.
///
/// With `lambda_cov = 0` the rows are independent single-unit solves. With
/// `lambda_cov > 0` the rows are updated by block-coordinate descent: each
/// block sees the overlap penalty as a linear term against the sum of the
/// other rows, so every sweep is a set of penalized single-unit solves and
/// the joint objective is non-increasing across sweeps.
pub fn solve_group_weights(
    targets: ArrayView2<'_, f64>,
    donors: ArrayView2<'_, f64>,
    donor_ids: impl Into<Arc<Vec<SubjectId>>>,
    config: &SolverConfig,
) -> Result<GroupSolveResult> {
    let donor_ids = donor_ids.into();
    config.validate()?;
    let n = targets.nrows();
    if n == 0 {
        return Err(Error::Empty("no targets to solve for".into()));
    }
    if targets.ncols() != donors.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "targets have {} covariates, donors have {}",
            targets.ncols(),
            donors.ncols()
        )));
    }

    if config.lambda_cov == 0.0 || n == 1 {
        let mut rows = Vec::with_capacity(n);
        let mut converged = true;
        let mut objective = 0.0;
        for k in 0..n {
            let target: Vec<f64> = targets.row(k).to_vec();
            let solved = solve_sc_weights(&target, donors, donor_ids.clone(), config)?;
            converged &= solved.converged;
            objective += solved.objective;
            rows.push(solved.weights);
        }
        return Ok(GroupSolveResult {
            weights: WeightMatrix::new(rows)?,
            converged,
            sweeps: 1,
            objective,
        });
    }

    let first_target: Vec<f64> = targets.row(0).to_vec();
    check_pool(&first_target, donors.view(), &donor_ids)?;
    let m = donors.nrows();

    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let target: Vec<f64> = targets.row(k).to_vec();
            initial_weights(&target, donors.view(), config.init, k)
        })
        .collect();
    let mut weight_total: Vec<f64> = (0..m)
        .map(|j| rows.iter().map(|w| w[j]).sum())
        .collect();

    let mut f = joint_objective(
        targets.view(),
        donors.view(),
        &rows,
        config.lambda_var,
        config.lambda_cov,
    );
    let mut converged = false;
    let mut sweeps = 0;
    let mut linear = vec![0.0; m];
    let mut rows_converged = true;

    for sweep in 1..=MAX_SWEEPS {
        sweeps = sweep;
        rows_converged = true;
        for k in 0..n {
            let target: Vec<f64> = targets.row(k).to_vec();
            for j in 0..m {
                linear[j] = config.lambda_cov * (weight_total[j] - rows[k][j]);
            }
            let problem = BlockProblem {
                target: &target,
                donors: donors.view(),
                lambda_var: config.lambda_var,
                linear: &linear,
            };
            let out = pgd(&problem, rows[k].clone(), config.max_iters, config.tol);
            rows_converged &= out.converged;
            for j in 0..m {
                weight_total[j] += out.weights[j] - rows[k][j];
            }
            rows[k] = out.weights;
        }

        let f_next = joint_objective(
            targets.view(),
            donors.view(),
            &rows,
            config.lambda_var,
            config.lambda_cov,
        );
        let improvement = f - f_next;
        f = f_next;
        if improvement <= config.tol * f.abs() {
            converged = true;
            break;
        }
    }

    let pool = donor_ids;
    let rows = rows
        .into_iter()
        .map(|w| WeightVector::new(w, pool.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupSolveResult {
        weights: WeightMatrix::new(rows)?,
        converged: converged && rows_converged,
        sweeps,
        objective: f,
    })
}
