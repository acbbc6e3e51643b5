//! Simplex weight vectors over donor pools.
//!
//! A [`WeightVector`] is a validated point on the probability simplex tied
//! to an ordered donor pool. Its squared norm is the variance factor of the
//! composite it defines: 1 for a one-hot match, 1/m for uniform weights.

use std::sync::Arc;

use crate::data::SubjectId;
use crate::error::{Error, Result};

/// Weights at or below this value are treated as numerically zero when
/// reporting support; the solver cannot distinguish them from inactive
/// donors. Diagnostic only, never used to renormalize.
pub const SUPPORT_EPSILON: f64 = 1e-6;

const SUM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
    donor_ids: Arc<Vec<SubjectId>>,
    l2_sq: f64,
    support: Vec<usize>,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>, donor_ids: impl Into<Arc<Vec<SubjectId>>>) -> Result<Self> {
        let donor_ids = donor_ids.into();
        let m = weights.len();
        if m == 0 {
            return Err(Error::Empty("weight vector has no donors".into()));
        }
        if donor_ids.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{} weights but {} donor ids",
                m,
                donor_ids.len()
            )));
        }
        for (j, w) in weights.iter().enumerate() {
            if !w.is_finite() || *w < 0.0 || *w > 1.0 + 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "weight {j} = {w} is outside [0, 1]"
                )));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "weights sum to {sum}, not 1"
            )));
        }
        let l2_sq: f64 = weights.iter().map(|w| w * w).sum();
        let lower = 1.0 / m as f64;
        if l2_sq < lower - SUM_TOL || l2_sq > 1.0 + SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "sum of squared weights {l2_sq} is outside [1/{m}, 1]"
            )));
        }
        let support = weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > SUPPORT_EPSILON)
            .map(|(j, _)| j)
            .collect();
        Ok(WeightVector {
            weights,
            donor_ids,
            l2_sq,
            support,
        })
    }

    /// All mass on donor `index`.
    pub fn one_hot(index: usize, donor_ids: impl Into<Arc<Vec<SubjectId>>>) -> Result<Self> {
        let donor_ids = donor_ids.into();
        if index >= donor_ids.len() {
            return Err(Error::InvalidInput(format!(
                "one-hot index {index} out of range for {} donors",
                donor_ids.len()
            )));
        }
        let mut weights = vec![0.0; donor_ids.len()];
        weights[index] = 1.0;
        WeightVector::new(weights, donor_ids)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn donor_ids(&self) -> &[SubjectId] {
        &self.donor_ids
    }

    pub fn donor_pool(&self) -> &Arc<Vec<SubjectId>> {
        &self.donor_ids
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Indices of donors with weight above [`SUPPORT_EPSILON`].
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Sum of squared weights, cached at construction.
    pub fn l2_sq(&self) -> f64 {
        self.l2_sq
    }

    /// Variance factor of the composite this vector defines: the scale on
    /// the donor noise variance, between 1/m (uniform) and 1 (one-hot).
    pub fn variance_factor(&self) -> f64 {
        self.l2_sq
    }

    /// Overlap between two composites on the same donor pool: the sum over
    /// donors of the product of their weights.
    pub fn covariance_factor(&self, other: &WeightVector) -> Result<f64> {
        let same_pool = Arc::ptr_eq(&self.donor_ids, &other.donor_ids)
            || self.donor_ids == other.donor_ids;
        if !same_pool {
            return Err(Error::InvalidInput(
                "weight vectors are over different donor pools".into(),
            ));
        }
        Ok(self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| a * b)
            .sum())
    }
}

/// Per-treated-unit weight rows over one shared donor pool.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: Vec<WeightVector>,
    donor_ids: Arc<Vec<SubjectId>>,
}

impl WeightMatrix {
    pub fn new(rows: Vec<WeightVector>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Empty("weight matrix has no rows".into()))?;
        let donor_ids = first.donor_pool().clone();
        for row in &rows[1..] {
            if !Arc::ptr_eq(row.donor_pool(), &donor_ids) && *row.donor_ids != *donor_ids {
                return Err(Error::InvalidInput(
                    "weight matrix rows are over different donor pools".into(),
                ));
            }
        }
        Ok(WeightMatrix { rows, donor_ids })
    }

    pub fn rows(&self) -> &[WeightVector] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &WeightVector {
        &self.rows[i]
    }

    pub fn n_units(&self) -> usize {
        self.rows.len()
    }

    pub fn donor_ids(&self) -> &[SubjectId] {
        &self.donor_ids
    }
}
