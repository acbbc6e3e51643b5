//! Subjects, cohorts, and covariate preprocessing.
//!
//! A [`Cohort`] is an immutable collection of subjects sharing a covariate
//! schema. CSV loading maps columns by name, covariates are z-scored with
//! statistics fitted on the control pool, and [`pairwise_distance`] is the
//! mean squared coordinate difference used for donor exclusion.

use std::fmt;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubjectId(String);

impl SubjectId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for SubjectId {
    fn from(s: &str) -> Self {
        SubjectId(s.to_owned())
    }
}

impl From<String> for SubjectId {
    fn from(s: String) -> Self {
        SubjectId(s)
    }
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One observation: covariates plus a possibly censored survival time.
///
/// `time` is the observed (event or censoring) time; `event` is true when
/// the subject experienced the event rather than being censored.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    id: SubjectId,
    covariates: Vec<f64>,
    time: f64,
    event: bool,
    treated: bool,
}

impl Subject {
    pub fn new(
        id: impl Into<SubjectId>,
        covariates: Vec<f64>,
        time: f64,
        event: bool,
        treated: bool,
    ) -> Result<Self> {
        if !time.is_finite() || time < 0.0 {
            return Err(Error::InvalidInput(format!(
                "subject time must be finite and non-negative, got {time}"
            )));
        }
        if covariates.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "subject covariates must be finite (missing values are rejected)".into(),
            ));
        }
        Ok(Subject {
            id: id.into(),
            covariates,
            time,
            event,
            treated,
        })
    }

    pub fn id(&self) -> &SubjectId {
        &self.id
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn event(&self) -> bool {
        self.event
    }

    pub fn treated(&self) -> bool {
        self.treated
    }
}

/// Per-feature z-scoring statistics, stored so that later data (for example
/// treated units) can be transformed with the same control-pool scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    subjects: Vec<Subject>,
    feature_names: Vec<String>,
    normalization: Option<Vec<FeatureStats>>,
}

impl Cohort {
    pub fn new(subjects: Vec<Subject>, feature_names: Vec<String>) -> Result<Self> {
        let d = feature_names.len();
        for s in &subjects {
            if s.covariates.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "subject {} has {} covariates, schema has {}",
                    s.id,
                    s.covariates.len(),
                    d
                )));
            }
        }
        Ok(Cohort {
            subjects,
            feature_names,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Z-scoring statistics if [`normalize_covariates`] has been applied;
    /// expressed relative to the original (raw) scale.
    pub fn normalization(&self) -> Option<&[FeatureStats]> {
        self.normalization.as_deref()
    }

    pub fn times(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.subjects.iter().map(|s| s.event).collect()
    }

    pub fn ids(&self) -> Vec<SubjectId> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }

    /// Row-per-subject covariate matrix.
    pub fn covariate_matrix(&self) -> Array2<f64> {
        let n = self.subjects.len();
        let d = self.feature_names.len();
        let mut m = Array2::zeros((n, d));
        for (i, s) in self.subjects.iter().enumerate() {
            for (j, x) in s.covariates.iter().enumerate() {
                m[[i, j]] = *x;
            }
        }
        m
    }

    /// Splits into (treated, untreated) cohorts, both keeping the schema and
    /// any normalization statistics.
    pub fn split_by_treatment(&self) -> (Cohort, Cohort) {
        let (treated, untreated): (Vec<Subject>, Vec<Subject>) =
            self.subjects.iter().cloned().partition(|s| s.treated);
        let make = |subjects| Cohort {
            subjects,
            feature_names: self.feature_names.clone(),
            normalization: self.normalization.clone(),
        };
        (make(treated), make(untreated))
    }

    /// Keeps the subjects at `keep` (in the given order), preserving schema
    /// and normalization.
    pub fn select(&self, keep: &[usize]) -> Result<Cohort> {
        let mut subjects = Vec::with_capacity(keep.len());
        for &i in keep {
            let s = self.subjects.get(i).ok_or_else(|| {
                Error::InvalidInput(format!("subject index {i} out of range"))
            })?;
            subjects.push(s.clone());
        }
        Ok(Cohort {
            subjects,
            feature_names: self.feature_names.clone(),
            normalization: self.normalization.clone(),
        })
    }
}

/// Name-based column mapping for [`load_cohort_csv`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Optional id column; row numbers are used when absent.
    #[serde(default)]
    pub id: Option<String>,
    pub covariates: Vec<String>,
    pub time: String,
    pub event: String,
    pub treated: String,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
}

fn parse_f64(field: &str, column: &str, row: usize) -> Result<f64> {
    let value: f64 = field.trim().parse().map_err(|_| Error::Row {
        row,
        message: format!("column '{column}': cannot parse '{field}' as a number"),
    })?;
    if !value.is_finite() {
        return Err(Error::Row {
            row,
            message: format!("column '{column}': value '{field}' is not finite"),
        });
    }
    Ok(value)
}

fn parse_bool01(field: &str, column: &str, row: usize) -> Result<bool> {
    let t = field.trim();
    if t == "1" || t.eq_ignore_ascii_case("true") {
        Ok(true)
    } else if t == "0" || t.eq_ignore_ascii_case("false") {
        Ok(false)
    } else {
        Err(Error::Row {
            row,
            message: format!("column '{column}': expected 0/1/true/false, got '{field}'"),
        })
    }
}

/// Loads a cohort from a headed CSV file using a name-based column mapping.
///
/// All configured covariate columns are parsed as numbers; categorical
/// encoding is left to upstream preprocessing. Row numbers in errors refer
/// to data rows, starting at 1.
pub fn load_cohort_csv(path: &Path, schema: &CsvSchema) -> Result<Cohort> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();

    let id_idx = schema.id.as_deref().map(|c| column_index(&headers, c)).transpose()?;
    let cov_idx: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<_>>()?;
    let time_idx = column_index(&headers, &schema.time)?;
    let event_idx = column_index(&headers, &schema.event)?;
    let treated_idx = column_index(&headers, &schema.treated)?;

    let get = |record: &csv::StringRecord, idx: usize, column: &str, row: usize| -> Result<String> {
        record
            .get(idx)
            .map(str::to_owned)
            .ok_or_else(|| Error::Row {
                row,
                message: format!("column '{column}': missing value"),
            })
    };

    let mut subjects = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;

        let id = match id_idx {
            Some(idx) => get(&record, idx, schema.id.as_deref().unwrap(), row)?,
            None => row.to_string(),
        };
        let mut covariates = Vec::with_capacity(cov_idx.len());
        for (idx, name) in cov_idx.iter().zip(&schema.covariates) {
            covariates.push(parse_f64(&get(&record, *idx, name, row)?, name, row)?);
        }
        let time = parse_f64(&get(&record, time_idx, &schema.time, row)?, &schema.time, row)?;
        if time < 0.0 {
            return Err(Error::Row {
                row,
                message: format!("column '{}': time is negative ({time})", schema.time),
            });
        }
        let event = parse_bool01(&get(&record, event_idx, &schema.event, row)?, &schema.event, row)?;
        let treated = parse_bool01(
            &get(&record, treated_idx, &schema.treated, row)?,
            &schema.treated,
            row,
        )?;

        subjects.push(Subject::new(id, covariates, time, event, treated)?);
    }

    Cohort::new(subjects, schema.covariates.clone())
}

/// Z-scores every covariate column with population statistics fitted on the
/// untreated subjects (the whole cohort when none are untreated), so treated
/// units are expressed on the control-pool scale.
///
/// Constant columns map to 0 and their SD is recorded as 1. Statistics are
/// composed with any previous normalization, so the stored stats always
/// refer to the original scale and re-normalizing is the identity map.
pub fn normalize_covariates(cohort: &Cohort) -> Result<Cohort> {
    if cohort.is_empty() {
        return Err(Error::Empty("cannot normalize an empty cohort".into()));
    }
    let d = cohort.n_features();
    let fit: Vec<&Subject> = {
        let untreated: Vec<&Subject> = cohort.subjects.iter().filter(|s| !s.treated).collect();
        if untreated.is_empty() {
            cohort.subjects.iter().collect()
        } else {
            untreated
        }
    };
    let n_fit = fit.len() as f64;

    let mut stats = Vec::with_capacity(d);
    for j in 0..d {
        let mean = fit.iter().map(|s| s.covariates[j]).sum::<f64>() / n_fit;
        let var = fit
            .iter()
            .map(|s| {
                let dev = s.covariates[j] - mean;
                dev * dev
            })
            .sum::<f64>()
            / n_fit;
        let sd = var.sqrt();
        stats.push(FeatureStats {
            mean,
            sd: if sd == 0.0 { 1.0 } else { sd },
        });
    }

    let subjects = cohort
        .subjects
        .iter()
        .map(|s| {
            let covariates = s
                .covariates
                .iter()
                .zip(&stats)
                .map(|(x, st)| (x - st.mean) / st.sd)
                .collect();
            Subject {
                id: s.id.clone(),
                covariates,
                time: s.time,
                event: s.event,
                treated: s.treated,
            }
        })
        .collect();

    let normalization = match cohort.normalization.as_ref() {
        None => stats,
        // prev maps raw -> current, stats maps current -> new; compose so the
        // stored stats still map raw -> new.
        Some(prev) => prev
            .iter()
            .zip(&stats)
            .map(|(p, n)| FeatureStats {
                mean: p.mean + p.sd * n.mean,
                sd: p.sd * n.sd,
            })
            .collect(),
    };

    Ok(Cohort {
        subjects,
        feature_names: cohort.feature_names.clone(),
        normalization: Some(normalization),
    })
}

/// Mean squared coordinate difference between two covariate vectors.
pub fn pairwise_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "covariate vectors have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Empty("covariate vectors are empty".into()));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}
