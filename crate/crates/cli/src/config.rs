//! Config-file loading, flag/file merging, and method-token parsing.
//!
//! Every command accepts `--config <json>` plus individual flags; flags win
//! over file values. Config files must carry `schema_version: 1` and reject
//! unknown keys, so typos fail loudly instead of silently using defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use survsc::data::CsvSchema;
use survsc::estimators::{Censoring, EstimatorKind, Method};
use survsc::experiment::MethodSpec;
use survsc::solver::SolverConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Errors split by exit code: usage problems (bad flags or config) exit
/// with 2, runtime failures with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

pub fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

impl From<survsc::Error> for CliError {
    fn from(e: survsc::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Loads and version-checks a JSON config file.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(usage(format!(
                "config {} has schema_version {v}, expected {SCHEMA_VERSION}",
                path.display()
            )))
        }
        None => {
            return Err(usage(format!(
                "config {} is missing the required schema_version field",
                path.display()
            )))
        }
    }
    serde_json::from_value(value)
        .map_err(|e| usage(format!("config {}: {e}", path.display())))
}

/// Optional per-field input-CSV section of a config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSection {
    pub id: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub time: Option<String>,
    pub event: Option<String>,
    pub treated: Option<String>,
}

/// Column flags shared by every command that reads a cohort CSV.
#[derive(Debug, Clone, clap::Args)]
pub struct CsvFlags {
    /// Comma-separated covariate column names.
    #[arg(long, value_delimiter = ',')]
    pub covariate_cols: Vec<String>,
    /// Survival-time column [default: time].
    #[arg(long)]
    pub time_col: Option<String>,
    /// Event-indicator column [default: event].
    #[arg(long)]
    pub event_col: Option<String>,
    /// Treatment-indicator column [default: treated].
    #[arg(long)]
    pub treated_col: Option<String>,
    /// Subject-id column [default: row numbers].
    #[arg(long)]
    pub id_col: Option<String>,
}

pub fn resolve_schema(flags: &CsvFlags, file: Option<&CsvSection>) -> Result<CsvSchema, CliError> {
    let file = file.cloned().unwrap_or_default();
    let covariates = if flags.covariate_cols.is_empty() {
        file.covariates.unwrap_or_default()
    } else {
        flags.covariate_cols.clone()
    };
    if covariates.is_empty() {
        return Err(usage(
            "no covariate columns given; use --covariate-cols or the config csv.covariates list",
        ));
    }
    Ok(CsvSchema {
        id: flags.id_col.clone().or(file.id),
        covariates,
        time: flags
            .time_col
            .clone()
            .or(file.time)
            .unwrap_or_else(|| "time".into()),
        event: flags
            .event_col
            .clone()
            .or(file.event)
            .unwrap_or_else(|| "event".into()),
        treated: flags
            .treated_col
            .clone()
            .or(file.treated)
            .unwrap_or_else(|| "treated".into()),
    })
}

/// Solver flags shared by the commands that build synthetic units.
#[derive(Debug, Clone, clap::Args)]
pub struct SolverFlags {
    /// Relative-improvement stopping tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Projected-gradient iteration cap per unit.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Donor-overlap penalty across targets.
    #[arg(long)]
    pub lambda_cov: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub lambda_cov: Option<f64>,
}

/// Batch-run defaults: looser than the library's, since curve-level metrics
/// don't need 1e-10 weights.
pub fn resolve_solver(
    flags: &SolverFlags,
    file: Option<&SolverSection>,
) -> Result<SolverConfig, CliError> {
    let file = file.cloned().unwrap_or_default();
    let mut config = SolverConfig::default();
    config.tol = flags.tol.or(file.tol).unwrap_or(1e-8);
    config.max_iters = flags.max_iters.or(file.max_iters).unwrap_or(2_000);
    config.lambda_cov = flags.lambda_cov.or(file.lambda_cov).unwrap_or(0.0);
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

/// Censoring flags shared by the unit-building commands.
#[derive(Debug, Clone, clap::Args)]
pub struct CensoringFlags {
    /// How donor censoring is handled: weighted_indicator or uncensored_only.
    #[arg(long)]
    pub censoring: Option<String>,
    /// Weighted event share at which a composite counts as an event.
    #[arg(long)]
    pub event_threshold: Option<f64>,
}

pub fn resolve_censoring(
    flags: &CensoringFlags,
    file_rule: Option<&str>,
    file_threshold: Option<f64>,
) -> Result<Censoring, CliError> {
    let rule = flags
        .censoring
        .as_deref()
        .or(file_rule)
        .unwrap_or("weighted_indicator");
    let threshold = flags.event_threshold.or(file_threshold).unwrap_or(0.5);
    match rule {
        "weighted_indicator" => {
            if !threshold.is_finite() || threshold <= 0.0 || threshold >= 1.0 {
                return Err(usage(format!(
                    "--event-threshold must lie in (0, 1), got {threshold}"
                )));
            }
            Ok(Censoring::WeightedIndicator { threshold })
        }
        "uncensored_only" => {
            if flags.event_threshold.is_some() || file_threshold.is_some() {
                return Err(usage(
                    "--event-threshold only applies to the weighted_indicator rule",
                ));
            }
            Ok(Censoring::UncensoredDonorsOnly)
        }
        other => Err(usage(format!(
            "unknown censoring rule {other:?}; expected weighted_indicator or uncensored_only"
        ))),
    }
}

/// Parses a method token: `nn`, `sc`, or `sc_log`, the latter two with an
/// optional `@<lambda_var>` suffix, e.g. `sc@0.25`.
pub fn parse_method(token: &str, base_solver: &SolverConfig) -> Result<MethodSpec, CliError> {
    let (name, lambda) = match token.split_once('@') {
        None => (token, 0.0),
        Some((name, raw)) => {
            let lambda: f64 = raw.parse().map_err(|_| {
                usage(format!("method {token:?}: {raw:?} is not a number"))
            })?;
            if !lambda.is_finite() || lambda < 0.0 {
                return Err(usage(format!(
                    "method {token:?}: lambda must be finite and non-negative"
                )));
            }
            (name, lambda)
        }
    };
    let method = match name {
        "nn" => {
            if token.contains('@') {
                return Err(usage("nn takes no lambda; drop the @ suffix"));
            }
            Method::NnMatch
        }
        "sc" => Method::ScNatural,
        "sc_log" => Method::ScLog,
        other => {
            return Err(usage(format!(
                "unknown method {other:?}; expected nn, sc, or sc_log"
            )))
        }
    };
    let mut solver = base_solver.clone();
    solver.lambda_var = lambda;
    Ok(MethodSpec {
        name: token.to_string(),
        kind: EstimatorKind::new(method, Censoring::default()),
        solver,
    })
}

pub fn parse_methods(
    tokens: &[String],
    base_solver: &SolverConfig,
    censoring: Censoring,
) -> Result<Vec<MethodSpec>, CliError> {
    if tokens.is_empty() {
        return Err(usage("at least one method is required"));
    }
    tokens
        .iter()
        .map(|t| {
            let mut spec = parse_method(t, base_solver)?;
            spec.kind.censoring = censoring;
            Ok(spec)
        })
        .collect()
}

/// Refuses output paths that collide with the input file.
pub fn check_input_not_clobbered(
    input: &Path,
    out_dir: &Path,
    names: &[&str],
) -> Result<(), CliError> {
    let input = input.canonicalize().unwrap_or_else(|_| input.to_path_buf());
    for name in names {
        let candidate: PathBuf = out_dir.join(name);
        let candidate = candidate
            .canonicalize()
            .unwrap_or(candidate);
        if candidate == input {
            return Err(usage(format!(
                "output file {name} would overwrite the input {}",
                input.display()
            )));
        }
    }
    Ok(())
}
