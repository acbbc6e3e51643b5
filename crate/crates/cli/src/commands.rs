//! The four batch commands.
//!
//! Each command resolves flags over an optional config file, runs the core
//! library, and writes CSV tables plus a `run_config.json` sidecar holding
//! the fully resolved parameters, so any output directory can be reproduced
//! from its artifacts alone.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use survsc::data::{
    load_cohort_csv, normalize_covariates, Cohort, CsvSchema, SubjectId,
};
use survsc::dgp::{
    bias_decomposition, lognormal_bias_oracle, mu0, simulate_with_rng, stylized_scenario,
    OutcomeScale, Scenario, ScenarioInstance,
};
use survsc::estimators::{
    debiased_log_sc, log_sc_outcome, synthetic_outcome, Method, SyntheticUnit,
};
use survsc::experiment::{
    cross_validate_lambda, run_negative_control_eval, summarize_reports, CvConfig, CvMetric,
    EvalConfig, MethodSpec,
};
use survsc::rng::seeded_rng;
use survsc::solver::{nearest_neighbor, solve_sc_weights, SolverConfig};
use survsc::survival::kaplan_meier;
use survsc::weights::WeightVector;

use crate::config::{
    check_input_not_clobbered, load_config, parse_method, parse_methods, resolve_censoring,
    resolve_schema, resolve_solver, usage, CensoringFlags, CliError, CsvFlags, CsvSection,
    SolverFlags, SolverSection, SCHEMA_VERSION,
};
use crate::output::{format_float, StagedOutput};

/// Schema-level errors (missing columns, bad method names) are the user's
/// to fix; everything else is a runtime failure.
fn load_input(path: &Path, schema: &CsvSchema) -> Result<Cohort, CliError> {
    load_cohort_csv(path, schema).map_err(|e| match e {
        survsc::Error::Schema(_) => usage(format!("{}: {e}", path.display())),
        other => CliError::Runtime(format!("{}: {other}", path.display())),
    })
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// ---------------------------------------------------------------------------
// sim-bias

#[derive(Debug, Args)]
pub struct SimBiasArgs {
    /// Scenario: nonlinear_region, linear_region, lognormal, or
    /// additive_linear.
    #[arg(long)]
    scenario: Option<String>,
    /// Noise scale; only the lognormal scenario takes one.
    #[arg(long)]
    sigma: Option<f64>,
    /// Monte-Carlo draws [default: 10000].
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimBiasFile {
    #[allow(dead_code)]
    schema_version: u32,
    scenario: Option<String>,
    sigma: Option<f64>,
    draws: Option<usize>,
}

#[derive(Debug, Serialize)]
struct SimBiasResolved<'a> {
    schema_version: u32,
    command: &'a str,
    scenario: &'a str,
    sigma: f64,
    draws: usize,
    seed: u64,
    solver: SolverConfig,
    sc_weights: Vec<f64>,
    nn_index: usize,
}

fn parse_scenario(token: &str, sigma: Option<f64>) -> Result<Scenario, CliError> {
    if let Some(s) = sigma {
        if token != "lognormal" {
            return Err(usage("--sigma only applies to the lognormal scenario"));
        }
        if !s.is_finite() || s < 0.0 {
            return Err(usage(format!(
                "sigma must be finite and non-negative, got {s}"
            )));
        }
    }
    match token {
        "nonlinear_region" => Ok(Scenario::NonlinearRegion),
        "linear_region" => Ok(Scenario::LinearRegion),
        "lognormal" => {
            let sigma = sigma.ok_or_else(|| usage("the lognormal scenario needs --sigma"))?;
            Ok(Scenario::Lognormal { sigma })
        }
        "additive_linear" => Ok(Scenario::AdditiveLinear),
        other => Err(usage(format!(
            "unknown scenario {other:?}; expected nonlinear_region, linear_region, \
             lognormal, or additive_linear"
        ))),
    }
}

pub fn run_sim_bias(args: &SimBiasArgs) -> Result<(), CliError> {
    let file: SimBiasFile = match &args.config {
        Some(path) => load_config(path)?,
        None => SimBiasFile::default(),
    };
    let token = args
        .scenario
        .clone()
        .or(file.scenario)
        .ok_or_else(|| usage("missing --scenario"))?;
    let sigma_arg = args.sigma.or(file.sigma);
    let draws = args.draws.or(file.draws).unwrap_or(10_000);
    if draws == 0 {
        return Err(usage("--draws must be at least 1"));
    }
    let scenario = parse_scenario(&token, sigma_arg)?;
    let instance = stylized_scenario(scenario)?;
    let spec = &instance.spec;
    let sigma = spec.noise.sigma();

    let donor_ids: Arc<Vec<SubjectId>> = Arc::new(
        (1..=instance.donors.nrows())
            .map(|i| SubjectId::from(format!("d{i}")))
            .collect(),
    );
    let solver = SolverConfig::default();
    let sc = solve_sc_weights(&instance.target, instance.donors.view(), donor_ids.clone(), &solver)?;
    let nn = nearest_neighbor(&instance.target, instance.donors.view(), donor_ids)?;
    let estimates = monte_carlo_estimates(&instance, &sc.weights, &nn, draws, args.seed)?;
    let truth = mu0(spec, &instance.target)?;

    let mut rows: Vec<(String, f64)> = vec![
        ("sc".into(), bias_decomposition(spec, &instance.target, instance.donors.view(), &sc.weights)?.total),
    ];
    if matches!(spec.scale, OutcomeScale::LogLinear) {
        let mu_star = dot(&spec.beta, &instance.target);
        let donor_mus: Vec<f64> = instance
            .donors
            .outer_iter()
            .map(|row| dot(&spec.beta, row.as_slice().expect("row is contiguous")))
            .collect();
        let oracle = lognormal_bias_oracle(sigma, mu_star, &donor_mus, &sc.weights, None)?;
        rows.push(("sc_log".into(), oracle.log_sc));
        if sigma > 0.0 {
            rows.push(("sc_log_debiased".into(), oracle.debiased_log_sc));
        }
    }
    rows.push((
        "nn".into(),
        bias_decomposition(spec, &instance.target, instance.donors.view(), &nn)?.total,
    ));

    let mut staged = StagedOutput::new(&args.out_dir)?;
    let table = staged.stage("bias_table.csv");
    let mut writer = csv::Writer::from_path(&table)?;
    writer.write_record(["estimator", "sigma", "mc_bias", "oracle_bias", "mc_se", "n_draws"])?;
    for (name, oracle_bias) in &rows {
        let series = estimates
            .series(name)
            .expect("every reported estimator was simulated");
        let (mean, se) = mean_and_se(series);
        writer.write_record([
            name.clone(),
            format_float(sigma),
            format_float(truth - mean),
            format_float(*oracle_bias),
            format_float(se),
            draws.to_string(),
        ])?;
    }
    writer.flush()?;
    drop(writer);

    if matches!(spec.scale, OutcomeScale::Linear { .. }) {
        let all_events = vec![true; draws];
        staged.write_curve("km_true.csv", &kaplan_meier(&estimates.truth_draws, &all_events)?)?;
        staged.write_curve("km_sc.csv", &kaplan_meier(estimates.series("sc").expect("always simulated"), &all_events)?)?;
        staged.write_curve("km_nn.csv", &kaplan_meier(estimates.series("nn").expect("always simulated"), &all_events)?)?;
    }

    staged.write_json(
        "run_config.json",
        &SimBiasResolved {
            schema_version: SCHEMA_VERSION,
            command: "sim-bias",
            scenario: instance.label,
            sigma,
            draws,
            seed: args.seed,
            solver,
            sc_weights: sc.weights.weights().to_vec(),
            nn_index: nn.support()[0],
        },
    )?;
    staged.commit()?;
    println!("wrote {}", args.out_dir.join("bias_table.csv").display());
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Estimates {
    names: Vec<String>,
    series: Vec<Vec<f64>>,
    truth_draws: Vec<f64>,
}

impl Estimates {
    fn series(&self, name: &str) -> Option<&[f64]> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.series[i])
    }
}

/// One generator drives target and donor draws in a fixed order, so a given
/// (scenario, seed, draws) triple always yields the same table.
fn monte_carlo_estimates(
    instance: &ScenarioInstance,
    sc: &WeightVector,
    nn: &WeightVector,
    draws: usize,
    seed: u64,
) -> Result<Estimates, CliError> {
    let spec = &instance.spec;
    let sigma = spec.noise.sigma();
    let log_scale = matches!(spec.scale, OutcomeScale::LogLinear);
    let debias = log_scale && sigma > 0.0;
    let target_row = Array2::from_shape_vec((1, instance.target.len()), instance.target.clone())
        .expect("1-row shape");

    let mut names = vec!["sc".to_string()];
    if log_scale {
        names.push("sc_log".into());
        if debias {
            names.push("sc_log_debiased".into());
        }
    }
    names.push("nn".into());
    let mut series = vec![Vec::with_capacity(draws); names.len()];
    let mut truth_draws = Vec::with_capacity(draws);

    let mut rng = seeded_rng(seed);
    for _ in 0..draws {
        truth_draws.push(simulate_with_rng(spec, target_row.view(), &mut rng)?.times[0]);
        let donor_times = simulate_with_rng(spec, instance.donors.view(), &mut rng)?.times;
        let mut col = 0;
        series[col].push(synthetic_outcome(sc, &donor_times)?);
        if log_scale {
            col += 1;
            series[col].push(log_sc_outcome(sc, &donor_times)?);
            if debias {
                col += 1;
                series[col].push(debiased_log_sc(sc, &donor_times, sigma)?);
            }
        }
        col += 1;
        series[col].push(synthetic_outcome(nn, &donor_times)?);
    }
    Ok(Estimates {
        names,
        series,
        truth_draws,
    })
}

// ---------------------------------------------------------------------------
// resample-eval

#[derive(Debug, Args)]
pub struct ResampleEvalArgs {
    /// Cohort CSV with covariate, time, event, and treated columns.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    csv: CsvFlags,
    /// Comma-separated method tokens: nn, sc, sc_log, each optionally @λ
    /// [default: nn,sc,sc_log].
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Comma-separated donor-exclusion radii [default: 0].
    #[arg(long, value_delimiter = ',')]
    delta_grid: Vec<f64>,
    /// Resampling repeats per radius [default: 20].
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: u64,
    /// RMST horizon [default: 120].
    #[arg(long)]
    t_end: Option<f64>,
    /// Probability of entering the target candidate pool [default: 0.1].
    #[arg(long)]
    target_pool_prob: Option<f64>,
    /// Multiplier on the z-scored risk inside the selection probability
    /// [default: 3].
    #[arg(long)]
    selection_scale: Option<f64>,
    #[command(flatten)]
    solver: SolverFlags,
    #[command(flatten)]
    censoring: CensoringFlags,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResampleEvalFile {
    #[allow(dead_code)]
    schema_version: u32,
    csv: Option<CsvSection>,
    methods: Option<Vec<String>>,
    delta_grid: Option<Vec<f64>>,
    repeats: Option<usize>,
    t_end: Option<f64>,
    target_pool_prob: Option<f64>,
    selection_scale: Option<f64>,
    solver: Option<SolverSection>,
    censoring: Option<String>,
    event_threshold: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ResampleEvalResolved<'a> {
    schema_version: u32,
    command: &'a str,
    input: String,
    csv: &'a CsvSchema,
    methods: &'a [MethodSpec],
    delta_grid: &'a [f64],
    repeats: usize,
    seed: u64,
    eval: EvalConfig,
    n_subjects: usize,
    dropped_treated: usize,
}

pub fn run_resample_eval(args: &ResampleEvalArgs) -> Result<(), CliError> {
    let file: ResampleEvalFile = match &args.config {
        Some(path) => load_config(path)?,
        None => ResampleEvalFile::default(),
    };
    check_input_not_clobbered(
        &args.input,
        &args.out_dir,
        &["run_reports.csv", "run_summary.csv", "run_config.json"],
    )?;

    let schema = resolve_schema(&args.csv, file.csv.as_ref())?;
    let base_solver = resolve_solver(&args.solver, file.solver.as_ref())?;
    let censoring = resolve_censoring(
        &args.censoring,
        file.censoring.as_deref(),
        file.event_threshold,
    )?;
    let method_tokens = if args.methods.is_empty() {
        file.methods
            .unwrap_or_else(|| vec!["nn".into(), "sc".into(), "sc_log".into()])
    } else {
        args.methods.clone()
    };
    let methods = parse_methods(&method_tokens, &base_solver, censoring)?;
    let delta_grid = if args.delta_grid.is_empty() {
        file.delta_grid.unwrap_or_else(|| vec![0.0])
    } else {
        args.delta_grid.clone()
    };
    if delta_grid.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(usage("delta values must be finite and non-negative"));
    }
    let repeats = args.repeats.or(file.repeats).unwrap_or(20);
    if repeats == 0 {
        return Err(usage("--repeats must be at least 1"));
    }
    let defaults = EvalConfig::default();
    let eval = EvalConfig {
        t_end: args.t_end.or(file.t_end).unwrap_or(defaults.t_end),
        target_pool_prob: args
            .target_pool_prob
            .or(file.target_pool_prob)
            .unwrap_or(defaults.target_pool_prob),
        selection_scale: args
            .selection_scale
            .or(file.selection_scale)
            .unwrap_or(defaults.selection_scale),
    };

    let cohort = load_input(&args.input, &schema)?;
    let (treated, untreated) = cohort.split_by_treatment();
    if !treated.is_empty() {
        println!(
            "note: dropped {} treated subjects; the evaluation runs on controls only",
            treated.len()
        );
    }
    if untreated.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} has no untreated subjects",
            args.input.display()
        )));
    }
    let controls = normalize_covariates(&untreated)?;

    let reports = run_negative_control_eval(&controls, &methods, &delta_grid, repeats, args.seed, &eval)?;
    let summary = summarize_reports(&reports);

    let mut staged = StagedOutput::new(&args.out_dir)?;
    let path = staged.stage("run_reports.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    for report in &reports {
        writer.serialize(report)?;
    }
    writer.flush()?;
    drop(writer);
    let path = staged.stage("run_summary.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    for row in &summary {
        writer.serialize(row)?;
    }
    writer.flush()?;
    drop(writer);
    staged.write_json(
        "run_config.json",
        &ResampleEvalResolved {
            schema_version: SCHEMA_VERSION,
            command: "resample-eval",
            input: args.input.display().to_string(),
            csv: &schema,
            methods: &methods,
            delta_grid: &delta_grid,
            repeats,
            seed: args.seed,
            eval,
            n_subjects: controls.len(),
            dropped_treated: treated.len(),
        },
    )?;
    staged.commit()?;
    println!(
        "wrote {} report rows to {}",
        reports.len(),
        args.out_dir.join("run_reports.csv").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// build-arm

#[derive(Debug, Args)]
pub struct BuildArmArgs {
    /// Cohort CSV with covariate, time, event, and treated columns.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    csv: CsvFlags,
    /// Method token: nn, sc, or sc_log, optionally @λ [default: sc].
    #[arg(long)]
    method: Option<String>,
    /// Donor columns per row in arm.csv; 0 omits them [default: 3].
    #[arg(long)]
    top_donors: Option<usize>,
    #[command(flatten)]
    solver: SolverFlags,
    #[command(flatten)]
    censoring: CensoringFlags,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BuildArmFile {
    #[allow(dead_code)]
    schema_version: u32,
    csv: Option<CsvSection>,
    method: Option<String>,
    top_donors: Option<usize>,
    solver: Option<SolverSection>,
    censoring: Option<String>,
    event_threshold: Option<f64>,
}

#[derive(Debug, Serialize)]
struct BuildArmResolved<'a> {
    schema_version: u32,
    command: &'a str,
    input: String,
    csv: &'a CsvSchema,
    method: &'a MethodSpec,
    top_donors: usize,
    n_treated: usize,
    n_donors: usize,
}

pub fn run_build_arm(args: &BuildArmArgs) -> Result<(), CliError> {
    let file: BuildArmFile = match &args.config {
        Some(path) => load_config(path)?,
        None => BuildArmFile::default(),
    };
    check_input_not_clobbered(
        &args.input,
        &args.out_dir,
        &[
            "arm.csv",
            "km_treated.csv",
            "km_controls_unadjusted.csv",
            "km_constructed.csv",
            "run_config.json",
        ],
    )?;

    let schema = resolve_schema(&args.csv, file.csv.as_ref())?;
    let base_solver = resolve_solver(&args.solver, file.solver.as_ref())?;
    let censoring = resolve_censoring(
        &args.censoring,
        file.censoring.as_deref(),
        file.event_threshold,
    )?;
    let token = args
        .method
        .clone()
        .or(file.method)
        .unwrap_or_else(|| "sc".into());
    let mut method = parse_method(&token, &base_solver)?;
    method.kind.censoring = censoring;
    let top_donors = args.top_donors.or(file.top_donors).unwrap_or(3);

    let cohort = load_input(&args.input, &schema)?;
    let normalized = normalize_covariates(&cohort)?;
    let (treated, untreated) = normalized.split_by_treatment();
    if treated.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} has no treated subjects to build an arm for",
            args.input.display()
        )));
    }
    if untreated.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} has no untreated subjects to donate",
            args.input.display()
        )));
    }

    let units = survsc::estimators::build_control_group(
        &treated,
        &untreated,
        &method.kind,
        &method.solver,
    )?;

    let mut staged = StagedOutput::new(&args.out_dir)?;
    write_arm_table(&mut staged, &units, top_donors)?;
    staged.write_curve(
        "km_treated.csv",
        &kaplan_meier(&treated.times(), &treated.events())?,
    )?;
    staged.write_curve(
        "km_controls_unadjusted.csv",
        &kaplan_meier(&untreated.times(), &untreated.events())?,
    )?;
    let unit_times: Vec<f64> = units.iter().map(|u| u.time()).collect();
    let unit_events: Vec<bool> = units.iter().map(|u| u.event()).collect();
    staged.write_curve("km_constructed.csv", &kaplan_meier(&unit_times, &unit_events)?)?;
    staged.write_json(
        "run_config.json",
        &BuildArmResolved {
            schema_version: SCHEMA_VERSION,
            command: "build-arm",
            input: args.input.display().to_string(),
            csv: &schema,
            method: &method,
            top_donors,
            n_treated: treated.len(),
            n_donors: untreated.len(),
        },
    )?;
    staged.commit()?;
    println!(
        "built {} synthetic units; wrote {}",
        units.len(),
        args.out_dir.join("arm.csv").display()
    );
    Ok(())
}

fn write_arm_table(
    staged: &mut StagedOutput,
    units: &[SyntheticUnit],
    top_donors: usize,
) -> Result<(), CliError> {
    let path = staged.stage("arm.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    let mut header = vec![
        "target_id".to_string(),
        "synthetic_time".into(),
        "synthetic_event".into(),
        "match_distance".into(),
        "variance_factor".into(),
    ];
    for i in 1..=top_donors {
        header.push(format!("donor_{i}_id"));
        header.push(format!("donor_{i}_weight"));
    }
    writer.write_record(&header)?;

    for unit in units {
        let weights = unit.weights();
        let mut row = vec![
            unit.target_id().as_str().to_string(),
            format_float(unit.time()),
            if unit.event() { "1".into() } else { "0".into() },
            format_float(unit.match_distance()),
            format_float(weights.l2_sq()),
        ];
        // Largest weights first; index order breaks exact ties.
        let mut ranked: Vec<usize> = weights.support().to_vec();
        ranked.sort_by(|a, b| {
            weights.weights()[*b]
                .total_cmp(&weights.weights()[*a])
                .then(a.cmp(b))
        });
        for slot in 0..top_donors {
            match ranked.get(slot) {
                Some(&j) => {
                    row.push(weights.donor_ids()[j].as_str().to_string());
                    row.push(format_float(weights.weights()[j]));
                }
                None => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// cv

#[derive(Debug, Args)]
pub struct CvArgs {
    /// Cohort CSV; only untreated subjects enter the validation.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    csv: CsvFlags,
    /// Comma-separated λ_var grid.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Vec<f64>,
    /// Cross-validation folds [default: 5].
    #[arg(long)]
    folds: Option<usize>,
    /// Validation metric: mae or ks [default: mae].
    #[arg(long)]
    metric: Option<String>,
    /// Method the grid applies to: sc or sc_log [default: sc].
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: u64,
    /// RMST horizon for the mae metric [default: 120].
    #[arg(long)]
    t_end: Option<f64>,
    #[command(flatten)]
    solver: SolverFlags,
    #[command(flatten)]
    censoring: CensoringFlags,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CvFile {
    #[allow(dead_code)]
    schema_version: u32,
    csv: Option<CsvSection>,
    lambda_grid: Option<Vec<f64>>,
    folds: Option<usize>,
    metric: Option<String>,
    method: Option<String>,
    t_end: Option<f64>,
    solver: Option<SolverSection>,
    censoring: Option<String>,
    event_threshold: Option<f64>,
}

#[derive(Debug, Serialize)]
struct CvResolved<'a> {
    schema_version: u32,
    command: &'a str,
    input: String,
    csv: &'a CsvSchema,
    method: &'a MethodSpec,
    cv: &'a CvConfig,
    n_donors: usize,
    dropped_treated: usize,
}

#[derive(Debug, Serialize)]
struct CvSelected {
    best_lambda: f64,
    metric: CvMetric,
    folds: usize,
    seed: u64,
    t_end: f64,
    n_donors: usize,
}

pub fn run_cv(args: &CvArgs) -> Result<(), CliError> {
    let file: CvFile = match &args.config {
        Some(path) => load_config(path)?,
        None => CvFile::default(),
    };
    check_input_not_clobbered(
        &args.input,
        &args.out_dir,
        &["cv_table.csv", "cv_selected.json", "run_config.json"],
    )?;

    let schema = resolve_schema(&args.csv, file.csv.as_ref())?;
    let base_solver = resolve_solver(&args.solver, file.solver.as_ref())?;
    let censoring = resolve_censoring(
        &args.censoring,
        file.censoring.as_deref(),
        file.event_threshold,
    )?;

    let lambda_grid = if args.lambda_grid.is_empty() {
        file.lambda_grid.unwrap_or_default()
    } else {
        args.lambda_grid.clone()
    };
    if lambda_grid.is_empty() {
        return Err(usage("missing --lambda-grid"));
    }
    if lambda_grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(usage("lambda values must be finite and non-negative"));
    }
    let folds = args.folds.or(file.folds).unwrap_or(5);
    if folds < 2 {
        return Err(usage("--folds must be at least 2"));
    }
    let metric = match args
        .metric
        .clone()
        .or(file.metric)
        .unwrap_or_else(|| "mae".into())
        .as_str()
    {
        "mae" => CvMetric::Mae,
        "ks" => CvMetric::Ks,
        other => return Err(usage(format!("unknown metric {other:?}; expected mae or ks"))),
    };
    let token = args
        .method
        .clone()
        .or(file.method)
        .unwrap_or_else(|| "sc".into());
    if token.contains('@') {
        return Err(usage(
            "the cv method must not fix a lambda; the grid supplies it",
        ));
    }
    let mut method = parse_method(&token, &base_solver)?;
    method.kind.censoring = censoring;
    if matches!(method.kind.method, Method::NnMatch) {
        return Err(usage(
            "nn has no variance penalty to tune; use sc or sc_log",
        ));
    }
    let t_end = args.t_end.or(file.t_end).unwrap_or(120.0);

    let cohort = load_input(&args.input, &schema)?;
    let (treated, untreated) = cohort.split_by_treatment();
    if !treated.is_empty() {
        println!(
            "note: dropped {} treated subjects; validation uses controls only",
            treated.len()
        );
    }
    if untreated.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} has no untreated subjects",
            args.input.display()
        )));
    }
    let donors = normalize_covariates(&untreated)?;

    let cv = CvConfig {
        lambda_grid,
        folds,
        metric,
        seed: args.seed,
        t_end,
    };
    let outcome = cross_validate_lambda(&donors, &method.kind, &method.solver, &cv)?;

    let mut staged = StagedOutput::new(&args.out_dir)?;
    let path = staged.stage("cv_table.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    for row in &outcome.table {
        writer.serialize(row)?;
    }
    writer.flush()?;
    drop(writer);
    staged.write_json(
        "cv_selected.json",
        &CvSelected {
            best_lambda: outcome.best_lambda,
            metric,
            folds,
            seed: args.seed,
            t_end,
            n_donors: donors.len(),
        },
    )?;
    staged.write_json(
        "run_config.json",
        &CvResolved {
            schema_version: SCHEMA_VERSION,
            command: "cv",
            input: args.input.display().to_string(),
            csv: &schema,
            method: &method,
            cv: &cv,
            n_donors: donors.len(),
            dropped_treated: treated.len(),
        },
    )?;
    staged.commit()?;
    println!(
        "selected lambda {} ; wrote {}",
        format_float(outcome.best_lambda),
        args.out_dir.join("cv_table.csv").display()
    );
    Ok(())
}
