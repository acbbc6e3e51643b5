//! End-to-end checks of the `survsc` binary: exit codes, output files,
//! flag/config merging, and byte-level determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use tempfile::tempdir;

fn survsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_survsc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Small cohort with a treated arm; log-normal times, administrative
/// censoring at 120.
fn write_cohort(path: &Path, n: usize, seed: u64) {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let normal = |rng: &mut rand::rngs::StdRng| -> f64 {
        // Box-Muller is plenty for fixtures.
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let mut out = String::from("id,x0,x1,time,event,treated\n");
    for i in 0..n {
        let x0 = 6.0 + normal(&mut rng);
        let x1 = 3.0 + normal(&mut rng);
        let lp = 0.5 * x0 + 0.4 * x1;
        let t = (lp + 0.5 * normal(&mut rng)).exp();
        let (time, event) = if t > 120.0 { (120.0, 0) } else { (t, 1) };
        let treated = usize::from(rng.gen_range(0.0..1.0) < 0.2);
        out.push_str(&format!("s{i},{x0},{x1},{time},{event},{treated}\n"));
    }
    fs::write(path, out).unwrap();
}

fn read_csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader
        .records()
        .map(|r| r.unwrap().iter().map(str::to_owned).collect())
        .collect()
}

fn header(path: &Path) -> Vec<String> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader.headers().unwrap().iter().map(str::to_owned).collect()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("out");
    let out_str = out.to_str().unwrap();

    let bad_scenario = survsc(&["sim-bias", "--scenario", "bogus", "--seed", "1", "--out-dir", out_str]);
    assert_eq!(bad_scenario.status.code(), Some(2));
    assert!(stderr(&bad_scenario).contains("unknown scenario"));

    let missing_seed = survsc(&["sim-bias", "--scenario", "lognormal", "--sigma", "1", "--out-dir", out_str]);
    assert_eq!(missing_seed.status.code(), Some(2));

    let missing_sigma = survsc(&["sim-bias", "--scenario", "lognormal", "--seed", "1", "--out-dir", out_str]);
    assert_eq!(missing_sigma.status.code(), Some(2));
    assert!(stderr(&missing_sigma).contains("--sigma"));

    let stray_sigma = survsc(&[
        "sim-bias", "--scenario", "additive_linear", "--sigma", "2", "--seed", "1", "--out-dir", out_str,
    ]);
    assert_eq!(stray_sigma.status.code(), Some(2));

    let cohort = dir.path().join("cohort.csv");
    write_cohort(&cohort, 40, 5);
    let cohort_str = cohort.to_str().unwrap();

    let bad_method = survsc(&[
        "resample-eval", "--input", cohort_str, "--covariate-cols", "x0,x1",
        "--methods", "magic", "--seed", "1", "--out-dir", out_str,
    ]);
    assert_eq!(bad_method.status.code(), Some(2));
    assert!(stderr(&bad_method).contains("unknown method"));

    let bad_metric = survsc(&[
        "cv", "--input", cohort_str, "--covariate-cols", "x0,x1",
        "--lambda-grid", "0,1", "--metric", "rmse", "--seed", "1", "--out-dir", out_str,
    ]);
    assert_eq!(bad_metric.status.code(), Some(2));

    let nn_cv = survsc(&[
        "cv", "--input", cohort_str, "--covariate-cols", "x0,x1",
        "--lambda-grid", "0,1", "--method", "nn", "--seed", "1", "--out-dir", out_str,
    ]);
    assert_eq!(nn_cv.status.code(), Some(2));

    let bad_column = survsc(&[
        "build-arm", "--input", cohort_str, "--covariate-cols", "nope", "--out-dir", out_str,
    ]);
    assert_eq!(bad_column.status.code(), Some(2));
    assert!(stderr(&bad_column).contains("nope"));

    // Usage errors must not leave any output behind.
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn runtime_errors_exit_1_without_partial_outputs() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("out");
    let out_str = out.to_str().unwrap();

    let missing_input = survsc(&[
        "resample-eval", "--input", dir.path().join("nope.csv").to_str().unwrap(),
        "--covariate-cols", "x0", "--seed", "1", "--out-dir", out_str,
    ]);
    assert_eq!(missing_input.status.code(), Some(1));
    assert!(stderr(&missing_input).contains("nope.csv"));

    // All-control cohort: build-arm has nobody to build for.
    let controls = dir.path().join("controls.csv");
    let mut body = String::from("id,x0,time,event,treated\n");
    for i in 0..10 {
        body.push_str(&format!("c{i},{},{},1,0\n", i as f64, 10.0 + i as f64));
    }
    fs::write(&controls, body).unwrap();
    let no_treated = survsc(&[
        "build-arm", "--input", controls.to_str().unwrap(),
        "--covariate-cols", "x0", "--out-dir", out_str,
    ]);
    assert_eq!(no_treated.status.code(), Some(1));
    assert!(stderr(&no_treated).contains("no treated subjects"));

    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn config_file_merging_and_validation() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("out");
    let out_str = out.to_str().unwrap();

    let config = dir.path().join("sim.json");
    fs::write(
        &config,
        r#"{"schema_version": 1, "scenario": "lognormal", "sigma": 1.0, "draws": 50}"#,
    )
    .unwrap();
    let run = survsc(&[
        "sim-bias", "--config", config.to_str().unwrap(),
        "--draws", "20", "--seed", "9", "--out-dir", out_str,
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let sidecar = fs::read_to_string(out.join("run_config.json")).unwrap();
    assert!(sidecar.contains("\"draws\": 20"), "flag overrides file");
    assert!(sidecar.contains("\"scenario\": \"lognormal\""));

    let unversioned = dir.path().join("old.json");
    fs::write(&unversioned, r#"{"scenario": "lognormal"}"#).unwrap();
    let missing_version = survsc(&[
        "sim-bias", "--config", unversioned.to_str().unwrap(),
        "--seed", "9", "--out-dir", out_str,
    ]);
    assert_eq!(missing_version.status.code(), Some(2));
    assert!(stderr(&missing_version).contains("schema_version"));

    let typo = dir.path().join("typo.json");
    fs::write(&typo, r#"{"schema_version": 1, "scenari": "lognormal"}"#).unwrap();
    let unknown_key = survsc(&[
        "sim-bias", "--config", typo.to_str().unwrap(),
        "--seed", "9", "--out-dir", out_str,
    ]);
    assert_eq!(unknown_key.status.code(), Some(2));
    assert!(stderr(&unknown_key).contains("scenari"));
}

#[test]
fn sim_bias_outputs_and_determinism() {
    let dir = tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "sim-bias".to_string(), "--scenario".into(), "lognormal".into(),
            "--sigma".into(), "1".into(), "--draws".into(), "500".into(),
            "--seed".into(), "7".into(), "--out-dir".into(), out.into(),
        ]
    };
    for out in ["a", "b"] {
        let path = dir.path().join(out);
        let argv: Vec<String> = args(path.to_str().unwrap());
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        let run = survsc(&argv);
        assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    }
    for name in ["bias_table.csv", "run_config.json"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    let rows = read_csv_rows(&dir.path().join("a").join("bias_table.csv"));
    let estimators: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(estimators, ["sc", "sc_log", "sc_log_debiased", "nn"]);
    // No KM files outside the additive scenario.
    assert!(!dir.path().join("a").join("km_true.csv").exists());
}

#[test]
fn sim_bias_additive_writes_km_curves() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("out");
    let run = survsc(&[
        "sim-bias", "--scenario", "additive_linear", "--draws", "300",
        "--seed", "2", "--out-dir", out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    for name in ["km_true.csv", "km_sc.csv", "km_nn.csv"] {
        assert_eq!(
            header(&out.join(name)),
            ["time", "survival", "at_risk", "events"],
            "{name}"
        );
    }
    let rows = read_csv_rows(&out.join("bias_table.csv"));
    let estimators: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(estimators, ["sc", "nn"], "log estimators need a log-scale outcome");
}

#[test]
fn resample_eval_report_shape() {
    let dir = tempdir().unwrap();
    let cohort = dir.path().join("cohort.csv");
    write_cohort(&cohort, 150, 11);
    let out = dir.path().join("out");
    // t_end below the administrative censoring point, so censored subjects
    // still yield usable restricted times.
    let run = survsc(&[
        "resample-eval", "--input", cohort.to_str().unwrap(),
        "--covariate-cols", "x0,x1", "--methods", "nn,sc@0.1",
        "--delta-grid", "0,0.4", "--repeats", "2", "--seed", "21",
        "--t-end", "100", "--out-dir", out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));

    let reports = read_csv_rows(&out.join("run_reports.csv"));
    assert_eq!(reports.len(), 2 * 2 * 2, "methods x deltas x repeats");
    assert_eq!(
        header(&out.join("run_reports.csv")),
        ["method", "delta_min", "repeat", "seed", "ks", "mae_rmst", "n_targets", "n_donors"]
    );
    let summary = read_csv_rows(&out.join("run_summary.csv"));
    assert_eq!(summary.len(), 4, "one row per method x delta");
    for row in &reports {
        let ks: f64 = row[4].parse().unwrap();
        assert!((0.0..=1.0).contains(&ks));
    }
}

#[test]
fn build_arm_nn_duplicates_donor_records() {
    let dir = tempdir().unwrap();
    let cohort = dir.path().join("cohort.csv");
    write_cohort(&cohort, 80, 3);
    let out = dir.path().join("out");
    let run = survsc(&[
        "build-arm", "--input", cohort.to_str().unwrap(), "--id-col", "id",
        "--covariate-cols", "x0,x1", "--method", "nn", "--top-donors", "1",
        "--out-dir", out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));

    // Index the input by id.
    let mut by_id = std::collections::HashMap::new();
    for row in read_csv_rows(&cohort) {
        by_id.insert(row[0].clone(), (row[3].parse::<f64>().unwrap(), row[4] == "1"));
    }
    let arm = read_csv_rows(&out.join("arm.csv"));
    assert!(!arm.is_empty());
    for row in &arm {
        let (donor_time, donor_event) = by_id[&row[5]];
        assert_eq!(row[1].parse::<f64>().unwrap(), donor_time);
        assert_eq!(row[2] == "1", donor_event);
        assert_eq!(row[6].parse::<f64>().unwrap(), 1.0);
        assert_eq!(row[4].parse::<f64>().unwrap(), 1.0, "one-hot variance factor");
    }
    for name in ["km_treated.csv", "km_controls_unadjusted.csv", "km_constructed.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn build_arm_top_donors_zero_omits_donor_columns() {
    let dir = tempdir().unwrap();
    let cohort = dir.path().join("cohort.csv");
    write_cohort(&cohort, 60, 4);
    let out = dir.path().join("out");
    let run = survsc(&[
        "build-arm", "--input", cohort.to_str().unwrap(),
        "--covariate-cols", "x0,x1", "--top-donors", "0",
        "--out-dir", out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    assert_eq!(
        header(&out.join("arm.csv")),
        ["target_id", "synthetic_time", "synthetic_event", "match_distance", "variance_factor"]
    );
}

#[test]
fn cv_single_lambda_and_metric_switch() {
    let dir = tempdir().unwrap();
    let cohort = dir.path().join("cohort.csv");
    write_cohort(&cohort, 70, 8);
    let cohort_str = cohort.to_str().unwrap();

    let single = dir.path().join("single");
    let run = survsc(&[
        "cv", "--input", cohort_str, "--covariate-cols", "x0,x1",
        "--lambda-grid", "0.3", "--folds", "3", "--seed", "5",
        "--out-dir", single.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let selected = fs::read_to_string(single.join("cv_selected.json")).unwrap();
    assert!(selected.contains("\"best_lambda\": 0.3"));

    // Both metrics run; tables stay sorted by lambda.
    for metric in ["mae", "ks"] {
        let out = dir.path().join(metric);
        let run = survsc(&[
            "cv", "--input", cohort_str, "--covariate-cols", "x0,x1",
            "--lambda-grid", "1,0,0.1", "--folds", "3", "--metric", metric,
            "--seed", "5", "--out-dir", out.to_str().unwrap(),
        ]);
        assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
        let lambdas: Vec<f64> = read_csv_rows(&out.join("cv_table.csv"))
            .iter()
            .map(|r| r[0].parse().unwrap())
            .collect();
        assert_eq!(lambdas, [0.0, 0.1, 1.0]);
    }
}

#[test]
fn output_may_not_overwrite_input() {
    let dir = tempdir().unwrap();
    // An input named like an output file, living in the output directory.
    let input: PathBuf = dir.path().join("run_reports.csv");
    write_cohort(&input, 30, 1);
    let run = survsc(&[
        "resample-eval", "--input", input.to_str().unwrap(),
        "--covariate-cols", "x0,x1", "--seed", "1",
        "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("overwrite"));
    // The input survives untouched.
    let text = fs::read_to_string(&input).unwrap();
    assert!(text.starts_with("id,x0,x1,time,event,treated"));
}
