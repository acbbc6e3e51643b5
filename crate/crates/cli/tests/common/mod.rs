//! Shared cohort generators for the integration suites. All draws come from
//! the library's seeded generator, so fixtures are identical across runs.

use std::fs;
use std::path::Path;

use rand::Rng;
use survsc::data::{Cohort, Subject};
use survsc::rng::{seeded_rng, standard_normal};

/// Log-normal AFT cohort: x ~ N((6, 3), I), log T = 0.5·x0 + 0.4·x1 + σ·z,
/// optional administrative censoring, optional treated arm.
pub fn synthetic_cohort(
    n: usize,
    seed: u64,
    sigma: f64,
    censor_at: Option<f64>,
    treated_prob: f64,
) -> Cohort {
    let mut rng = seeded_rng(seed);
    let mut subjects = Vec::with_capacity(n);
    for i in 0..n {
        let x0 = 6.0 + standard_normal(&mut rng);
        let x1 = 3.0 + standard_normal(&mut rng);
        let t = (0.5 * x0 + 0.4 * x1 + sigma * standard_normal(&mut rng)).exp();
        let (time, event) = match censor_at {
            Some(c) if t > c => (c, false),
            _ => (t, true),
        };
        let treated = treated_prob > 0.0 && rng.gen_bool(treated_prob);
        subjects
            .push(Subject::new(format!("s{i}"), vec![x0, x1], time, event, treated).unwrap());
    }
    Cohort::new(subjects, vec!["x0".into(), "x1".into()]).unwrap()
}

/// Same AFT, but every covariate draw appears twice with independent times,
/// so exact covariate matches exist until a positive exclusion radius
/// removes them. Uncensored and untreated throughout; `spread` widens the
/// covariate dispersion, which raises the signal carried per unit of
/// normalized covariate distance.
pub fn twin_cohort(n_unique: usize, seed: u64, sigma: f64, spread: f64) -> Cohort {
    let mut rng = seeded_rng(seed);
    let mut subjects = Vec::with_capacity(2 * n_unique);
    for i in 0..n_unique {
        let x0 = 6.0 + spread * standard_normal(&mut rng);
        let x1 = 3.0 + spread * standard_normal(&mut rng);
        for copy in 0..2 {
            let t = (0.5 * x0 + 0.4 * x1 + sigma * standard_normal(&mut rng)).exp();
            subjects.push(
                Subject::new(format!("u{i}c{copy}"), vec![x0, x1], t, true, false).unwrap(),
            );
        }
    }
    Cohort::new(subjects, vec!["x0".into(), "x1".into()]).unwrap()
}

/// One-covariate exponential-hazard instance for checking the Cox fitter:
/// h(t|x) = e^{0.8x}, so the true coefficient is 0.8.
pub fn cox_cohort(n: usize, seed: u64) -> Cohort {
    let mut rng = seeded_rng(seed);
    let mut subjects = Vec::with_capacity(n);
    for i in 0..n {
        let x = standard_normal(&mut rng);
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let t = -u.ln() / (0.8 * x).exp();
        let event = rng.gen_bool(0.85);
        subjects.push(Subject::new(format!("s{i}"), vec![x], t, event, false).unwrap());
    }
    Cohort::new(subjects, vec!["x".into()]).unwrap()
}

pub fn write_cohort_csv(path: &Path, cohort: &Cohort) {
    let mut out = String::from("id,x0,x1,time,event,treated\n");
    for s in cohort.subjects() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.id(),
            s.covariates()[0],
            s.covariates()[1],
            s.time(),
            u8::from(s.event()),
            u8::from(s.treated()),
        ));
    }
    fs::write(path, out).unwrap();
}
