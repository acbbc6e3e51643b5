//! `survsc` — batch analyses for synthetic survival controls.
//!
//! Subcommands write CSV tables plus a `run_config.json` sidecar into
//! `--out-dir`; reruns with the same flags and seed are byte-identical.
//! Exit codes: 0 success, 2 usage or config error, 1 runtime failure.

mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "survsc", version, about = "Synthetic control analyses for survival data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo bias tables for the stylized one-covariate scenarios.
    SimBias(commands::SimBiasArgs),
    /// Negative-control evaluation of matching methods on a real cohort.
    ResampleEval(commands::ResampleEvalArgs),
    /// Build a synthetic control arm for the treated subjects of a cohort.
    BuildArm(commands::BuildArmArgs),
    /// Cross-validate the variance penalty on the donor pool.
    Cv(commands::CvArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SimBias(args) => commands::run_sim_bias(args),
        Command::ResampleEval(args) => commands::run_resample_eval(args),
        Command::BuildArm(args) => commands::run_build_arm(args),
        Command::Cv(args) => commands::run_cv(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
