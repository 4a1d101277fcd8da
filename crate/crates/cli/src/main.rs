//! `dsm` command-line harness.
//!
//! Exit codes: 0 success, 2 config error, 3 precondition violation,
//! 4 numerical failure. Failures print a JSON object to stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use commands::{CliError, Options};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "dsm",
    version,
    about = "Dynamical systems method with a discrepancy-principle stopping time"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one DSM solve and write results.json.
    Solve(Common),
    /// Run a delta sequence and write convergence.csv.
    Convergence(Common),
    /// Nonlinear discrepancy principle over a delta sequence; writes nonlinear.csv.
    Nonlinear(Common),
    /// Check the schedule decay conditions and write schedule_report.json.
    CheckSchedule(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Artifact directory (overrides `output_dir` in the config).
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Keep trajectories (solve) or scan traces (nonlinear).
    #[arg(long)]
    store_trajectory: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Serialize)]
struct ErrorReport {
    error: ErrorBody,
    config_hash: Option<String>,
}

#[derive(Serialize)]
struct ErrorBody {
    kind: &'static str,
    exit_code: i32,
    stage: Option<String>,
    message: String,
}

fn run(command: &Command) -> (Result<(), CliError>, Option<String>) {
    let common = match command {
        Command::Solve(c)
        | Command::Convergence(c)
        | Command::Nonlinear(c)
        | Command::CheckSchedule(c) => c,
    };
    let cfg = match ExperimentConfig::load(&common.config) {
        Ok(cfg) => cfg,
        Err(e) => return (Err(e.into()), None),
    };
    let opts = Options::new(
        &cfg,
        common.output.as_deref(),
        common.store_trajectory,
        common.quiet,
    );
    let outcome = match command {
        Command::Solve(_) => commands::solve(&cfg, &opts).map(drop),
        Command::Convergence(_) => commands::convergence(&cfg, &opts).map(drop),
        Command::Nonlinear(_) => commands::nonlinear(&cfg, &opts).map(drop),
        Command::CheckSchedule(_) => commands::check_schedule(&cfg, &opts).map(drop),
    };
    (outcome, Some(cfg.hash))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        (Ok(()), _) => ExitCode::SUCCESS,
        (Err(e), config_hash) => {
            let code = e.exit_code();
            let report = ErrorReport {
                error: ErrorBody {
                    kind: e.kind(),
                    exit_code: code,
                    stage: e.stage(),
                    message: e.to_string(),
                },
                config_hash,
            };
            eprintln!(
                "{}",
                serde_json::to_string(&report).expect("error report serializes")
            );
            ExitCode::from(code as u8)
        }
    }
}
