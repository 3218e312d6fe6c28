//! Command-line front end: model inspection, deterministic theorem checks,
//! Monte Carlo estimation and raw simulation.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{load_experiment, parse_grid, ExperimentConfig, ProcessKind};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "qbranch", version, about = "Markov branching systems, Q-processes and the estimator of beta")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct CommonArgs {
    /// Model file with `a_k = value` lines.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Experiment file with `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Relative ODE tolerance for transition tables.
    #[arg(long)]
    tol: Option<f64>,
    /// Truncation level J_max of transition tables.
    #[arg(long)]
    jmax: Option<usize>,
}

#[derive(Args, Default)]
struct RunArgs {
    /// Comma-separated times, e.g. 25,50,100.
    #[arg(long)]
    t_grid: Option<String>,
    /// Number of Monte Carlo replicates.
    #[arg(long)]
    reps: Option<usize>,
    /// Master seed (required for anything random).
    #[arg(long)]
    seed: Option<u64>,
    /// Initial state.
    #[arg(long)]
    i0: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Print q, beta, b, gamma, the criticality class and the Q-process densities.
    ModelInfo {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Tabulate Q_11(t) against its limit and the normalized estimator variance.
    VerifyTheorems {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Monte Carlo study of the estimator at each t of the grid.
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Simulate trajectories of the Q-process (q) or the branching system (mbs).
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        process: Option<ProcessKind>,
        #[arg(long)]
        horizon: Option<f64>,
    },
}

fn resolve(common: CommonArgs, run: RunArgs, process: Option<ProcessKind>, horizon: Option<f64>) -> Result<ExperimentConfig, CliError> {
    let base = match &common.config {
        Some(path) => load_experiment(path)?,
        None => ExperimentConfig::default(),
    };
    let flags = ExperimentConfig {
        model: common.model,
        t_grid: run.t_grid.as_deref().map(parse_grid).transpose().map_err(CliError::Usage)?,
        reps: run.reps,
        seed: run.seed,
        out: common.out,
        jmax: common.jmax,
        tol: common.tol,
        i0: run.i0,
        horizon,
        process,
    };
    let cfg = base.merged(flags);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::ModelInfo { common } => commands::model_info(&resolve(common, RunArgs::default(), None, None)?),
        Command::VerifyTheorems { common, run } => commands::verify_theorems(&resolve(common, run, None, None)?),
        Command::Estimate { common, run } => commands::estimate(&resolve(common, run, None, None)?),
        Command::Simulate { common, run, process, horizon } => commands::simulate(&resolve(common, run, process, horizon)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
