//! `setcf`: config-driven batch runs of the set-valued control function engine.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, data), 2 configuration error,
//! 3 model refuted (empty region or interval).

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::{Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("refuted: {0}")]
    Refuted(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    DataTable(#[from] setcf::data::DataError),
    #[error(transparent)]
    Identify(#[from] setcf::identify::IdentifyError),
    #[error(transparent)]
    Containment(#[from] setcf::containment::ContainmentError),
    #[error(transparent)]
    Inference(#[from] setcf::inference::InferenceError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Refuted(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "setcf", version, about = "Partial identification with set-valued control functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "setcf.toml")]
    config: PathBuf,
    /// Seed for simulation and sample splitting.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fixed slack for the identified region.
    #[arg(long, global = true)]
    slack: Option<f64>,
    /// Confidence-interval level.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Number of functional values tested by `ci`.
    #[arg(long = "grid-k", global = true)]
    grid_k: Option<usize>,
    /// Shape restrictions, e.g. `mts,mtr`.
    #[arg(long, global = true)]
    constraints: Option<String>,
    #[arg(long = "out-dir", global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Draw a dataset from the configured model.
    Simulate,
    /// Tabulate containment and capacity per cell and event.
    Containment,
    /// Test every grid point against the sharp restrictions.
    Identify,
    /// Bounds on causal functionals over the identified region.
    Bounds,
    /// Split-sample likelihood-ratio confidence interval.
    Ci,
    /// Summarize the artifacts in the output directory.
    Report,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let o = Overrides {
        seed: cli.seed,
        slack: cli.slack,
        alpha: cli.alpha,
        grid_k: cli.grid_k,
        constraints: cli.constraints.clone(),
        out_dir: cli.out_dir.clone(),
        threads: cli.threads,
    };
    let cfg = RunConfig::load(&cli.config, &o)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Containment => commands::containment(&cfg),
        Command::Identify => commands::identify(&cfg),
        Command::Bounds => commands::bounds(&cfg),
        Command::Ci => commands::ci(&cfg),
        Command::Report => commands::report(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("setcf: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
