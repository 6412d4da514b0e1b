//! `longrun`: benchmark studies, leave-one-out diagnostics and reference oracles.

mod config;
mod cv;
mod oracle;
mod study;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Exit status 2: the configuration or input data is unusable.
/// Exit status 1: something failed while running.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl From<longrun::Error> for Failure {
    fn from(e: longrun::Error) -> Self {
        match e {
            longrun::Error::Input(_) | longrun::Error::Contract(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

pub fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

#[derive(Parser)]
#[command(name = "longrun", version, about = "Long-run experiment optimization studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replicate every design of a study config and write run logs and curves.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `out`.
        #[arg(long, env = "LONGRUN_OUT")]
        out: Option<PathBuf>,
        /// Root seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Replications per design; overrides the config.
        #[arg(long)]
        reps: Option<usize>,
        /// Worker threads for the replications.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Leave-one-out diagnostics for one model kind on a CSV dataset.
    Cv {
        /// CSV with columns x_1..x_d, task_or_metric, t, y, sem.
        data: PathBuf,
        #[arg(long, value_enum)]
        model: ModelKind,
        /// Target metric for mtgp and tagp (default: first metric in the file).
        #[arg(long)]
        target: Option<String>,
        #[arg(long, env = "LONGRUN_OUT")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-aggregate the run logs under a directory into curves.
    Report {
        runs: PathBuf,
        #[arg(long, env = "LONGRUN_OUT")]
        out: Option<PathBuf>,
    },
    /// Print reference values used by the test fixtures.
    Oracle { name: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Gp,
    Mtgp,
    Tagp,
    Temporal,
    Spatial,
}

const DEFAULT_OUT: &str = "longrun-out";

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            reps,
            jobs,
        } => {
            if let Some(j) = jobs {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(j.max(1))
                    .build_global()
                    .map_err(runtime)?;
            }
            let cfg = config::StudyConfig::load(&config, seed, reps)?;
            let out = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into());
            study::run(&cfg, &out)
        }
        Command::Cv {
            data,
            model,
            target,
            out,
            seed,
        } => cv::run(&data, model, target.as_deref(), &out.unwrap_or_else(|| DEFAULT_OUT.into()), seed),
        Command::Report { runs, out } => study::report(&runs, &out.unwrap_or_else(|| runs.clone())),
        Command::Oracle { name } => oracle::run(&name),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
