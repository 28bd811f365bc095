//! `ptrans`: runs bridge and transport experiments from a JSON config and
//! writes CSV artifacts.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Experiment, Overrides};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ptrans", version, about = "Schrödinger bridges and optimal transport with prior linear dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config; relative to the working directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Noise level; repeat to give a list (overrides the config).
    #[arg(long = "epsilon", global = true)]
    epsilon: Vec<f64>,
    /// RK4 steps on [0, 1].
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Points per 1-D density grid.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Number of sample paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sinkhorn marginal tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Transition matrix and controllability Gramian tables.
    Gramian,
    /// Gaussian bridge moment flows (and sample paths if paths > 0).
    GaussBridge,
    /// 1-D transport map and displacement interpolation.
    Omt1d,
    /// Entropic couplings, potentials and interpolations for each epsilon.
    Sinkhorn,
    /// Distance to the transport solution along a decreasing epsilon list.
    Sweep,
    /// Gaussian bridge sample paths and ensemble statistics.
    SamplePaths,
    /// Residual and property checks for the configured experiment.
    Check,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let overrides = Overrides {
        out: cli.out,
        epsilon: cli.epsilon,
        steps: cli.steps,
        grid: cli.grid,
        paths: cli.paths,
        seed: cli.seed,
        tol: cli.tol,
    };
    let exp = Experiment::load(&path, &overrides)?;
    match cli.command {
        Command::Gramian => commands::gramian(&exp),
        Command::GaussBridge => commands::gauss_bridge(&exp),
        Command::Omt1d => commands::omt1d(&exp),
        Command::Sinkhorn => commands::sinkhorn(&exp),
        Command::Sweep => commands::sweep(&exp),
        Command::SamplePaths => commands::sample_paths(&exp),
        Command::Check => commands::check(&exp),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
