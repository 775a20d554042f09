//! `pnum`: runs one experiment from a TOML config and writes a CSV table
//! plus a JSON sidecar with the resolved config.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use pnum::bench::{run_to_files, Experiment};

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path; the sidecar goes next to it with a .json extension.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the base seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Omit the timestamp so reruns are byte-identical.
    #[arg(long)]
    reproducible: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quadrature convergence and calibration.
    Quad(RunArgs),
    /// Evidence estimation race.
    Evidence(RunArgs),
    /// Classic versus probabilistic CG on one system.
    Linsolve(RunArgs),
    /// Cold versus warm starts on a drifting sequence.
    Recycle(RunArgs),
    /// ODE order studies and filter trajectories.
    Ode(RunArgs),
}

#[derive(Debug, Parser)]
#[command(name = "pnum", version, about = "Probabilistic numerics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (experiment, args) = match cli.command {
        Command::Quad(a) => (Experiment::Quad, a),
        Command::Evidence(a) => (Experiment::Evidence, a),
        Command::Linsolve(a) => (Experiment::Linsolve, a),
        Command::Recycle(a) => (Experiment::Recycle, a),
        Command::Ode(a) => (Experiment::Ode, a),
    };
    match run_to_files(experiment, &args.config, &args.out, args.seed, args.reproducible) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pnum {experiment}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
