//! `ringflow`: analyze a mixed ring road, synthesize a structured CAV
//! controller and run the simulation experiments.
//!
//! Exit codes: 0 success, 1 i/o error, 2 config error, 3 infeasible or
//! unreachable, 4 numerical failure.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Experiment, Session};
use config::{Config, Overrides};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "ringflow", version, about)]
struct Args {
    /// TOML configuration document.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Scenario RNG seed (initial draws and noise).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Accept a target velocity at or above the reachable bound when
    /// target.cav_spacing_m is given.
    #[arg(long, global = true)]
    allow_unreachable: bool,
    /// Integration step in seconds.
    #[arg(long, global = true, value_name = "SECONDS")]
    dt: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Controllability and stabilizability of the linearized ring.
    Analyze,
    /// CAV spacing at the target velocity and the maximum reachable velocity.
    Reach,
    /// Structured H2 controller synthesis.
    Synthesize,
    /// One run of the configured scenario.
    Simulate,
    /// A canned experiment: A (convergence), B (wave dissipation), C (braking sweep).
    Experiment {
        #[arg(value_enum)]
        which: Experiment,
    },
}

fn execute(args: Args) -> Result<String, CliError> {
    let path = args.config.ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let mut config = Config::load(&path)?;
    config.apply(&Overrides { seed: args.seed, dt: args.dt, out: args.out });
    config.validate()?;
    let session = Session { config, allow_unreachable: args.allow_unreachable };
    match args.command {
        Command::Analyze => session.analyze(),
        Command::Reach => session.reach(),
        Command::Synthesize => session.synthesize(),
        Command::Simulate => session.simulate(),
        Command::Experiment { which } => session.experiment(which),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Args::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
