//! `ehn` — solve, evaluate, simulate, and sweep the energy-harvesting-node
//! model from a flat config file, emitting CSV artifacts.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Parser)]
#[command(
    name = "ehn",
    about = "Optimal receiver operation for an RF energy-harvesting node with two priority queues",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's out_dir, then `.`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the optimal policy; writes policy.csv and report.csv.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Analytically evaluate a policy; writes metrics.csv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Policy file to evaluate (defaults to a fresh solve).
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Monte-Carlo simulate a policy; writes sim_metrics.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Policy file to simulate (defaults to a fresh solve).
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config slot count.
        #[arg(long)]
        slots: Option<u64>,
        /// Also dump the full per-slot trace to trace.csv.
        #[arg(long)]
        trace: bool,
    },
    /// Solve across the HP-weight grid; writes weight_sweep.csv.
    SweepWeight {
        #[command(flatten)]
        common: Common,
    },
    /// Solve across the arrival-rate grid; writes arrival_sweep.csv.
    SweepArrival {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(path: &PathBuf) -> Result<config::ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)?;
    Ok(config::parse_config(&text)?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve { common } => {
            let cfg = load_config(&common.config)?;
            let out = commands::resolve_out_dir(&cfg, common.out);
            commands::run_solve(&cfg, &out)
        }
        Command::Evaluate { common, policy } => {
            let cfg = load_config(&common.config)?;
            let out = commands::resolve_out_dir(&cfg, common.out);
            commands::run_evaluate(&cfg, &out, policy.as_deref())
        }
        Command::Simulate {
            common,
            policy,
            seed,
            slots,
            trace,
        } => {
            let cfg = load_config(&common.config)?;
            let out = commands::resolve_out_dir(&cfg, common.out);
            commands::run_simulate(&cfg, &out, policy.as_deref(), seed, slots, trace)
        }
        Command::SweepWeight { common } => {
            let cfg = load_config(&common.config)?;
            let out = commands::resolve_out_dir(&cfg, common.out);
            commands::run_sweep_weight(&cfg, &out)
        }
        Command::SweepArrival { common } => {
            let cfg = load_config(&common.config)?;
            let out = commands::resolve_out_dir(&cfg, common.out);
            commands::run_sweep_arrival(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
