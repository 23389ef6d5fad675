mod commands;
mod config;

use anyhow::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Mean-variance portfolio selection under jump diffusion with recursive
/// utility: solve the feedback law, trace efficient frontiers, simulate, and
/// cross-verify every closed form.
#[derive(Parser)]
#[command(name = "mvjump", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulation seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Omit the timestamp field from JSON outputs, making reruns
    /// byte-identical
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve all grids and export them as CSV
    Solve {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sweep the embedding weight and export the efficient frontier
    Frontier {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Tabulate the two static comparison frontiers against the sweep
    CompareFrontiers {
        #[command(flatten)]
        common: CommonArgs,
        /// Smallest terminal mean (defaults to the smallest sweep mean)
        #[arg(long)]
        mean_min: Option<f64>,
        /// Largest terminal mean (defaults to the largest sweep mean)
        #[arg(long)]
        mean_max: Option<f64>,
        /// Number of grid points
        #[arg(long, default_value_t = 101)]
        steps: usize,
    },
    /// Run the Monte Carlo simulation and export the summary
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Also export per-path terminal wealth as CSV
        #[arg(long)]
        paths_csv: bool,
    },
    /// Run the full verification suite; exit 0 iff every section passes
    Verify {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: Result<bool> = match cli.command {
        Command::Solve { common } => commands::cmd_solve(&common).map(|()| true),
        Command::Frontier { common } => commands::cmd_frontier(&common).map(|()| true),
        Command::CompareFrontiers { common, mean_min, mean_max, steps } => {
            commands::cmd_compare_frontiers(&common, mean_min, mean_max, steps).map(|()| true)
        }
        Command::Simulate { common, paths_csv } => {
            commands::cmd_simulate(&common, paths_csv).map(|()| true)
        }
        Command::Verify { common } => commands::cmd_verify(&common),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
