//! `wgeo`: solve, build and verify weighted Wasserstein geodesics.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 iteration limit reached,
//! 3 verification failed.

mod commands;
mod config;
mod persist;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "wgeo", version, about = "Geodesics of the congestion-weighted Wasserstein metric")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the two-endpoint problem and write the curve
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output.dir`
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a self-similar solution and its convergence study
    Selfsimilar {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the optimality residuals of a stored curve
    Verify {
        /// Directory written by `solve` or `selfsimilar`
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare first variations with finite differences
    Varcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Battery seed; overrides `varcheck.seed`
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Solve { config, out } => commands::solve(&config, out),
        Command::Selfsimilar { config, out } => commands::selfsimilar(&config, out),
        Command::Verify { curve, config } => commands::verify(&curve, &config),
        Command::Varcheck { config, seed } => commands::varcheck(config.as_deref(), seed),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
