//! `qswing`: train a Q-network, price a contract, or solve a test chain.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "qswing", version, about = "Deep Q-learning bounds for stopping and swing options")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Training seed; evaluation uses seed + 1.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for simulation and evaluation (1 = reproducible mode).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train and write the checkpoint plus a loss trace CSV.
    Train(Common),
    /// Compute lower/upper bounds and write the JSON report.
    Price {
        #[command(flatten)]
        common: Common,
        /// Train first instead of loading the checkpoint.
        #[arg(long)]
        train_first: bool,
        /// Record runtime_seconds as 0 so reports are byte-reproducible.
        #[arg(long)]
        no_timing: bool,
        /// Also write the lower-bound evaluation paths to this file.
        #[arg(long)]
        dump_paths: Option<PathBuf>,
    },
    /// Solve a finite chain exactly and write its tables as JSON.
    Oracle {
        /// Chain specification (TOML).
        #[arg(long)]
        chain: PathBuf,
        /// Output JSON path.
        #[arg(long, short)]
        out: PathBuf,
        /// Skip the tree-search cross-check.
        #[arg(long)]
        no_brute: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(c) => commands::with_workers(c.workers, || commands::train(&c.config, c.seed)),
        Command::Price { common: c, train_first, no_timing, dump_paths } => commands::with_workers(c.workers, || {
            commands::price(&c.config, c.seed, train_first, no_timing, dump_paths.as_deref())
        }),
        Command::Oracle { chain, out, no_brute } => commands::oracle(&chain, &out, !no_brute),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qswing: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
