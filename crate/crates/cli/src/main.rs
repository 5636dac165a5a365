//! `cnn-dpd`: config-driven experiment runner.
//!
//! Exit status: 0 success, 1 runtime failure, 2 invalid input.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cnn-dpd", version, about = "1D-CNN digital predistortion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Suppress progress output on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, train by indirect learning, evaluate float and fixed-point DPD.
    Run {
        /// Experiment config, or a manifest from an earlier run.
        #[arg(long)]
        config: PathBuf,
        /// Override the top-level seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// PA-modelling comparison of memory polynomial, MLP and CNN.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Multiplier/adder estimate for a float or quantized model file.
    Estimate {
        /// Model file written by `run`.
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, common } => commands::run(&config, seed, &common.out, common.quiet),
        Command::Bench { config, seed, common } => commands::bench(&config, seed, &common.out, common.quiet),
        Command::Estimate { model, common } => commands::estimate(&model, &common.out, common.quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
