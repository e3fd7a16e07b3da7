//! `qsips`: simulate photon-count frame stacks, reconstruct cumulant-based
//! super-resolved maps, fuse structured-illumination sets, analyze maps and
//! run the identity self-checks.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data-format error,
//! 4 verification failure.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qsips_core::verify::Mutations;
use qsips_core::Execution;

use crate::commands::Context;
use crate::config::ScenarioConfig;
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "qsips", version, about = "Photon-statistics super-resolution toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides `acquisition.seed`.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads for the data-parallel stages; 1 runs sequentially.
    #[arg(long, global = true, value_name = "N", env = "QSIPS_WORKERS")]
    workers: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Build g-function maps even from non-integer (readout-noisy) counts.
    #[arg(long, global = true)]
    force_g_maps: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one frame stack per illumination pattern.
    Simulate,
    /// Cumulants and super-resolved maps from frame stacks (default: the
    /// stacks listed in the output directory's manifest).
    Reconstruct { stacks: Vec<PathBuf> },
    /// Fuse the per-pattern maps of the output directory.
    Fuse,
    /// Visibility sweep and per-map fits, interpolation and line cuts.
    Analyze { maps: Vec<PathBuf> },
    /// Identity self-checks; JSON report on stdout.
    Verify {
        /// Negates the order-1 QSIPS weight to confirm the checks bite.
        #[arg(long, hide = true)]
        inject_beta_flip: bool,
    },
}

fn execution(workers: Option<usize>) -> Result<Execution, CliError> {
    match workers {
        Some(0) => Err(CliError::config("--workers must be at least 1")),
        Some(1) => Ok(Execution::Sequential),
        Some(n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::config(format!("cannot start {n} workers: {e}")))?;
            #[cfg(not(feature = "parallel"))]
            let _ = n;
            Ok(Execution::Parallel)
        }
        None => Ok(Execution::Parallel),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let exec = execution(cli.workers)?;
    if let Command::Verify { inject_beta_flip } = cli.command {
        return commands::verify(cli.out.as_deref(), Mutations { flip_beta_sign: inject_beta_flip });
    }
    let mut config = match &cli.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.acquisition.seed = seed;
    }
    let ctx = Context {
        config,
        out: cli.out.unwrap_or_else(|| PathBuf::from("qsips-out")),
        exec,
        force_g_maps: cli.force_g_maps,
    };
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Reconstruct { stacks } => commands::reconstruct(&ctx, &stacks),
        Command::Fuse => commands::fuse(&ctx),
        Command::Analyze { maps } => commands::analyze(&ctx, &maps),
        Command::Verify { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qsips: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
