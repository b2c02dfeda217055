//! `rotq`: generate toy models, learn rotations, quantize, run the Hessian
//! bounds grid and compare runs.

mod commands;
mod compare;
mod config;
mod error;
mod lock;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::lock::OutputLock;

#[derive(Parser, Debug)]
#[command(name = "rotq", version, about = "Rotation and quantization experiments on toy models")]
struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `out` of the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed, overriding `seed` of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the parallel parts.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overwrite existing artifacts.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the toy model and write `<out>/model`.
    Generate,
    /// Learn (or construct) rotations for `<out>/model`.
    Learn,
    /// Quantize the rotated model and write per-layer reports.
    Quantize,
    /// Run the Hessian bounds grid and write `bounds.csv`.
    Bounds,
    /// Compare quantize runs given as baseline/candidate directory pairs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
    },
}

fn context(cli: &Cli) -> CliResult<Context> {
    let mut config = match &cli.config {
        Some(path) if !path.exists() => return Err(CliError::Missing(path.clone())),
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .ok_or_else(|| CliError::config("no output directory; pass --out or set `out`"))?;
    config.validate()?;
    Ok(Context {
        config,
        out,
        force: cli.force,
    })
}

fn run(cli: Cli) -> CliResult<PathBuf> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::config("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    let ctx = context(&cli)?;
    let _lock = OutputLock::acquire(&ctx.out)?;
    match &cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Learn => commands::learn(&ctx),
        Command::Quantize => commands::quantize(&ctx),
        Command::Bounds => commands::bounds(&ctx),
        Command::Compare { runs } => compare::run(&ctx, runs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rotq: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
