//! `mmfed` command line: generate scenes, train federated or local models,
//! evaluate checkpoints, tabulate feature traffic and inspect artifacts.
//!
//! Configuration comes from an optional `key = value` file (`--config`)
//! overlaid with repeated `--set key=value` pairs.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{Ablation, EvalSplit};
pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "mmfed", version, about = "Federated multimodal land-cover simulator")]
pub struct Cli {
    /// Configuration file of `key = value` lines
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.epochs=10` (repeatable)
    #[arg(short, long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the seeded synthetic scene as an FDSC1 file
    Generate {
        #[arg(short, long, default_value = "scene.fdsc")]
        out: PathBuf,
    },
    /// Train and write checkpoint, ledger and logs under `<runs>/<hash>-s<seed>`
    Train {
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
        /// Preset overriding encoder, mode and codec
        #[arg(long, value_enum)]
        ablation: Option<Ablation>,
    },
    /// Score a checkpoint and write its class map
    Evaluate {
        checkpoint: PathBuf,
        /// Dataset to score instead of the one the run used
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "val")]
        split: EvalSplit,
        /// Output directory (defaults to the checkpoint's directory)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Feature traffic with and without the low-rank codec
    BenchComm {
        /// Element totals `OFF,ON` to append as a summary row
        #[arg(long, value_name = "OFF,ON")]
        totals: Option<String>,
    },
    /// Print the header of a dataset or checkpoint file
    Inspect { path: PathBuf },
}

/// Reads `--config` and applies `--set` overrides in order.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("config file {}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for pair in &cli.set {
        cfg.set_pair(pair)?;
    }
    Ok(cfg)
}

fn parse_totals(s: &str) -> CliResult<(u64, u64)> {
    let bad = || CliError::Validation(format!("--totals expects OFF,ON element counts, got `{s}`"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let off: u64 = a.trim().parse().map_err(|_| bad())?;
    let on: u64 = b.trim().parse().map_err(|_| bad())?;
    if on == 0 {
        return Err(bad());
    }
    Ok((off, on))
}

/// Parses `args` (program name first) and runs the chosen command.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}").map_err(|e| CliError::Runtime(e.to_string()))?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Validation(e.to_string().trim_end().to_string())),
    };
    let mut cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::Generate { out: path } => {
            cfg.validate()?;
            commands::cmd_generate(&cfg, path, out).map(drop)
        }
        Command::Train { runs, ablation } => {
            if let Some(a) = ablation {
                a.apply(&mut cfg);
            }
            commands::cmd_train(&cfg, runs, out).map(drop)
        }
        Command::Evaluate {
            checkpoint,
            data,
            split,
            out: dir,
        } => commands::cmd_evaluate(checkpoint, data.as_deref(), *split, dir.as_deref(), out).map(drop),
        Command::BenchComm { totals } => {
            let totals = totals.as_deref().map(parse_totals).transpose()?;
            commands::cmd_bench_comm(&cfg, totals, out).map(drop)
        }
        Command::Inspect { path } => commands::cmd_inspect(path, out),
    }
}
