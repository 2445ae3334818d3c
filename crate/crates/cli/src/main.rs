// SPDX-License-Identifier: Apache-2.0

use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use igani_cli::commands::{cmd_grid, cmd_impute, cmd_train, ImputeArgs};
use igani_cli::plot::{cmd_plot, PlotKind};
use igani_cli::{CliError, CliResult, ExperimentConfig, GridOptions, GridOutcome};
use igani_core::Method;

#[derive(Parser)]
#[command(name = "igani", version, about = "GAN-based imputation of traffic matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one or all configured methods and write checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Train only this method.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Fill missing entries of a matrix with a trained checkpoint.
    Impute {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// 0/1 matrix of observed entries; defaults to the non-NaN entries of `--data`.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Complete matrix used for per-sample errors.
        #[arg(long, requires = "errors_out")]
        truth: Option<PathBuf>,
        #[arg(long, requires = "truth")]
        errors_out: Option<PathBuf>,
        #[arg(long, requires = "truth")]
        row: Option<usize>,
    },
    /// Run an experiment grid, resuming from cached cells.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        overwrite: bool,
        /// Stop after computing this many new cells.
        #[arg(long)]
        max_cells: Option<usize>,
    },
    /// Render a metrics or per-sample CSV as SVG.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Train {
            config,
            seed,
            method,
            overwrite,
        } => {
            let cfg = ExperimentConfig::load(&config)?.resolved(seed);
            if let Some(m) = method {
                if !cfg.methods.contains(&m) {
                    return Err(CliError::Invalid(format!("--method: {m} is not listed in methods")));
                }
            }
            cmd_train(&cfg, method, overwrite, &mut stdout)?;
        }
        Command::Impute {
            checkpoint,
            data,
            mask,
            out,
            seed,
            truth,
            errors_out,
            row,
        } => cmd_impute(&ImputeArgs {
            checkpoint: &checkpoint,
            data: &data,
            mask: mask.as_deref(),
            out: &out,
            seed,
            truth: truth.as_deref(),
            errors_out: errors_out.as_deref(),
            row,
        })?,
        Command::Grid {
            config,
            seed,
            jobs,
            overwrite,
            max_cells,
        } => {
            if jobs == 0 {
                return Err(CliError::Invalid("--jobs: must be at least 1".into()));
            }
            let cfg = ExperimentConfig::load(&config)?.resolved(seed);
            let opts = GridOptions {
                overwrite,
                max_cells,
                jobs,
            };
            if let GridOutcome::Incomplete { done, total } = cmd_grid(&cfg, &opts, &mut stdout)? {
                eprintln!("igani: grid stopped after {done} of {total} cells; rerun to resume");
            }
        }
        Command::Plot { metrics, kind, out } => cmd_plot(&metrics, kind, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("igani: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
