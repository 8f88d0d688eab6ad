//! Command-line front end for the anomaly-detection pipeline.
//!
//! Subcommands: `run` (full config-driven pipeline), `gridmap` (rasterize a
//! scored CSV), `synth` (generate a survey with planted mineralization), and
//! `inspect` (survey statistics). Exit codes: 0 success, 1 config error,
//! 2 data error, 3 numeric/training error.

mod commands;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use geochem::error::Error;

#[derive(Parser)]
#[command(
    name = "geochem",
    about = "Unsupervised geochemical anomaly detection pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a full pipeline from a TOML config: ingest, preprocess, fit
    /// every detector, score, and evaluate.
    Run {
        /// Pipeline configuration file.
        config: PathBuf,
        /// Fit detector blocks concurrently (they share only immutable
        /// inputs).
        #[arg(long)]
        parallel_detectors: bool,
    },
    /// Interpolate a scored CSV onto a grid and write an ESRI ASCII raster.
    Gridmap(commands::GridmapArgs),
    /// Generate a synthetic survey with planted mineralization halos.
    Synth(commands::SynthArgs),
    /// Print survey statistics (sample/element counts, extent, average
    /// sampling distance).
    Inspect {
        /// Survey CSV to inspect.
        survey: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    if err.is_config_error() {
        1
    } else if err.is_data_error() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            parallel_detectors,
        } => run_command(&config, parallel_detectors),
        Command::Gridmap(args) => commands::cmd_gridmap(&args),
        Command::Synth(args) => commands::cmd_synth(&args),
        Command::Inspect { survey } => commands::cmd_inspect(&survey),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run_command(config_path: &PathBuf, parallel_detectors: bool) -> Result<(), Error> {
    let cfg = config::load_config(config_path)?;
    let output = pipeline::cmd_run(&cfg, parallel_detectors)?;
    println!("wrote artifacts to {}", output.out_dir.display());
    for report in &output.reports {
        println!(
            "{}: AUC {:.4} (var {:.6}), AP {:.4}, PR-AUC {:.4}, DTD {:.4} [{} matched, {} dropped]",
            report.detector,
            report.auc_mean,
            report.auc_variance,
            report.ap_mean,
            report.pr_auc_mean,
            report.dtd,
            report.matched_deposits,
            report.dropped_deposits,
        );
    }
    Ok(())
}
