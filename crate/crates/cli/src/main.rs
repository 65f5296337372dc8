//! `tdcd`: experiment runner for the tiered decentralized coordinate
//! descent simulator.
//!
//! ```text
//! tdcd run <config.json>
//! tdcd run --preset fig2a --data superconduct.csv
//! tdcd verify <config.json>
//! ```

mod config;
mod plot;
mod runner;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "tdcd", version, about = "Tiered decentralized coordinate descent simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics, models, curves and a summary.
    Run {
        /// Path to a JSON experiment configuration.
        config: Option<PathBuf>,
        /// Use an embedded preset (fig2a, fig2b, fig2c) instead of a file.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Regression CSV for preset runs; also overrides a file config's
        /// CSV path.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Override the configured output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the oracle-equivalence and invariant checks for a configuration.
    Verify {
        /// Path to a JSON experiment configuration.
        config: PathBuf,
    },
}

fn load_run_config(
    config: Option<PathBuf>,
    preset: Option<String>,
    data: Option<PathBuf>,
    output: Option<PathBuf>,
) -> Result<ExperimentConfig> {
    let mut experiment = match (config, preset) {
        (Some(path), None) => {
            let mut experiment = ExperimentConfig::from_path(&path)?;
            if let Some(csv) = data {
                if let config::DatasetSource::Csv { path, .. } = &mut experiment.dataset {
                    *path = csv;
                }
            }
            experiment
        }
        (None, Some(name)) => config::preset(&name, data)?,
        (None, None) => bail!("pass a config file or --preset <name>"),
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    };
    if let Some(dir) = output {
        experiment.output_dir = dir;
    }
    Ok(experiment)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            preset,
            data,
            output,
        } => load_run_config(config, preset, data, output)
            .and_then(|experiment| runner::run_experiment(&experiment))
            .map(|()| true),
        Command::Verify { config } => {
            ExperimentConfig::from_path(&config).and_then(|experiment| verify::verify(&experiment))
        }
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
