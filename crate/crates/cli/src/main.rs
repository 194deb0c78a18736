//! `linsub`: experiment runner for hidden-subspace identification.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use linsub_cli::config::{ConfigError, DatasetConfig, ExperimentConfig};
use linsub_cli::dataset_io::{self, DatasetIoError};
use linsub_cli::experiments::{
    run_experiment, write_sweep_csv, write_tau_csv, ExperimentError, ReportBody,
};
use linsub_core::simulator::{random_system, sample_batch};

/// Exit codes: 0 success, 2 invalid config or arguments, 3 I/O or dataset
/// format error, 4 numerical failure during an experiment.
const EXIT_HELP: &str = "Exit codes:\n  0  success\n  2  invalid config or arguments\n  3  I/O or dataset format error\n  4  numerical failure during an experiment";

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "linsub",
    version,
    about = "Identify hidden linear subspaces and their dynamics from high-dimensional observations",
    after_help = EXIT_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Bit-exact "LSD1" binary file.
    Binary,
    /// Directory of CSV files plus a meta.json sidecar.
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config and write a report.
    Run {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the report and any CSV tables.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = auto).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Generate a dataset from a JSON config and write it to disk.
    DatasetExport {
        /// Dataset config (JSON): generation parameters, samples, horizon,
        /// seed.
        #[arg(long)]
        config: PathBuf,
        /// Output path (file for binary, directory for csv).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Binary)]
        format: Format,
    },
    /// Read a dataset, print a JSON summary, optionally re-export it.
    DatasetImport {
        /// Input path (file for binary, directory for csv).
        #[arg(long)]
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Binary)]
        format: Format,
        /// Re-export the imported dataset here (same format as --reexport-format).
        #[arg(long)]
        reexport: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Binary)]
        reexport_format: Format,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetIoError),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Dataset(_) | CliError::Io(_) => EXIT_IO,
            CliError::Experiment(e) => match e {
                // A config can describe an impossible generation target;
                // surface that as a config problem.
                ExperimentError::Sim(linsub_core::simulator::SimError::BadConfig(_)) => {
                    EXIT_CONFIG
                }
                _ => EXIT_NUMERICAL,
            },
        }
    }
}

fn io_err(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{context}: {e}"))
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => run_command(&config, &out, seed, threads),
        Command::DatasetExport {
            config,
            out,
            format,
        } => dataset_export(&config, &out, format),
        Command::DatasetImport {
            path,
            format,
            reexport,
            reexport_format,
        } => dataset_import(&path, format, reexport.as_deref(), reexport_format),
    }
}

fn run_command(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    threads: usize,
) -> Result<(), CliError> {
    let config = ExperimentConfig::from_path(config_path)?;
    if threads > 0 {
        // Ignore failure if a global pool exists already (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let report = run_experiment(&config, seed)?;
    std::fs::create_dir_all(out).map_err(|e| io_err("creating output directory", e))?;
    match &report.body {
        ReportBody::SweepSamples { rows } => {
            write_sweep_csv(rows, &out.join("success_curve.csv"))
                .map_err(|e| io_err("writing success_curve.csv", e))?;
        }
        ReportBody::SweepTau { trials, .. } => {
            write_tau_csv(trials, &out.join("tau_dims.csv"))
                .map_err(|e| io_err("writing tau_dims.csv", e))?;
        }
        _ => {}
    }
    let report_path = out.join("report.json");
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| io_err("serializing report", e))?;
    std::fs::write(&report_path, json).map_err(|e| io_err("writing report", e))?;
    println!("{}", report_path.display());
    Ok(())
}

fn dataset_export(config_path: &Path, out: &Path, format: Format) -> Result<(), CliError> {
    let config = DatasetConfig::from_path(config_path)?;
    let mut gen = config.generation.clone();
    gen.seed = config.seed;
    let system = random_system(&gen).map_err(ExperimentError::Sim)?.system;
    let dataset = sample_batch(&system, config.samples, config.horizon, config.seed);
    match format {
        Format::Binary => dataset_io::write_binary(&dataset, out)?,
        Format::Csv => dataset_io::write_csv(&dataset, out)?,
    }
    println!("{}", out.display());
    Ok(())
}

fn dataset_import(
    path: &Path,
    format: Format,
    reexport: Option<&Path>,
    reexport_format: Format,
) -> Result<(), CliError> {
    let dataset = match format {
        Format::Binary => dataset_io::read_binary(path)?,
        Format::Csv => dataset_io::read_csv(path)?,
    };
    let summary = serde_json::json!({
        "n": dataset.n,
        "horizon": dataset.horizon,
        "d": dataset.d,
        "l": dataset.l,
        "r_meta": dataset.r_meta,
        "seed": dataset.seed,
        "has_latents": dataset.h.is_some(),
        "has_distractors": dataset.z.is_some(),
        "noisy_one_step": dataset.metadata.noisy_one_step,
    });
    println!("{summary}");
    if let Some(target) = reexport {
        match reexport_format {
            Format::Binary => dataset_io::write_binary(&dataset, target)?,
            Format::Csv => dataset_io::write_csv(&dataset, target)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_run_flags() {
        let cli = Cli::try_parse_from([
            "linsub", "run", "--config", "c.json", "--out", "outdir", "--seed", "7",
            "--threads", "2",
        ])
        .unwrap();
        match cli.command {
            Command::Run {
                seed, threads, ..
            } => {
                assert_eq!(seed, Some(7));
                assert_eq!(threads, 2);
            }
            _ => panic!("expected run"),
        }
    }
}
