//! `topdown`: command-line driver for the top-down forecasting pipeline.

mod artifacts;
mod commands;
mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::artifacts::{write_manifest, FAILED_MARKER};
use crate::config::PipelineConfig;

#[derive(Parser)]
#[command(
    name = "topdown",
    version,
    about = "Coherent probabilistic top-down hierarchical forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Pipeline config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; beats `TOPDOWN_OUT` and the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the panel, write a summary.
    Ingest(Common),
    /// Train the proportions model and write a checkpoint.
    Train(Common),
    /// Top-down sample forecast from the trained checkpoint.
    Forecast(Common),
    /// Score every forecast and baseline file in the output directory.
    Evaluate(Common),
    /// Historical-proportions, bottom-up and OLS-reconciled forecasts.
    Baseline(Common),
    /// Monte Carlo comparison of top-down and bottom-up linear estimators.
    SimulateTheory(Common),
    /// Write a synthetic panel and hierarchy to the configured data paths.
    Generate(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Ingest(c) => ("ingest", c),
            Command::Train(c) => ("train", c),
            Command::Forecast(c) => ("forecast", c),
            Command::Evaluate(c) => ("evaluate", c),
            Command::Baseline(c) => ("baseline", c),
            Command::SimulateTheory(c) => ("simulate-theory", c),
            Command::Generate(c) => ("generate", c),
        }
    }
}

/// A failure as reported on stderr and in the `_FAILED` marker.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }

    pub fn csv(path: &Path, e: csv::Error) -> Self {
        Self::new("csv", format!("{}: {e}", path.display()))
    }

    /// Bad input exits with 2, anything else with 1.
    fn exit_code(&self) -> u8 {
        match self.kind {
            "config" | "hierarchy" | "data" | "dimension" => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<topdown_core::Error> for CliError {
    fn from(e: topdown_core::Error) -> Self {
        use topdown_core::Error as E;
        let kind = match &e {
            E::Hierarchy(_) => "hierarchy",
            E::Dimension(_) => "dimension",
            E::Data(_) => "data",
            E::Config(_) => "config",
            E::Numerical(_) => "numerical",
            E::Diverged { .. } => "diverged",
            E::Io { .. } => "io",
            E::Csv(_) => "csv",
            E::Json(_) => "json",
        };
        Self::new(kind, e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    status: &'static str,
    command: &'a str,
    error: &'a CliError,
}

fn run(name: &str, common: &Common, command: &Command) -> Result<(), (CliError, Option<PathBuf>)> {
    let loaded = PipelineConfig::load(&common.config, common.seed, common.out.clone()).map_err(|e| (e, None))?;
    let out = loaded.out.clone();
    let fail = |e: CliError| (e, Some(out.clone()));
    std::fs::create_dir_all(&out).map_err(|e| fail(CliError::io(&out, e)))?;
    let marker = out.join(FAILED_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| fail(CliError::io(&marker, e)))?;
    }
    let cfg = &loaded.config;
    let artifacts = match command {
        Command::Ingest(_) => commands::ingest(cfg, &out),
        Command::Train(_) => commands::train(cfg, &out),
        Command::Forecast(_) => commands::forecast(cfg, &out),
        Command::Evaluate(_) => commands::evaluate(cfg, &out),
        Command::Baseline(_) => commands::baseline(cfg, &out),
        Command::SimulateTheory(_) => commands::simulate_theory(cfg, &out),
        Command::Generate(_) => commands::generate(cfg),
    }
    .map_err(fail)?;
    write_manifest(&out, name, &common.config, &loaded.bytes, cfg.seed, &artifacts).map_err(fail)?;
    for a in &artifacts {
        log::info!("wrote {}", a.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (name, common) = cli.command.parts();
    match run(name, common, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err((err, out)) => {
            let report = ErrorReport {
                status: "error",
                command: name,
                error: &err,
            };
            let json = serde_json::to_string(&report).unwrap_or_else(|_| err.to_string());
            if let Some(dir) = out {
                // best effort: the original error is what matters
                let _ = std::fs::write(dir.join(FAILED_MARKER), format!("{json}\n"));
            }
            eprintln!("{json}");
            ExitCode::from(err.exit_code())
        }
    }
}
