//! Command-line front end: configuration, subcommands for each analysis
//! stage, and CSV data export for external plotting.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

/// Errors mapped onto process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration (exit code 2).
    Config(String),
    /// Unreadable or malformed data files (exit code 3).
    Data(String),
    /// Numerical failure during analysis (exit code 4).
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    /// Classify a library error raised while computing (not while reading
    /// configuration): I/O and format problems are data errors, the rest are
    /// numeric failures.
    pub fn numeric(e: nmsa_core::Error) -> Self {
        match e {
            nmsa_core::Error::Io(e) => CliError::Data(e.to_string()),
            nmsa_core::Error::Format(m) => CliError::Data(m),
            other => CliError::Numeric(other.to_string()),
        }
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "nmsa",
    about = "Stroboscopic nanomechanical state amplifier: simulation and analysis",
    version
)]
struct Cli {
    /// Configuration file (TOML); omit to run with built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the ensemble master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured trajectory ensemble and write records.
    Simulate,
    /// Scan the trap-stage timings and classify the amplifier modes.
    Tune,
    /// Run the amplifier at a chosen timing: gain, noise figure sweep,
    /// force-sensing SNR and distortion report.
    Amplify,
    /// Calibrate normalization scales from an equilibrium record.
    Calibrate {
        /// Trajectory file (.leva or .csv); omitted: simulate one.
        input: Option<PathBuf>,
    },
    /// Post-select one trajectory subset and export it.
    Postselect,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.ensemble.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.directory = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Tune => commands::tune(&cfg),
        Command::Amplify => commands::amplify(&cfg),
        Command::Calibrate { input } => commands::calibrate(&cfg, input.as_deref()),
        Command::Postselect => commands::postselect(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nmsa: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
