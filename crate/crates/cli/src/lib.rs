//! Library half of the `mqed` binary, so the commands can be driven from tests.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use config::RunConfig;

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad or inconsistent input, unwritable output: exit code 1.
    Config(String),
    /// The computation itself failed: exit code 2.
    Physics(microsphere_qed::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Physics(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Physics(e) => write!(f, "computation failed: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<microsphere_qed::Error> for CliError {
    fn from(e: microsphere_qed::Error) -> Self {
        CliError::Physics(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "mqed", version, about = "Two-atom entanglement in a coated microsphere")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir` from the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Assert a fully deterministic run. Nothing in the pipeline draws random
    /// numbers, so this only records the intent in the run summary.
    #[arg(long, global = true)]
    pub seedless: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Im G spectra at (a1,a1), (a1,a2), (a2,a2), the radial map at the peak,
    /// and the resonance report.
    Spectrum,
    /// Coupling matrix at the field frequency.
    Couplings,
    /// Time evolution of the two-atom state.
    Evolve {
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Concurrence on a (χ1, χ2) grid at fixed time.
    Surface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Closed form for rank-one couplings.
    Factored,
    /// Normal-mode solution for an arbitrary coupling matrix.
    General,
    /// Master equation with field loss.
    Lindblad,
}

/// Parses the configuration and runs one command, writing the human-readable
/// summary to `report`.
pub fn run(cli: &Cli, report: &mut dyn std::io::Write) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::from_toml("")?,
    };
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    std::fs::create_dir_all(&config.output.dir).map_err(|e| {
        CliError::Config(format!("cannot create output directory {}: {e}", config.output.dir.display()))
    })?;
    if cli.seedless {
        commands::say(report, "seedless run: no random numbers are drawn")?;
    }
    match cli.command {
        Command::Spectrum => commands::spectrum(&config, report),
        Command::Couplings => commands::couplings(&config, report),
        Command::Evolve { mode } => commands::evolve(&config, mode, report),
        Command::Surface => commands::surface(&config, report),
    }
}
