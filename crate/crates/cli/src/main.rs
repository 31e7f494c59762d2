//! `loraq`: quantize weight matrices into residual + low-rank bundles,
//! evaluate them, run the optimize × rotate ablation and inspect bundles.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Stable process exit codes, one per error class.
pub const EXIT_CODES: [(&str, u8); 13] = [
    ("E_USAGE", 2),
    ("E_SHAPE", 3),
    ("E_PARAM", 4),
    ("E_CONVERGENCE", 5),
    ("E_NUMERIC", 6),
    ("E_LOOKUP", 7),
    ("E_FORMAT", 8),
    ("E_CORRUPT", 9),
    ("E_VERSION", 10),
    ("E_BUDGET", 11),
    ("E_PRECONDITION", 12),
    ("E_IO", 13),
    ("E_CONFIG", 14),
];

#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: "E_CONFIG", message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        EXIT_CODES.iter().find(|(c, _)| *c == self.code).map_or(1, |(_, e)| *e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line = self.message.replace('\n', " ");
        write!(f, "error[{}]: {line}", self.code)
    }
}

impl From<loraq_core::Error> for CliError {
    fn from(e: loraq_core::Error) -> Self {
        Self { code: e.code(), message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "loraq", version, about = "Low-rank compensated 4-bit weight quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize LQT1 weights into LRQB bundles.
    Quantize {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        weights: Vec<PathBuf>,
    },
    /// Report reconstruction and product errors of a bundle.
    Evaluate {
        #[command(flatten)]
        common: Common,
        bundle: PathBuf,
        /// The original weight (LQT1).
        weight: PathBuf,
        /// Activations (LQT1, samples × d); defaults to the identity.
        #[arg(long)]
        act: Option<PathBuf>,
    },
    /// Run the optimize × rotate grid and print mean errors per cell.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        weights: Vec<PathBuf>,
    },
    /// Print a bundle's manifest, shapes and bit accounting.
    Inspect {
        bundle: PathBuf,
        #[arg(long)]
        machine: bool,
    },
}

#[derive(Args)]
pub struct Common {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunConfig,
    /// Keep the SVD factors instead of optimizing them.
    #[arg(long)]
    pub no_optimize: bool,
    /// Skip the rotation of the low-rank factors.
    #[arg(long)]
    pub no_rotate: bool,
    /// Print JSON instead of text.
    #[arg(long)]
    pub machine: bool,
}

impl Common {
    pub fn resolved(&self) -> Result<RunConfig, CliError> {
        let file = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let mut flags = self.run.clone();
        if self.no_optimize {
            flags.optimize = Some(false);
        }
        if self.no_rotate {
            flags.rotate = Some(false);
        }
        Ok(file.layered(flags))
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("LORAQ_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::config(format!("LORAQ_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Quantize { common, weights } => commands::quantize(&common, &weights),
        Command::Evaluate { common, bundle, weight, act } => commands::evaluate(&common, &bundle, &weight, act.as_deref()),
        Command::Ablate { common, weights } => commands::ablate(&common, &weights),
        Command::Inspect { bundle, machine } => commands::inspect(&bundle, machine),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError { code: "E_USAGE", message: first });
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
