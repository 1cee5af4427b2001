//! `disdis`: experiments on disagreement-discrepancy surrogates.
//!
//! Exit codes: 0 on success, 1 on bad input or a failed run, 2 when a run
//! completes but one of its checks fails. Errors are printed to stderr as a
//! single JSON object.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use disdis::SurrogateKind;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "disdis", version, about = "Disagreement-discrepancy surrogate experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Surrogate kinds to run (repeatable); overrides the config file.
    #[arg(long = "kind", global = true)]
    pub kinds: Vec<SurrogateKind>,
    /// Number of classes; overrides the config file.
    #[arg(long = "K", global = true)]
    pub k: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a Gaussian source/target pair and an optional band instance.
    Gen(#[command(flatten)] Common),
    /// Band scans and gap functionals of the surrogates.
    Consistency(#[command(flatten)] Common),
    /// Train a reference and one critic per kind on one seed.
    Train(#[command(flatten)] Common),
    /// Error bound on one seed.
    Bound(#[command(flatten)] Common),
    /// Bound violation rates over many seeds.
    Calibrate(#[command(flatten)] Common),
    /// Bound-minimising perturbation of the target data.
    Attack(#[command(flatten)] Common),
    /// Shift detection with boosted critics.
    Detect(#[command(flatten)] Common),
    /// Fast internal checks of the numerical core.
    Selftest(#[command(flatten)] Common),
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(String),
    Check(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Run(format!("{}: {e}", path.display()))
    }

    pub fn from_json(e: serde_json::Error) -> Self {
        CliError::Run(e.to_string())
    }

    fn report(&self) -> (u8, serde_json::Value) {
        let (code, kind, msg) = match self {
            CliError::Config(m) => (1, "config", m),
            CliError::Run(m) => (1, "run", m),
            CliError::Check(m) => (2, "check", m),
        };
        (code, json!({ "error": kind, "message": msg }))
    }
}

impl From<disdis::Error> for CliError {
    fn from(e: disdis::Error) -> Self {
        match e {
            disdis::Error::InvalidInput(m) => CliError::Config(m),
            other => CliError::Run(other.to_string()),
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("DISDIS_THREADS") else { return Ok(()) };
    let n: usize = v.parse().map_err(|_| CliError::config(format!("DISDIS_THREADS must be a count, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Run(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Gen(c) => commands::gen(&c),
        Command::Consistency(c) => commands::consistency(&c),
        Command::Train(c) => commands::train(&c),
        Command::Bound(c) => commands::bound(&c),
        Command::Calibrate(c) => commands::calibrate(&c),
        Command::Attack(c) => commands::attack(&c),
        Command::Detect(c) => commands::detect(&c),
        Command::Selftest(c) => commands::selftest(&c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string() }));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, body) = e.report();
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
