mod infer;
mod manifest;
mod simulate;
mod study;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Selective inference for LASSO logistic regression on individual or pooled tests.
#[derive(Debug, Parser)]
#[command(name = "poolsel", version)]
struct Cli {
    /// Worker threads for replicate-level parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset from the logistic design with pooled testing.
    Simulate(simulate::Args),
    /// Fit the LASSO by EM and report post-selection intervals.
    Infer(infer::Args),
    /// Run a preset Monte Carlo study.
    Study(study::Args),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Info {
    Louis,
    Sandwich,
}

impl From<Info> for poolsel::InfoMethod {
    fn from(v: Info) -> Self {
        match v {
            Info::Louis => poolsel::InfoMethod::Louis,
            Info::Sandwich => poolsel::InfoMethod::Sandwich,
        }
    }
}

/// A failure with its process exit code: 2 usage or validation, 3 I/O,
/// 4 numerical.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Self { code: 3, message: format!("{}: {err}", path.display()) }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl From<poolsel::Error> for CliError {
    fn from(err: poolsel::Error) -> Self {
        let code = match &err {
            poolsel::Error::Io(_) => 3,
            e if e.is_numerical() => 4,
            _ => 2,
        };
        Self { code, message: err.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Serializes `value` as pretty JSON to `path`.
pub fn write_json(path: &PathBuf, value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::numerical(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Simulate(args) => simulate::run(args),
        Command::Infer(args) => infer::run(args),
        Command::Study(args) => study::run(args, cli.threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
