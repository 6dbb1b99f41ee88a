//! Command-line front end for `edgewatt`.
//!
//! [`run`] executes one invocation in-process and returns the exit code and
//! captured output streams, so the binary is a thin wrapper around it.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 a device profile lacks a coefficient the request needs.

pub mod cli;
mod commands;
pub mod format;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::Parser;

use cli::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_UNCALIBRATED: i32 = 3;

/// Environment variable naming a directory of extra device profile JSON files.
pub const PROFILE_DIR_ENV: &str = "EDGEWATT_PROFILE_DIR";

/// Process environment that influences a run.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub profile_dir: Option<PathBuf>,
}

impl Context {
    pub fn from_env() -> Self {
        Context { profile_dir: std::env::var_os(PROFILE_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from) }
    }
}

/// Result of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] edgewatt::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Model(e) if e.is_calibration_gap() => EXIT_UNCALIBRATED,
            CliError::Io { .. } | CliError::Model(_) => EXIT_DATA,
        }
    }
}

/// Output of a successful command: the result plus non-fatal warnings.
#[derive(Debug, Default)]
pub(crate) struct Report {
    pub stdout: String,
    pub warnings: Vec<String>,
}

/// Runs one invocation. `args` includes the program name.
pub fn run<I, T>(args: I, ctx: &Context) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    Outcome { code: EXIT_OK, stdout: text, stderr: String::new() }
                }
                _ => Outcome { code: EXIT_USAGE, stdout: String::new(), stderr: text },
            };
        }
    };
    match commands::dispatch(cli.command, ctx) {
        Ok(report) => {
            let stderr = report.warnings.iter().map(|w| format!("warning: {w}\n")).collect();
            Outcome { code: EXIT_OK, stdout: report.stdout, stderr }
        }
        Err(e) => Outcome { code: e.exit_code(), stdout: String::new(), stderr: format!("error: {e}\n") },
    }
}
