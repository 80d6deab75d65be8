//! CLI errors, exit codes and the one-line error report.

use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] covnn::Error),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {msg}")]
    ConfigParse { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    exit_code: i32,
    message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Config(_) | CliError::ConfigParse { .. } => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) => "ConfigError",
            CliError::ConfigParse { .. } => "ConfigParseError",
            CliError::Io { .. } => "IoError",
            CliError::Runtime(_) => "RuntimeError",
        }
    }

    /// Single-line JSON object: `{"error":..,"exit_code":..,"message":..}`.
    pub fn line(&self) -> String {
        let message = self.to_string().replace(['\n', '\r'], " ");
        serde_json::to_string(&ErrorLine { error: self.kind(), exit_code: self.exit_code(), message })
            .expect("error line serializes")
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
