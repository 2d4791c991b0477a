use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const MISSING_FILE: i32 = 3;
    pub const SCHEMA: i32 = 4;
    pub const NUMERICAL: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{0}")]
    Schema(String),

    #[error("{0}")]
    Numerical(String),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::MissingFile(_) => exit::MISSING_FILE,
            CliError::Schema(_) => exit::SCHEMA,
            CliError::Numerical(_) => exit::NUMERICAL,
            CliError::Other(_) => exit::OTHER,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::MissingFile(_) => "missing_file",
            CliError::Schema(_) => "schema",
            CliError::Numerical(_) => "numerical",
            CliError::Other(_) => "other",
        }
    }

    /// One-line JSON written to stderr.
    pub fn to_json(&self) -> String {
        json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.code(),
        })
        .to_string()
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingFile(path.to_path_buf())
        } else {
            CliError::Other(format!("{}: {e}", path.display()))
        }
    }
}

impl From<sdf_atlas::Error> for CliError {
    fn from(e: sdf_atlas::Error) -> Self {
        use sdf_atlas::Error as E;
        match e {
            E::Io { path, source } => CliError::io(&path, source),
            E::InvalidConfig(_) => CliError::Usage(e.to_string()),
            E::NonFinite(_) | E::NumericalAbort { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Schema(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Schema(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Schema(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
