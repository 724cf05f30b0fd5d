use std::path::PathBuf;

use thiserror::Error;

/// Process exit status of the `dcl` binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Usage = 1,
    Data = 2,
    Numerical = 3,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: dcl_core::Error,
    },
    #[error("config {path}: {msg}")]
    Config { path: PathBuf, msg: String },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("{0} already exists; refusing to overwrite it (choose another --out)")]
    Exists(PathBuf),
    #[error("gradient check failed: max relative error {max_rel_error} exceeds {tol}")]
    GradCheck { max_rel_error: f64, tol: f64 },
    #[error(transparent)]
    Core(#[from] dcl_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::Usage,
            CliError::GradCheck { .. } => ExitCode::Numerical,
            CliError::Core(e) | CliError::File { source: e, .. } if e.is_numerical() => ExitCode::Numerical,
            _ => ExitCode::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
