//! Error taxonomy shared across the workspace.
//!
//! Every failure the command-line tools can hit maps onto a small set of
//! variants so that process exit codes stay meaningful: configuration and
//! usage problems exit with 1, numeric faults (NaN/Inf reaching a guarded
//! value) with 2, and divergence aborts (loss blowing up past the guard
//! threshold) with 3.

use std::path::PathBuf;

/// Workspace-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad run configuration: unknown keys, out-of-range values,
    /// inconsistent dimensions, missing files.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed command-line usage or invalid argument combination.
    #[error("usage error: {0}")]
    Usage(String),

    /// A guarded tensor became non-finite. Names the layer or quantity so
    /// the failure is attributable.
    #[error("numeric fault in `{site}`: {detail}")]
    NumericFault { site: String, detail: String },

    /// Training loss exceeded the divergence guard and the run was aborted.
    #[error("divergence abort: {0}")]
    Divergence(String),

    /// Checkpoint doesn't match the current architecture/config.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    /// I/O with path context.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// (De)serialization failures for configs, checkpoints, and logs.
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Numeric fault constructor with a named site.
    pub fn numeric(site: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NumericFault {
            site: site.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::CheckpointMismatch(_) => 1,
            Error::Io { .. } | Error::Serde(_) => 1,
            Error::NumericFault { .. } => 2,
            Error::Divergence(_) => 3,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
