//! Experiment driver for the `lml` command: config parsing, dispatch to the
//! solver modules of `lml-core`, CSV/JSON emission and run records.
//!
//! Exit-status contract: 0 when every enabled check passes, 1 on a failed
//! check or numerical failure, 2 on a config or schema error.

pub mod compare;
pub mod config;
pub mod export;
pub mod record;
pub mod run;

use std::path::PathBuf;

pub use compare::{compare_runs, DiffReport};
pub use config::{ExperimentConfig, Mode, SCHEMA_VERSION};
pub use record::RunRecord;
pub use run::{run, RunOptions};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed or inconsistent config, or mismatched records.
    #[error("schema error: {0}")]
    Schema(String),
    /// A solver failed; details were written to `report`.
    #[error("numerical failure in {module}: {msg} (report: {})", report.display())]
    Numerical { module: String, msg: String, report: PathBuf },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Numerical { .. } | CliError::Io { .. } => 1,
        }
    }
}
