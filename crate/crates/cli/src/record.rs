use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Mode;
use crate::export::sha256_hex;
use crate::CliError;

pub const RECORD_FILE: &str = "run_record.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Measured quantity; absent when not finite.
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

/// Everything needed to audit a run after the fact. Timestamps live only here,
/// never in the CSV or JSON artifacts listed in `files`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub mode: Mode,
    /// sha256 of the canonical JSON serialization of the effective config.
    pub config_hash: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub tool_version: String,
    pub seed: u64,
    pub threads: usize,
    pub files: Vec<FileEntry>,
    pub checks: Vec<CheckOutcome>,
    pub metrics: BTreeMap<String, f64>,
    pub passed: bool,
}

impl RunRecord {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Schema(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column())))
    }

    /// Reads the record in `dir` and checks every manifest entry against the disk.
    pub fn read_verified(dir: &Path) -> Result<Self, CliError> {
        let rec = Self::read(&dir.join(RECORD_FILE))?;
        rec.verify_manifest(dir)?;
        Ok(rec)
    }

    pub fn verify_manifest(&self, dir: &Path) -> Result<(), CliError> {
        for f in &self.files {
            let path = dir.join(&f.path);
            let bytes = std::fs::read(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            if bytes.len() as u64 != f.bytes || sha256_hex(&bytes) != f.sha256 {
                return Err(CliError::Schema(format!("{} does not match its manifest entry", path.display())));
            }
        }
        Ok(())
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }
}
