//! CSV and file emission. CSVs are headered, LF-terminated, with every float
//! written as `{:.16e}` (17 significant digits), so reruns are byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::CliError;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Table of floats with the given header.
pub fn csv_table<I>(header: &[&str], rows: I) -> String
where
    I: IntoIterator,
    I::Item: AsRef<[f64]>,
{
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let row = row.as_ref();
        debug_assert_eq!(row.len(), header.len());
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

/// A CSV cell: floats are formatted at full precision, everything else verbatim.
#[derive(Debug, Clone)]
pub enum Cell {
    F(f64),
    I(u64),
    S(String),
    B(bool),
}

pub fn csv_records(header: &[&str], rows: &[Vec<Cell>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .map(|c| match c {
                Cell::F(v) => fmt_f64(*v),
                Cell::I(v) => v.to_string(),
                Cell::S(s) => s.clone(),
                Cell::B(b) => b.to_string(),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}
