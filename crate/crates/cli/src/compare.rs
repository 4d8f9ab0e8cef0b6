use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::Mode;
use crate::export::{csv_records, Cell};
use crate::record::RunRecord;
use crate::CliError;

/// One metric that differs between two runs, or is present in only one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub key: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub abs_diff: Option<f64>,
    /// `a / b`; for an error metric of an `h` run against an `h/2` run this is
    /// the convergence factor (4 for second order).
    pub ratio: Option<f64>,
    pub tolerance: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub mode: Mode,
    pub schema_version: u32,
    pub entries: Vec<DiffEntry>,
    /// Checks whose pass/fail status differs.
    pub checks_changed: Vec<String>,
    /// Artifacts present in both manifests with different hashes, or in only one.
    pub files_changed: Vec<String>,
    pub passed: bool,
}

impl DiffReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.checks_changed.is_empty() && self.files_changed.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(Cell::S(String::new()), Cell::F);
        let rows: Vec<Vec<Cell>> = self
            .entries
            .iter()
            .map(|e| {
                vec![
                    Cell::S(e.key.clone()),
                    opt(e.a),
                    opt(e.b),
                    opt(e.abs_diff),
                    opt(e.ratio),
                    Cell::F(e.tolerance),
                    Cell::B(e.within),
                ]
            })
            .collect();
        csv_records(&["key", "a", "b", "abs_diff", "ratio", "tolerance", "within"], &rows)
    }
}

/// Tolerance for `key`: an exact entry wins, then one for its last dotted
/// component, else zero (exact agreement).
pub fn tolerance_for(key: &str, tolerances: &BTreeMap<String, f64>) -> f64 {
    if let Some(&t) = tolerances.get(key) {
        return t;
    }
    key.rsplit('.').next().and_then(|leaf| tolerances.get(leaf)).copied().unwrap_or(0.0)
}

pub fn compare_runs(a: &RunRecord, b: &RunRecord, tolerances: &BTreeMap<String, f64>) -> Result<DiffReport, CliError> {
    if a.mode != b.mode {
        return Err(CliError::Schema(format!("cannot compare a {} run with a {} run", a.mode, b.mode)));
    }
    if a.schema_version != b.schema_version {
        return Err(CliError::Schema(format!("schema versions differ ({} vs {})", a.schema_version, b.schema_version)));
    }
    let keys: BTreeSet<&String> = a.metrics.keys().chain(b.metrics.keys()).collect();
    let mut entries = Vec::new();
    for key in keys {
        let (va, vb) = (a.metrics.get(key).copied(), b.metrics.get(key).copied());
        if va == vb {
            continue;
        }
        let tolerance = tolerance_for(key, tolerances);
        let (abs_diff, ratio, within) = match (va, vb) {
            (Some(x), Some(y)) => {
                let d = (x - y).abs();
                (Some(d), (y != 0.0).then(|| x / y), d <= tolerance)
            }
            _ => (None, None, false),
        };
        entries.push(DiffEntry { key: key.clone(), a: va, b: vb, abs_diff, ratio, tolerance, within });
    }

    let status = |r: &RunRecord| r.checks.iter().map(|c| (c.name.clone(), c.passed)).collect::<BTreeMap<_, _>>();
    let (sa, sb) = (status(a), status(b));
    let check_names: BTreeSet<&String> = sa.keys().chain(sb.keys()).collect();
    let checks_changed: Vec<String> = check_names.into_iter().filter(|k| sa.get(*k) != sb.get(*k)).cloned().collect();

    let hashes = |r: &RunRecord| r.files.iter().map(|f| (f.path.clone(), f.sha256.clone())).collect::<BTreeMap<_, _>>();
    let (ha, hb) = (hashes(a), hashes(b));
    let paths: BTreeSet<&String> = ha.keys().chain(hb.keys()).collect();
    let files_changed: Vec<String> = paths.into_iter().filter(|p| ha.get(*p) != hb.get(*p)).cloned().collect();

    let passed = entries.iter().all(|e| e.within) && checks_changed.is_empty();
    Ok(DiffReport { mode: a.mode, schema_version: a.schema_version, entries, checks_changed, files_changed, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::CheckOutcome;

    fn record(mode: Mode, metrics: &[(&str, f64)]) -> RunRecord {
        RunRecord {
            schema_version: 1,
            mode,
            config_hash: String::new(),
            started_unix: 0,
            finished_unix: 0,
            tool_version: String::new(),
            seed: 0,
            threads: 1,
            files: Vec::new(),
            checks: vec![CheckOutcome {
                name: "x".into(),
                passed: true,
                value: None,
                tolerance: None,
                detail: String::new(),
            }],
            metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            passed: true,
        }
    }

    #[test]
    fn identical_runs_give_an_empty_diff() {
        let a = record(Mode::Barriers, &[("sub.exponent", 1.5)]);
        let d = compare_runs(&a, &a.clone(), &BTreeMap::new()).unwrap();
        assert!(d.is_empty() && d.passed);
    }

    #[test]
    fn different_modes_are_a_schema_error() {
        let a = record(Mode::Barriers, &[]);
        let b = record(Mode::Dirichlet, &[]);
        assert!(matches!(compare_runs(&a, &b, &BTreeMap::new()), Err(CliError::Schema(_))));
    }

    #[test]
    fn refinement_ratios_and_tolerances() {
        let a = record(Mode::Dirichlet, &[("s2.oracle_error", 4e-4), ("s2.newton_iters", 5.0)]);
        let b = record(Mode::Dirichlet, &[("s2.oracle_error", 1e-4), ("s2.newton_iters", 5.0)]);
        let tol = BTreeMap::from([("oracle_error".to_string(), 1e-3)]);
        let d = compare_runs(&a, &b, &tol).unwrap();
        assert_eq!(d.entries.len(), 1);
        assert!((d.entries[0].ratio.unwrap() - 4.0).abs() < 1e-12);
        assert!(d.passed);
        assert!(!compare_runs(&a, &b, &BTreeMap::new()).unwrap().passed);
        assert!(d.to_csv().starts_with("key,a,b,abs_diff,ratio,tolerance,within\ns2.oracle_error,"));
    }

    #[test]
    fn tolerance_lookup_prefers_exact_keys() {
        let tol = BTreeMap::from([("exponent".to_string(), 0.1), ("sub.exponent".to_string(), 0.01)]);
        assert_eq!(tolerance_for("sub.exponent", &tol), 0.01);
        assert_eq!(tolerance_for("super.exponent", &tol), 0.1);
        assert_eq!(tolerance_for("super.c", &tol), 0.0);
    }
}
