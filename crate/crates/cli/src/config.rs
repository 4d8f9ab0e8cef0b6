use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use lml_core::envelope::{build_envelopes, EnvelopeSign, PowerEnvelope};
use lml_core::phase::{PhaseParams, SymmetricMatrix};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Version of the config and run-record layout. Bumped on any incompatible change.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Barriers,
    Dirichlet,
    LimitStudy,
    Nonexistence,
    Selfcheck,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Barriers => "barriers",
            Mode::Dirichlet => "dirichlet",
            Mode::LimitStudy => "limit_study",
            Mode::Nonexistence => "nonexistence",
            Mode::Selfcheck => "selfcheck",
        };
        f.write_str(s)
    }
}

/// Phase parameters. Exactly one of `matrix` and `diagonal` must be given.
/// Without `g_inf` the limit phase is taken as `f(λ(A))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagonal: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_inf: Option<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub c: f64,
    #[serde(default = "default_sign")]
    pub sign: EnvelopeSign,
}

fn default_sign() -> EnvelopeSign {
    EnvelopeSign::TwoSided
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0_sub: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0_super: Option<f64>,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_intervals")]
    pub intervals: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_r_min")]
    pub r_min: f64,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    /// Points on the `e₁` axis written to the barrier CSVs.
    #[serde(default = "default_axis_points")]
    pub axis_points: usize,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self {
            w0_sub: None,
            w0_super: None,
            rtol: default_rtol(),
            intervals: default_intervals(),
            samples: default_samples(),
            r_min: default_r_min(),
            r_max: default_r_max(),
            axis_points: default_axis_points(),
        }
    }
}

fn default_rtol() -> f64 {
    1e-10
}
fn default_intervals() -> usize {
    4000
}
fn default_samples() -> usize {
    1000
}
fn default_r_min() -> f64 {
    1e-3
}
fn default_r_max() -> f64 {
    1e3
}
fn default_axis_points() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletConfig {
    /// A single level; merged with `s_levels`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_level: Option<f64>,
    #[serde(default)]
    pub s_levels: Vec<f64>,
    /// Grid spacing for every level; default 1/16 up to level 4 and 1/8 above.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_linear_tol")]
    pub linear_tol: f64,
    /// Run the barrier sandwich check (needs `M(A) > 1` and `β > 2`).
    #[serde(default = "yes")]
    pub sandwich: bool,
    /// Write the full `(x, y, z, u)` table next to the binary dump.
    #[serde(default = "yes")]
    pub export_fields: bool,
}

impl DirichletConfig {
    /// Levels in increasing order, duplicates removed.
    pub fn levels(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.s_levels.iter().copied().chain(self.s_level).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitStudyConfig {
    pub s_levels: Vec<f64>,
    pub probe_radii: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_linear_tol")]
    pub linear_tol: f64,
}

fn default_newton_tol() -> f64 {
    1e-8
}
fn default_max_iters() -> usize {
    50
}
fn default_linear_tol() -> f64 {
    1e-10
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonexistenceConfig {
    #[serde(default = "default_radial_n")]
    pub n: usize,
    pub g0: f64,
    pub g_inf: f64,
    /// Each exponent is an independent run; they execute in parallel.
    pub betas: Vec<f64>,
}

fn default_radial_n() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barriers: Option<BarrierConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dirichlet: Option<DirichletConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_study: Option<LimitStudyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonexistence: Option<NonexistenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Absolute tolerances used by `compare`, keyed by metric name or by its
    /// last dotted component.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub compare_tolerances: BTreeMap<String, f64>,
}

impl ExperimentConfig {
    /// A config with only the mode set; enough for `selfcheck`.
    pub fn minimal(mode: Mode) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            mode,
            params: None,
            envelope: None,
            barriers: None,
            dirichlet: None,
            limit_study: None,
            nonexistence: None,
            output_dir: None,
            seed: None,
            compare_tolerances: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| CliError::Schema(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Schema(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Schema(msg) => CliError::Schema(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Structural checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Schema(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        let needs_params = matches!(self.mode, Mode::Barriers | Mode::Dirichlet | Mode::LimitStudy);
        if needs_params {
            if self.params.is_none() {
                return bad(format!("mode {} requires `params`", self.mode));
            }
            if self.envelope.is_none() {
                return bad(format!("mode {} requires `envelope`", self.mode));
            }
        }
        if let Some(e) = &self.envelope {
            if e.c.is_nan() || e.c < 0.0 || !e.c.is_finite() {
                return bad(format!("envelope.c must be finite and nonnegative, got {}", e.c));
            }
        }
        for (key, tol) in &self.compare_tolerances {
            positive(&format!("compare_tolerances.{key}"), *tol)?;
        }
        if let Some(b) = &self.barriers {
            positive("barriers.rtol", b.rtol)?;
            positive("barriers.r_min", b.r_min)?;
            if b.r_max.is_nan() || b.r_max <= b.r_min {
                return bad("barriers.r_max must exceed barriers.r_min".into());
            }
            if b.intervals < 10 || b.axis_points < 2 {
                return bad("barriers.intervals must be ≥ 10 and barriers.axis_points ≥ 2".into());
            }
        }
        match self.mode {
            Mode::Dirichlet => {
                let Some(d) = &self.dirichlet else {
                    return bad("mode dirichlet requires `dirichlet`".into());
                };
                let levels = d.levels();
                if levels.is_empty() {
                    return bad("dirichlet requires `s_level` or a nonempty `s_levels`".into());
                }
                for s in levels {
                    positive("dirichlet.s_levels[]", s)?;
                }
                if let Some(h) = d.h {
                    positive("dirichlet.h", h)?;
                }
                positive("dirichlet.newton_tol", d.newton_tol)?;
                positive("dirichlet.linear_tol", d.linear_tol)?;
            }
            Mode::LimitStudy => {
                let Some(l) = &self.limit_study else {
                    return bad("mode limit_study requires `limit_study`".into());
                };
                if l.s_levels.is_empty() || l.probe_radii.is_empty() {
                    return bad("limit_study requires nonempty `s_levels` and `probe_radii`".into());
                }
                if l.s_levels.windows(2).any(|w| w[1].is_nan() || w[1] <= w[0]) {
                    return bad("limit_study.s_levels must be strictly increasing".into());
                }
                for &s in &l.s_levels {
                    positive("limit_study.s_levels[]", s)?;
                }
                for &r in &l.probe_radii {
                    if r.is_nan() || r < 0.0 {
                        return bad(format!("limit_study.probe_radii entries must be nonnegative, got {r}"));
                    }
                }
                if let Some(h) = l.h {
                    positive("limit_study.h", h)?;
                }
                positive("limit_study.newton_tol", l.newton_tol)?;
                positive("limit_study.linear_tol", l.linear_tol)?;
            }
            Mode::Nonexistence => {
                let Some(x) = &self.nonexistence else {
                    return bad("mode nonexistence requires `nonexistence`".into());
                };
                if x.betas.is_empty() {
                    return bad("nonexistence.betas must be nonempty".into());
                }
                for &b in &x.betas {
                    positive("nonexistence.betas[]", b)?;
                }
            }
            Mode::Barriers | Mode::Selfcheck => {}
        }
        if needs_params {
            let p = self.phase_params()?;
            if matches!(self.mode, Mode::Dirichlet | Mode::LimitStudy) && p.n != 3 {
                return bad(format!("mode {} is implemented for n = 3 only, got n = {}", self.mode, p.n));
            }
            self.envelopes()?;
        }
        Ok(())
    }

    /// Phase parameters; structural violations (band, definiteness) are config errors.
    pub fn phase_params(&self) -> Result<PhaseParams, CliError> {
        let p = self.params.as_ref().ok_or_else(|| CliError::Schema("missing `params`".into()))?;
        let matrix = match (&p.matrix, &p.diagonal) {
            (Some(rows), None) => SymmetricMatrix::from_rows(rows).map_err(schema)?,
            (None, Some(d)) => SymmetricMatrix::diagonal(d),
            _ => return Err(CliError::Schema("params needs exactly one of `matrix` and `diagonal`".into())),
        };
        let params = match p.g_inf {
            Some(g) => PhaseParams::new(matrix, g, p.beta),
            None => PhaseParams::from_matrix(matrix, p.beta),
        };
        params.map_err(schema)
    }

    pub fn envelope(&self) -> Result<&EnvelopeConfig, CliError> {
        self.envelope.as_ref().ok_or_else(|| CliError::Schema("missing `envelope`".into()))
    }

    pub fn envelopes(&self) -> Result<PowerEnvelope, CliError> {
        let e = self.envelope()?;
        build_envelopes(&self.phase_params()?, e.c, e.sign).map_err(schema)
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Schema(format!("{name} must be positive and finite, got {v}")))
    }
}

fn schema(e: lml_core::Error) -> CliError {
    CliError::Schema(e.to_string())
}
