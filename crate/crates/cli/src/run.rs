//! Mode dispatch. Every mode writes its artifacts through [`Ctx`], which
//! records the manifest, the checks and the scalar metrics of the run.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use lml_core::barrier::{
    axis_point, default_w0, fit_decay_rate, integrate_sub_profile, integrate_sub_profile_with,
    integrate_super_profile_with, make_barrier, sample_points, verify_subsolution, verify_supersolution,
    BarrierFunction, ProfileKind, ProfileOptions, PHASE_MARGIN_TOL,
};
use lml_core::dirichlet::{
    build_grid, default_spacing, encode_binary, entire_limit_study, newton_solve, radial_reduction_solve,
    sandwich_check, sandwich_midpoint, GridSolution, NewtonOptions,
};
use lml_core::envelope::{
    build_envelopes, h_zero_clamp, j_factor, solve_h, solve_h_super, solve_w_over, solve_w_under, Envelope,
    EnvelopeSign, TestPhase,
};
use lml_core::numerics::ode::OdeTolerances;
use lml_core::phase::{m_of_a, phase_value, PhaseParams, Spectrum, SymmetricMatrix};
use lml_core::radial::{build_radial_phase, integrate_radial_profile, nonexistence_report, GrowthClass, Verdict};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, Mode, SCHEMA_VERSION};
use crate::export::{csv_records, csv_table, sha256_hex, write_file, Cell};
use crate::record::{CheckOutcome, FileEntry, RunRecord, RECORD_FILE};
use crate::CliError;

pub const ERROR_REPORT: &str = "error_report.json";

/// Command-line overrides of the config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Worker threads in use; recorded only, the pool is set up by the caller.
    pub threads: usize,
}

/// A solver failure, tagged with the module it came from.
enum Fail {
    Core(&'static str, lml_core::Error),
    Cli(CliError),
}

impl From<CliError> for Fail {
    fn from(e: CliError) -> Self {
        Fail::Cli(e)
    }
}

fn m<T>(module: &'static str, r: lml_core::Result<T>) -> Result<T, Fail> {
    r.map_err(|e| Fail::Core(module, e))
}

struct Ctx {
    dir: PathBuf,
    seed: u64,
    files: Vec<FileEntry>,
    checks: Vec<CheckOutcome>,
    metrics: BTreeMap<String, f64>,
}

impl Ctx {
    fn emit(&mut self, name: &str, bytes: &[u8]) -> Result<(), Fail> {
        write_file(&self.dir.join(name), bytes)?;
        self.files.push(FileEntry { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    fn emit_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Fail> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Schema(format!("cannot serialize {name}: {e}")))?;
        text.push('\n');
        self.emit(name, text.as_bytes())
    }

    fn check(
        &mut self,
        name: impl Into<String>,
        passed: bool,
        value: f64,
        tolerance: Option<f64>,
        detail: impl Into<String>,
    ) {
        self.checks.push(CheckOutcome {
            name: name.into(),
            passed,
            value: value.is_finite().then_some(value),
            tolerance,
            detail: detail.into(),
        });
    }

    /// `|value − expected| ≤ tol`, recorded with the deviation as its value.
    fn check_close(&mut self, name: impl Into<String>, value: f64, expected: f64, tol: f64) {
        let dev = (value - expected).abs();
        self.check(name, dev <= tol, dev, Some(tol), format!("{value:e} vs {expected:e}"));
    }

    /// Non-finite values are dropped; they cannot round-trip through JSON.
    fn metric(&mut self, key: impl Into<String>, value: f64) {
        if value.is_finite() {
            self.metrics.insert(key.into(), value);
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// The config as it was effectively run: seed resolved, output location dropped.
fn effective_config(config: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut c = config.clone();
    c.seed = Some(seed);
    c.output_dir = None;
    c
}

pub fn config_hash(config: &ExperimentConfig, seed: u64) -> String {
    let bytes = serde_json::to_vec(&effective_config(config, seed)).expect("config serializes");
    sha256_hex(&bytes)
}

/// Runs one experiment and writes its artifacts and `run_record.json` into the
/// output directory. The record is returned even when checks fail; callers map
/// `passed` to the exit status.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunRecord, CliError> {
    config.validate()?;
    let dir = opts
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("lml-{}", config.mode)));
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    let seed = opts.seed.or(config.seed).unwrap_or(0);
    let started_unix = unix_now();
    let mut ctx = Ctx { dir: dir.clone(), seed, files: Vec::new(), checks: Vec::new(), metrics: BTreeMap::new() };

    let outcome = match config.mode {
        Mode::Barriers => barriers(config, &mut ctx),
        Mode::Dirichlet => dirichlet(config, &mut ctx),
        Mode::LimitStudy => limit_study(config, &mut ctx),
        Mode::Nonexistence => nonexistence(config, &mut ctx),
        Mode::Selfcheck => selfcheck(&mut ctx),
    };
    match outcome {
        Ok(()) => {}
        Err(Fail::Cli(e)) => return Err(e),
        Err(Fail::Core(module, e)) => return Err(report_failure(&dir, module, &e)),
    }

    let passed = !ctx.checks.is_empty() && ctx.checks.iter().all(|c| c.passed);
    let record = RunRecord {
        schema_version: SCHEMA_VERSION,
        mode: config.mode,
        config_hash: config_hash(config, seed),
        started_unix,
        finished_unix: unix_now(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        threads: opts.threads,
        files: ctx.files,
        checks: ctx.checks,
        metrics: ctx.metrics,
        passed,
    };
    let mut text = serde_json::to_string_pretty(&record).expect("record serializes");
    text.push('\n');
    write_file(&dir.join(RECORD_FILE), text.as_bytes())?;
    Ok(record)
}

fn report_failure(dir: &Path, module: &str, e: &lml_core::Error) -> CliError {
    let path = dir.join(ERROR_REPORT);
    let mut report = json!({ "module": module, "message": e.to_string() });
    match e {
        lml_core::Error::Convergence { history, .. } => report["history"] = json!(history),
        lml_core::Error::Integration { t, state, .. } => {
            report["t"] = json!(t);
            report["state"] = json!(state);
        }
        _ => {}
    }
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    if let Err(io) = write_file(&path, text.as_bytes()) {
        return io;
    }
    CliError::Numerical { module: module.to_string(), msg: e.to_string(), report: path }
}

fn kind_label(kind: ProfileKind) -> &'static str {
    match kind {
        ProfileKind::Sub => "sub",
        ProfileKind::Super => "super",
        ProfileKind::Radial => "radial",
    }
}

fn log_spaced(lo: f64, hi: f64, count: usize) -> impl Iterator<Item = f64> {
    let last = (count - 1) as f64;
    (0..count).map(move |k| lo * (hi / lo).powf(k as f64 / last))
}

fn barriers(config: &ExperimentConfig, ctx: &mut Ctx) -> Result<(), Fail> {
    let params = config.phase_params()?;
    let env: Arc<dyn Envelope> = Arc::new(config.envelopes()?);
    let b = config.barriers.clone().unwrap_or_default();
    let popts = ProfileOptions {
        intervals: b.intervals,
        tol: OdeTolerances { rtol: b.rtol, ..Default::default() },
        ..Default::default()
    };
    let target = params.m_of_a.min(0.5 * params.beta);
    let expect_log = (params.m_of_a - 0.5 * params.beta).abs() < 0.05;
    let points = sample_points(params.n, b.samples, b.r_min, b.r_max, ctx.seed);

    let mut fit_rows = Vec::new();
    let mut summary = serde_json::Map::new();
    for kind in [ProfileKind::Sub, ProfileKind::Super] {
        let label = kind_label(kind);
        let given = if kind == ProfileKind::Sub { b.w0_sub } else { b.w0_super };
        let w0 = match given {
            Some(w) => w,
            None => m("barrier_ode", default_w0(kind, env.as_ref(), &params.a))?,
        };
        let profile = if kind == ProfileKind::Sub {
            m("barrier_ode", integrate_sub_profile_with(&env, &params.a, w0, &popts))?
        } else {
            m("barrier_ode", integrate_super_profile_with(&env, &params.a, w0, &popts))?
        };
        let terminal = profile.terminal_deviation();
        ctx.check(format!("{label}.terminal"), terminal.abs() < 1e-6, terminal.abs(), Some(1e-6), "|W(s_K) − 1|");
        ctx.metric(format!("{label}.w0"), w0);
        ctx.metric(format!("{label}.terminal"), terminal);

        let bar = m("barrier_ode", make_barrier(profile, &params))?;
        let fit = match bar.rate {
            Some(f) => f,
            None => m("barrier_ode", fit_decay_rate(&bar.profile, params.beta, params.m_of_a))?,
        };
        ctx.check_close(format!("{label}.rate"), fit.exponent, target, 0.05);
        ctx.check(
            format!("{label}.log_model"),
            fit.log_flag == expect_log,
            if fit.log_flag { 1.0 } else { 0.0 },
            None,
            format!("log correction expected: {expect_log}"),
        );
        ctx.metric(format!("{label}.exponent"), fit.exponent);
        ctx.metric(format!("{label}.r2"), fit.r2);
        ctx.metric(format!("{label}.log_flag"), if fit.log_flag { 1.0 } else { 0.0 });
        ctx.metric(format!("{label}.c"), bar.c);

        let report = if kind == ProfileKind::Sub {
            m("barrier_ode", verify_subsolution(&bar, &points))?
        } else {
            m("barrier_ode", verify_supersolution(&bar, &points))?
        };
        ctx.check(
            format!("{label}.inequality"),
            report.passed,
            report.worst_margin,
            Some(PHASE_MARGIN_TOL),
            "worst phase margin",
        );
        if let Some(lm) = report.lemma_margin {
            ctx.check(format!("{label}.refined_bound"), lm >= -1e-12, lm, Some(1e-12), "f(ā_J) − F(D²ū)");
        }
        ctx.metric(format!("{label}.worst_margin"), report.worst_margin);

        let rows = bar.profile.s.iter().zip(&bar.profile.w).map(|(&s, &w)| [s, w, bar.u_of_s(s)]);
        ctx.emit(&format!("{label}_profile.csv"), csv_table(&["s", "W", "U"], rows).as_bytes())?;
        let axis: Vec<[f64; 2]> =
            log_spaced(b.r_min, b.r_max, b.axis_points).map(|r| [r, bar.eval(&axis_point(params.n, r))]).collect();
        ctx.emit(&format!("{label}_barrier.csv"), csv_table(&["r", "u"], axis).as_bytes())?;

        fit_rows.push(vec![
            Cell::S(label.into()),
            Cell::F(fit.exponent),
            Cell::B(fit.log_flag),
            Cell::F(fit.r2),
            Cell::F(fit.window.0),
            Cell::F(fit.window.1),
            Cell::F(fit.prefactor),
            Cell::I(fit.samples as u64),
            Cell::F(fit.power_exponent),
            fit.log_exponent.map_or(Cell::S(String::new()), Cell::F),
            Cell::F(target),
        ]);
        summary.insert(
            label.into(),
            json!({ "w0": w0, "terminal": terminal, "c": bar.c, "rate": fit, "verification": report }),
        );
    }
    let header = [
        "kind",
        "exponent",
        "log_flag",
        "r2",
        "window_lo",
        "window_hi",
        "prefactor",
        "samples",
        "power_exponent",
        "log_exponent",
        "target",
    ];
    ctx.emit("rate_fits.csv", csv_records(&header, &fit_rows).as_bytes())?;
    summary.insert("params".into(), json!(params));
    summary.insert("envelope".into(), json!(config.envelopes()?));
    summary.insert("target_exponent".into(), json!(target));
    summary.insert("log_expected".into(), json!(expect_log));
    ctx.emit_json("barriers.json", &summary)
}

/// Both barriers with default starts, when the pair exists (`M(A) > 1`, `β > 2`).
fn barrier_pair(
    params: &PhaseParams,
    c: f64,
    sign: EnvelopeSign,
) -> Result<Option<(BarrierFunction, BarrierFunction)>, Fail> {
    if !(params.m_of_a > 1.0 && params.beta > 2.0) {
        return Ok(None);
    }
    let env: Arc<dyn Envelope> = Arc::new(m("envelopes_implicit", build_envelopes(params, c, sign))?);
    let opts = ProfileOptions::default();
    let w_sub = m("barrier_ode", default_w0(ProfileKind::Sub, env.as_ref(), &params.a))?;
    let w_sup = m("barrier_ode", default_w0(ProfileKind::Super, env.as_ref(), &params.a))?;
    let sub = m("barrier_ode", integrate_sub_profile_with(&env, &params.a, w_sub, &opts))?;
    let sup = m("barrier_ode", integrate_super_profile_with(&env, &params.a, w_sup, &opts))?;
    Ok(Some((m("barrier_ode", make_barrier(sub, params))?, m("barrier_ode", make_barrier(sup, params))?)))
}

fn level_key(s: f64) -> String {
    format!("s{s}")
}

fn grid_csv(sol: &GridSolution) -> String {
    let rows = (0..sol.u.len()).map(|i| {
        let x = sol.grid.position(i);
        [x[0], x[1], x[2], sol.u[i]]
    });
    csv_table(&["x", "y", "z", "u"], rows)
}

fn dirichlet(config: &ExperimentConfig, ctx: &mut Ctx) -> Result<(), Fail> {
    let params = config.phase_params()?;
    let e = config.envelope()?.clone();
    let d = config.dirichlet.clone().expect("validated");
    let phase = TestPhase::new(&params, e.c, e.sign);
    let opts =
        NewtonOptions { tol: d.newton_tol, max_iters: d.max_iters, linear_tol: d.linear_tol, ..Default::default() };
    let pair = if d.sandwich { barrier_pair(&params, e.c, e.sign)? } else { None };
    let g = |x: &[f64; 3]| phase.value_at_s(params.s_of(x));

    let mut levels = Vec::new();
    let mut bounds = Vec::new();
    for s_level in d.levels() {
        let key = level_key(s_level);
        let h = d.h.unwrap_or_else(|| default_spacing(s_level));
        let grid = Arc::new(m("dirichlet_fd", build_grid(&params, s_level, h))?);
        let fallback = pair.as_ref().map(|(sub, sup)| sandwich_midpoint(&grid, sub, sup));
        let sol = m("dirichlet_fd", newton_solve(&grid, &g, None, fallback, &opts))?;
        ctx.check(
            format!("{key}.residual"),
            sol.final_residual <= d.newton_tol,
            sol.final_residual,
            Some(d.newton_tol),
            "max |F(D²u) − g|",
        );
        ctx.metric(format!("{key}.h"), h);
        ctx.metric(format!("{key}.nodes"), sol.u.len() as f64);
        ctx.metric(format!("{key}.newton_iters"), sol.newton_iters as f64);
        ctx.metric(format!("{key}.residual"), sol.final_residual);
        ctx.metric(format!("{key}.max_deviation"), sol.max_deviation_from_quadratic());
        if e.c == 0.0 {
            let dev = sol.max_deviation_from_quadratic();
            ctx.check(format!("{key}.constant_phase"), dev <= 1e-10, dev, Some(1e-10), "max |u − ½xᵀAx|");
        }
        let mut entry = json!({
            "s_level": s_level,
            "h": h,
            "nodes": sol.u.len(),
            "clipped_nodes": grid.clipped_nodes(),
            "demoted_nodes": grid.demoted,
            "newton_iters": sol.newton_iters,
            "final_residual": sol.final_residual,
            "residual_history": sol.history,
            "linear_iters": sol.linear_iters,
            "restarted": sol.restarted,
            "max_deviation_from_quadratic": sol.max_deviation_from_quadratic(),
        });
        if let Ok(oracle) = radial_reduction_solve(&params, &phase, s_level) {
            let err = oracle.max_error(&sol);
            let tol = 20.0 * h * h;
            ctx.check(format!("{key}.oracle"), err <= tol, err, Some(tol), "max |u − u_radial|");
            ctx.metric(format!("{key}.oracle_error"), err);
            entry["oracle_error"] = json!(err);
        }
        if let Some((sub, sup)) = &pair {
            let rep = m("dirichlet_fd", sandwich_check(&sol, sub, sup))?;
            ctx.check(
                format!("{key}.sandwich"),
                rep.passed,
                rep.lower_margin.min(rep.upper_margin),
                Some(rep.tol),
                "sandwich margins",
            );
            ctx.metric(format!("{key}.c1"), rep.c1);
            bounds.push((rep.c1, rep.tol));
            entry["sandwich"] = json!(rep);
        }
        ctx.emit(&format!("dirichlet_{key}.bin"), &encode_binary(&sol))?;
        if d.export_fields {
            ctx.emit(&format!("dirichlet_{key}.csv"), grid_csv(&sol).as_bytes())?;
        }
        levels.push(entry);
    }
    if bounds.len() > 1 {
        // C₁ = barrier part + 10h² + 1e-6; the barrier part must not depend on the level,
        // and the largest C₁ then serves every level.
        let parts: Vec<f64> = bounds.iter().map(|(c1, tol)| c1 - tol).collect();
        let spread = parts.iter().copied().fold(f64::MIN, f64::max) - parts.iter().copied().fold(f64::MAX, f64::min);
        ctx.check("sandwich.common_c1", spread <= 1e-12, spread, Some(1e-12), "spread of C₁ − tol across levels");
        ctx.metric("sandwich.c1", bounds.iter().map(|b| b.0).fold(f64::MIN, f64::max));
    }
    ctx.emit_json("dirichlet.json", &json!({ "params": params, "phase": phase, "newton": opts, "levels": levels }))
}

fn limit_study(config: &ExperimentConfig, ctx: &mut Ctx) -> Result<(), Fail> {
    let params = config.phase_params()?;
    let e = config.envelope()?.clone();
    let l = config.limit_study.clone().expect("validated");
    let phase = TestPhase::new(&params, e.c, e.sign);
    let opts =
        NewtonOptions { tol: l.newton_tol, max_iters: l.max_iters, linear_tol: l.linear_tol, ..Default::default() };
    let spacing = |s: f64| l.h.unwrap_or_else(|| default_spacing(s));
    let rep = m("dirichlet_fd", entire_limit_study(&params, &phase, &l.s_levels, &l.probe_radii, &spacing, &opts))?;

    let mut rows = Vec::new();
    for lev in &rep.levels {
        let key = level_key(lev.s_level);
        ctx.check(
            format!("{key}.residual"),
            lev.final_residual <= l.newton_tol,
            lev.final_residual,
            Some(l.newton_tol),
            "max |F(D²u) − g|",
        );
        ctx.metric(format!("{key}.residual"), lev.final_residual);
        for (&r, &u) in rep.probe_radii.iter().zip(&lev.probe_values) {
            rows.push([lev.s_level, lev.h, r, u]);
        }
    }
    for (k, c) in rep.cauchy.iter().enumerate() {
        ctx.metric(format!("cauchy.{k}"), *c);
    }
    ctx.check(
        "cauchy.monotone",
        rep.cauchy_monotone,
        rep.cauchy.last().copied().unwrap_or(0.0),
        None,
        "successive level differences decrease",
    );
    if let Some(c) = rep.c_inf {
        ctx.metric("c_inf", c);
    }
    if let Some(ff) = &rep.far_field {
        ctx.check_close("far_field.slope", ff.slope, ff.expected_slope, 0.15);
        ctx.metric("far_field.slope", ff.slope);
        ctx.metric("far_field.r2", ff.fit.r2);
        let n = params.n as f64;
        if (params.beta - n).abs() < 0.05 {
            ctx.check("far_field.log_model", ff.fit.log_flag, ff.fit.r2, None, "log-corrected decay expected at β = n");
        }
        let row = vec![vec![
            Cell::F(ff.slope),
            Cell::F(ff.expected_slope),
            Cell::F(ff.fit.exponent),
            Cell::B(ff.fit.log_flag),
            Cell::F(ff.fit.r2),
            Cell::F(ff.window.0),
            Cell::F(ff.window.1),
        ]];
        let header = ["slope", "expected_slope", "exponent", "log_flag", "r2", "window_lo", "window_hi"];
        ctx.emit("far_field.csv", csv_records(&header, &row).as_bytes())?;
    }
    ctx.emit("limit_probes.csv", csv_table(&["s_level", "h", "r", "u"], rows).as_bytes())?;
    ctx.emit_json("limit_study.json", &json!({ "params": params, "phase": phase, "report": rep }))
}

fn nonexistence(config: &ExperimentConfig, ctx: &mut Ctx) -> Result<(), Fail> {
    let x = config.nonexistence.clone().expect("validated");
    // Independent exponents run in parallel; output is written in config order.
    let results: Vec<_> = x
        .betas
        .par_iter()
        .map(|&beta| -> lml_core::Result<_> {
            let phase = build_radial_phase(x.n, x.g0, x.g_inf, beta)?;
            let sol = integrate_radial_profile(&phase)?;
            let report = nonexistence_report(&phase)?;
            Ok((beta, sol, report))
        })
        .collect();
    for r in results {
        let (beta, sol, report) = m("radial_nonexistence", r)?;
        let key = format!("beta{beta}");
        let growth = &report.growth;
        let expected = if beta <= 2.0 { Verdict::NonexistenceCertified } else { Verdict::OutsideScopeConvergent };
        ctx.check(
            format!("{key}.verdict"),
            report.verdict == expected,
            growth.ratio_1e7_1e4,
            None,
            format!("{:?}, expected {expected:?}", report.verdict),
        );
        if beta == 2.0 {
            ctx.check_close(format!("{key}.log_ratio"), growth.ratio_1e7_1e4, 1.75, 0.05 * 1.75);
        } else if beta < 2.0 {
            let ok = growth.class == GrowthClass::Power;
            ctx.check(format!("{key}.power_class"), ok, growth.power_r2, None, format!("{:?}", growth.class));
            ctx.check_close(format!("{key}.power_exponent"), growth.power_exponent, 2.0 - beta, 0.1);
        }
        ctx.metric(format!("{key}.ratio_1e7_1e4"), growth.ratio_1e7_1e4);
        ctx.metric(format!("{key}.power_exponent"), growth.power_exponent);
        ctx.metric(format!("{key}.log_coefficient"), growth.log_coefficient);
        ctx.metric(format!("{key}.d_end"), growth.d_end);
        ctx.metric(format!("{key}.phase_consistency"), report.phase_consistency);
        ctx.metric(format!("{key}.r_switch"), report.phase.r_switch);

        let p = &sol.profile;
        let rows = p.r.iter().zip(&p.w).map(|(&r, &w)| [r, w, sol.u0(r), sol.d(r)]);
        ctx.emit(&format!("radial_{key}.csv"), csv_table(&["r", "W", "u0", "d"], rows).as_bytes())?;
        ctx.emit_json(&format!("nonexistence_{key}.json"), &report)?;
    }
    Ok(())
}

/// Closed-form identities of the phase operator and the implicit functions.
fn selfcheck(ctx: &mut Ctx) -> Result<(), Fail> {
    let n3 = SymmetricMatrix::identity(3);
    ctx.check_close("phase.identity", m("phase_core", phase_value(&n3))?, 0.75 * PI, 1e-14);
    let d123 = SymmetricMatrix::diagonal(&[1.0, 2.0, 3.0]);
    ctx.check_close("phase.diag123", m("phase_core", phase_value(&d123))?, PI, 1e-12);
    let ones = m("phase_core", Spectrum::new(vec![1.0; 3]))?;
    ctx.check_close("m_of_a.ones", m("phase_core", m_of_a(&ones))?, 1.5, 1e-14);
    let mut worst: f64 = 0.0;
    for n in 2..=6 {
        for k in 1..=10 {
            let t = 0.25 * k as f64;
            let a = m("phase_core", Spectrum::new(vec![t; n]))?;
            worst = worst.max((m("phase_core", m_of_a(&a))? - 0.5 * n as f64).abs());
        }
    }
    ctx.check("m_of_a.scalar", worst <= 1e-12, worst, Some(1e-12), "M(t·I) = n/2");
    let mut j_worst: f64 = 0.0;
    for (a, w) in [(vec![1.0, 1.0, 1.0], 1.0), (vec![0.5, 1.0, 2.0], 0.7), (vec![3.0, 3.0], 2.5)] {
        let spec = m("phase_core", Spectrum::new(a))?;
        j_worst = j_worst.max(m("envelopes_implicit", j_factor(&spec, w, 0.0))?.abs());
    }
    ctx.check("j_factor.zero_dispersion", j_worst <= 1e-14, j_worst, Some(1e-14), "J(w, 0) = 0");
    let clamp_ok = h_zero_clamp(-0.5) == 0.0 && h_zero_clamp(0.0) == 0.0 && h_zero_clamp(0.3) == 0.3;
    ctx.check("h_zero_clamp", clamp_ok, 0.0, None, "max(0, h)");

    // Constant envelope at g_inf = f(1,1,1): every implicit function is at its fixed point.
    let params = m("phase_core", PhaseParams::scalar(3, 0.75 * PI, 4.0))?;
    let env: Arc<dyn Envelope> = Arc::new(m("envelopes_implicit", build_envelopes(&params, 0.0, EnvelopeSign::Above))?);
    for s in [0.0, 1.0, 1e6] {
        ctx.check_close(
            format!("w_under.constant.s{s}"),
            m("envelopes_implicit", solve_w_under(env.as_ref(), &params.a, s))?,
            1.0,
            1e-12,
        );
        ctx.check_close(
            format!("w_over.constant.s{s}"),
            m("envelopes_implicit", solve_w_over(env.as_ref(), &params.a, s))?,
            1.0,
            1e-12,
        );
    }
    ctx.check_close("h.constant", m("envelopes_implicit", solve_h(env.as_ref(), &params.a, 0.0, 1.0))?, 1.0, 1e-12);
    ctx.check_close(
        "h_super.constant",
        m("envelopes_implicit", solve_h_super(env.as_ref(), &params.a, 0.0, 1.0))?,
        0.0,
        1e-12,
    );
    let fixed = m("barrier_ode", integrate_sub_profile(&env, &params.a, 1.0))?;
    let drift = fixed.w.iter().map(|w| (w - 1.0).abs()).fold(0.0, f64::max);
    ctx.check("profile.fixed_point", drift <= 1e-15, drift, Some(1e-15), "W ≡ 1 under a constant envelope");
    let band = build_envelopes(&params, 0.9, EnvelopeSign::TwoSided);
    ctx.check(
        "envelope.band_violation",
        matches!(band, Err(lml_core::Error::Config(_))),
        0.0,
        None,
        "escaping the band is a config error",
    );

    let summary: Vec<_> = ctx.checks.iter().map(|c| json!({ "name": c.name, "passed": c.passed })).collect();
    ctx.emit_json("selfcheck.json", &summary)
}
