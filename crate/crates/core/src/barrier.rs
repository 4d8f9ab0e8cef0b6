//! Profile ODEs for the entire sub- and supersolutions, the barriers
//! `u(x) = U(½xᵀAx)` built from them, and decay-rate regression.
//!
//! Profiles are integrated in `t = ln(1+s)` for the deviation `φ = W − 1`:
//!
//! * sub:   `dφ/dt = (h₀(s,W) − a₁W)/(2aₙ)`
//! * super: `dφ/dt = H(s,W)`
//!
//! Barriers store `T(s) = ∫ₛ^∞ φ`, so that `U(s) = s − T(s)` and the
//! integration constant is `C = −T(0)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::{
    h_gap_deviation, j_factor, limit_offset, phase_increment, solve_h_super_deviation, solve_w_over, solve_w_under,
    Envelope,
};
use crate::error::{Error, Result};
use crate::numerics::fit::{fit_line, LineFit};
use crate::numerics::gauss_legendre5;
use crate::numerics::interp::UniformHermite;
use crate::numerics::ode::{integrate, uniform_grid, OdeTolerances};
use crate::phase::{eigen_sym, phase_sum, PhaseParams, Spectrum, SymmetricMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Sub,
    Super,
    Radial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileOptions {
    pub s_max: f64,
    /// Number of grid intervals, uniform in `t = ln(1+s)`.
    pub intervals: usize,
    pub tol: OdeTolerances,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { s_max: 1e10, intervals: 4000, tol: OdeTolerances::default() }
    }
}

/// Tabulated `W = U′` on a grid uniform in `t = ln(1+s)`.
#[derive(Debug, Clone)]
pub struct Profile {
    pub kind: ProfileKind,
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    /// `W − 1`.
    pub phi: Vec<f64>,
    /// `dφ/dt`.
    pub dphi: Vec<f64>,
    pub w0: f64,
    pub envelope: Arc<dyn Envelope>,
    pub a: Spectrum,
    interp: UniformHermite,
    offset: f64,
}

impl Profile {
    pub fn s_max(&self) -> f64 {
        self.s[self.s.len() - 1]
    }

    pub fn terminal_deviation(&self) -> f64 {
        self.phi[self.phi.len() - 1]
    }

    /// `W(s) − 1`.
    pub fn phi_at(&self, s: f64) -> f64 {
        self.interp.value(s.ln_1p())
    }

    pub fn w_at(&self, s: f64) -> f64 {
        1.0 + self.phi_at(s)
    }

    /// `dφ/dt` from the ODE at the interpolated state.
    pub fn rate_at(&self, s: f64) -> Result<f64> {
        self.rate(s, self.phi_at(s))
    }

    fn rate(&self, s: f64, phi: f64) -> Result<f64> {
        match self.kind {
            ProfileKind::Sub => sub_rate(self.envelope.as_ref(), &self.a, self.offset, s, phi),
            ProfileKind::Super => super_rate(self.envelope.as_ref(), &self.a, self.offset, s, phi),
            ProfileKind::Radial => Err(Error::Kind("radial profiles carry no envelope ODE".into())),
        }
    }
}

/// `(h₀(s, 1+φ) − a₁(1+φ))/(2aₙ)`.
pub fn sub_rate(env: &dyn Envelope, a: &Spectrum, offset: f64, s: f64, phi: f64) -> Result<f64> {
    let w = 1.0 + phi;
    let a1 = a.min();
    let delta = env.upper_excess(s) + offset - phase_increment(a, phi);
    let p = a1 * w;
    let (sd, cd) = delta.sin_cos();
    if !(cd - p * sd > 0.0) || !(w > 0.0) {
        return Err(Error::Domain(format!("h undefined at s = {s}, w = {w}")));
    }
    let gap = h_gap_deviation(a1, w, delta);
    let numerator = if p + gap < 0.0 { -p } else { gap };
    Ok(numerator / (2.0 * a.max()))
}

/// `H(s, 1+φ)`; zero on and above `w̄(s)`.
pub fn super_rate(env: &dyn Envelope, a: &Spectrum, offset: f64, s: f64, phi: f64) -> Result<f64> {
    let w = 1.0 + phi;
    if !(w > 0.0) {
        return Err(Error::Domain(format!("H needs w > 0, got {w}")));
    }
    let gap = -env.lower_deficit(s) + offset - phase_increment(a, phi);
    if gap <= 0.0 {
        return Ok(0.0);
    }
    Ok(solve_h_super_deviation(a, w, gap)?.value)
}

fn t_grid(opts: &ProfileOptions) -> Vec<f64> {
    uniform_grid(0.0, opts.s_max.ln_1p(), opts.intervals)
}

fn build_profile(
    kind: ProfileKind,
    env: &Arc<dyn Envelope>,
    a: &Spectrum,
    w0: f64,
    opts: &ProfileOptions,
) -> Result<Profile> {
    let offset = limit_offset(env.as_ref(), a);
    let t = t_grid(opts);
    let phi0 = w0 - 1.0;
    let traj = integrate(
        |tt, phi| {
            let s = tt.exp_m1();
            match kind {
                ProfileKind::Sub => sub_rate(env.as_ref(), a, offset, s, phi),
                _ => super_rate(env.as_ref(), a, offset, s, phi),
            }
        },
        phi0,
        &t,
        opts.tol,
    )?;
    let s: Vec<f64> = t.iter().map(|x| x.exp_m1()).collect();
    let w: Vec<f64> = traj.y.iter().map(|p| 1.0 + p).collect();
    let interp = UniformHermite::new(&t, traj.y.clone(), traj.dy.clone());
    Ok(Profile {
        kind,
        t,
        s,
        w,
        phi: traj.y,
        dphi: traj.dy,
        w0,
        envelope: Arc::clone(env),
        a: a.clone(),
        interp,
        offset,
    })
}

fn check_terminal(p: &Profile) -> Result<()> {
    let d = p.terminal_deviation();
    if d.abs() >= 1e-6 {
        return Err(Error::Internal(format!("profile ends at |W − 1| = {:e} ≥ 1e-6", d.abs())));
    }
    Ok(())
}

pub fn integrate_sub_profile(env: &Arc<dyn Envelope>, a: &Spectrum, w0: f64) -> Result<Profile> {
    integrate_sub_profile_with(env, a, w0, &ProfileOptions::default())
}

/// Solves `dW/ds = (h₀(s,W) − a₁W)/(2aₙ(s+1))`, `W(0) = w0 > w̲(0)`.
///
/// For a constant upper envelope `w0 = w̲(0) = 1` is the fixed point and is
/// accepted.
pub fn integrate_sub_profile_with(
    env: &Arc<dyn Envelope>,
    a: &Spectrum,
    w0: f64,
    opts: &ProfileOptions,
) -> Result<Profile> {
    let w_under0 = solve_w_under(env.as_ref(), a, 0.0)?;
    // With a constant envelope W ≡ w̲ = 1 solves the ODE and is admitted.
    let offset = limit_offset(env.as_ref(), a);
    let fixed_point = env.upper_excess(0.0) == 0.0 && offset - phase_increment(a, w0 - 1.0) == 0.0;
    if !(w0 > w_under0) && !fixed_point {
        return Err(Error::Domain(format!("w0 = {w0} must exceed w̲(0) = {w_under0}")));
    }
    let p = build_profile(ProfileKind::Sub, env, a, w0, opts)?;
    for k in 0..p.s.len() {
        if k > 0 && p.w[k] > p.w[k - 1] {
            return Err(Error::Internal(format!("sub profile increases at s = {}", p.s[k])));
        }
        let delta = env.upper_excess(p.s[k]) + p.offset - phase_increment(a, p.phi[k]);
        if delta > 0.0 || (delta == 0.0 && !fixed_point) {
            return Err(Error::Internal(format!("sub profile touches w̲ at s = {}", p.s[k])));
        }
    }
    check_terminal(&p)?;
    Ok(p)
}

pub fn integrate_super_profile(env: &Arc<dyn Envelope>, a: &Spectrum, w0: f64) -> Result<Profile> {
    integrate_super_profile_with(env, a, w0, &ProfileOptions::default())
}

/// Solves `dW/ds = H(s,W)/(s+1)`, `W(0) = w0 ∈ (0, w̄(0))`.
pub fn integrate_super_profile_with(
    env: &Arc<dyn Envelope>,
    a: &Spectrum,
    w0: f64,
    opts: &ProfileOptions,
) -> Result<Profile> {
    let w_over0 = solve_w_over(env.as_ref(), a, 0.0)?;
    if !(w0 > 0.0 && w0 < w_over0) {
        return Err(Error::Domain(format!("w0 = {w0} must lie in (0, w̄(0) = {w_over0})")));
    }
    let p = build_profile(ProfileKind::Super, env, a, w0, opts)?;
    for k in 0..p.s.len() {
        if k > 0 && p.w[k] < p.w[k - 1] {
            return Err(Error::Internal(format!("super profile decreases at s = {}", p.s[k])));
        }
        if p.w[k] < w0 {
            return Err(Error::Internal(format!("super profile drops below w0 at s = {}", p.s[k])));
        }
        let gap = -env.lower_deficit(p.s[k]) + p.offset - phase_increment(a, p.phi[k]);
        if gap <= 0.0 {
            return Err(Error::Internal(format!("super profile reaches w̄ at s = {}", p.s[k])));
        }
        if p.dphi[k] < 0.0 {
            return Err(Error::Internal(format!("H < 0 along the trajectory at s = {}", p.s[k])));
        }
    }
    check_terminal(&p)?;
    Ok(p)
}

/// Default starting values: `1.05·w̲(0)` and `0.95·w̄(0)`.
pub fn default_w0(kind: ProfileKind, env: &dyn Envelope, a: &Spectrum) -> Result<f64> {
    match kind {
        ProfileKind::Sub => Ok(1.05 * solve_w_under(env, a, 0.0)?),
        ProfileKind::Super => Ok(0.95 * solve_w_over(env, a, 0.0)?),
        ProfileKind::Radial => Err(Error::Kind("no default start for radial profiles".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Decay exponent `p` in `|W − 1| ≈ C s^(−p)` (times `ln s` if `log_flag`).
    pub exponent: f64,
    pub log_flag: bool,
    pub r2: f64,
    pub window: (f64, f64),
    /// `C` of the selected model.
    pub prefactor: f64,
    pub samples: usize,
    /// Exponent of the pure power model, kept for comparison.
    pub power_exponent: f64,
    /// Exponent of the logarithmic model when it was tested.
    pub log_exponent: Option<f64>,
}

pub const RATE_WINDOW: (f64, f64) = (1e3, 1e9);

/// Regression of `ln|W − 1|` on `t = ln(1+s)` over `s ∈ [10³, 10⁹]`.
///
/// When `|m_a − β/2| < 0.05` the model `|W − 1| ≈ C s^(−p) ln s` is fitted too
/// and selected if its residual is smaller.
pub fn fit_decay_rate(profile: &Profile, target_beta: f64, m_a: f64) -> Result<RateFit> {
    if profile.terminal_deviation().abs() >= 1e-4 {
        return Err(Error::Precondition(format!("|W(s_K) − 1| = {:e} ≥ 1e-4", profile.terminal_deviation().abs())));
    }
    let (lo, hi) = RATE_WINDOW;
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut sign = 0.0;
    for (k, &s) in profile.s.iter().enumerate() {
        if s < lo || s > hi {
            continue;
        }
        let phi = profile.phi[k];
        if phi == 0.0 || (sign != 0.0 && phi.signum() != sign) {
            return Err(Error::Fit(format!("W − 1 vanishes or changes sign at s = {s}")));
        }
        sign = phi.signum();
        t.push(profile.t[k]);
        y.push(phi.abs().ln());
    }
    fit_power_or_log(&t, &y, (lo, hi), (m_a - 0.5 * target_beta).abs() < 0.05)
}

/// Shared model selection: `y = c − p·x` against `y = c + ln x − p·x`.
pub(crate) fn fit_power_or_log(x: &[f64], y: &[f64], window: (f64, f64), test_log: bool) -> Result<RateFit> {
    if x.len() < 20 {
        return Err(Error::Fit(format!("only {} samples in window [{:e}, {:e}]", x.len(), window.0, window.1)));
    }
    let power = fit_line(x, y)?;
    let mut fit = RateFit {
        exponent: -power.slope,
        log_flag: false,
        r2: power.r2,
        window,
        prefactor: power.intercept.exp(),
        samples: power.samples,
        power_exponent: -power.slope,
        log_exponent: None,
    };
    if test_log {
        let log = fit_shifted_log(x, y)?;
        fit.log_exponent = Some(-log.slope);
        if log.ssr < 0.5 * power.ssr {
            fit.exponent = -log.slope;
            fit.log_flag = true;
            fit.r2 = log.r2;
            fit.prefactor = log.intercept.exp();
        }
    }
    if fit.r2 < 0.999 {
        return Err(Error::Fit(format!("r² = {} below 0.999", fit.r2)));
    }
    Ok(fit)
}

/// Best fit of `y = c + ln(x + x₀) − p·x` over the shift `x₀ > −min x`.
///
/// The shift absorbs the constant in `(A + B ln s)s^(−p)`, which over a finite
/// window otherwise masks the logarithm.
fn fit_shifted_log(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let x_min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = x_min.abs().max(1.0);
    let fit_at = |z: f64| -> Result<LineFit> {
        let x0 = -x_min + scale * z.exp();
        let yy: Vec<f64> = x.iter().zip(y).map(|(xi, yi)| yi - (xi + x0).ln()).collect();
        fit_line(x, &yy)
    };
    let (z_lo, z_hi, coarse) = (-8.0, 8.0, 64);
    let mut best = (z_lo, f64::INFINITY);
    for k in 0..=coarse {
        let z = z_lo + (z_hi - z_lo) * k as f64 / coarse as f64;
        let ssr = fit_at(z)?.ssr;
        if ssr < best.1 {
            best = (z, ssr);
        }
    }
    let step = (z_hi - z_lo) / coarse as f64;
    let (mut a, mut b) = ((best.0 - step).max(z_lo), (best.0 + step).min(z_hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        if fit_at(c)?.ssr < fit_at(d)?.ssr {
            b = d;
        } else {
            a = c;
        }
    }
    fit_at(0.5 * (a + b))
}

/// `u(x) = U(½xᵀAx)` with `U(s) = ∫₀ˢ W + C`.
#[derive(Debug, Clone)]
pub struct BarrierFunction {
    pub profile: Profile,
    pub params: PhaseParams,
    /// `C = ∫₀^∞ (1 − W)`.
    pub c: f64,
    /// `∫_{s_k}^∞ (W − 1)` at the grid points.
    pub tail: Vec<f64>,
    pub rate: Option<RateFit>,
}

pub fn make_barrier(profile: Profile, params: &PhaseParams) -> Result<BarrierFunction> {
    if profile.kind == ProfileKind::Radial {
        return Err(Error::Kind("barriers are built from sub or super profiles".into()));
    }
    if profile.terminal_deviation().abs() >= 1e-6 {
        return Err(Error::Precondition("profile has not converged to 1 within 1e-6".into()));
    }
    if params.m_of_a <= 1.0 || params.beta <= 2.0 {
        return Err(Error::Precondition(format!(
            "finite integration constant needs M(A) > 1 and β > 2 (M = {}, β = {})",
            params.m_of_a, params.beta
        )));
    }
    let kk = profile.s.len() - 1;
    let (tail_end, rate) = if profile.phi.iter().all(|&p| p == 0.0) {
        (0.0, None)
    } else {
        let fit = fit_decay_rate(&profile, params.beta, params.m_of_a)?;
        if fit.exponent <= 1.0 {
            return Err(Error::Precondition(format!("nonintegrable tail: fitted exponent {} ≤ 1", fit.exponent)));
        }
        (tail_beyond(profile.phi[kk], profile.s[kk], &fit), Some(fit))
    };
    let mut tail = vec![0.0; kk + 1];
    tail[kk] = tail_end;
    for k in (0..kk).rev() {
        tail[k] = tail[k + 1] + segment_integral(&profile, profile.t[k], profile.t[k + 1]);
    }
    Ok(BarrierFunction { c: -tail[0], profile, params: params.clone(), tail, rate })
}

/// `∫_{t_a}^{t_b} φ(τ) e^τ dτ`, i.e. `∫ φ ds` over the matching `s` range.
fn segment_integral(p: &Profile, ta: f64, tb: f64) -> f64 {
    let interp = &p.interp;
    gauss_legendre5(|tau| interp.value(tau) * tau.exp(), ta, tb)
}

/// `∫_S^∞ φ` for `φ(s) = φ_S (s/S)^(−p)`, or `φ_S (s/S)^(−p) ln s / ln S` with a log correction.
fn tail_beyond(phi_s: f64, s_end: f64, fit: &RateFit) -> f64 {
    let q = fit.exponent - 1.0;
    let base = phi_s * s_end / q;
    if fit.log_flag {
        base * (1.0 + 1.0 / (q * s_end.ln()))
    } else {
        base
    }
}

impl BarrierFunction {
    pub fn kind(&self) -> ProfileKind {
        self.profile.kind
    }

    /// `∫ₛ^∞ (W − 1)`.
    pub fn tail_at(&self, s: f64) -> f64 {
        let p = &self.profile;
        let kk = p.s.len() - 1;
        if s >= p.s[kk] {
            return match &self.rate {
                None => 0.0,
                Some(fit) => tail_beyond(p.phi_at(s), s, fit),
            };
        }
        let t = s.ln_1p();
        let dt = p.t[1] - p.t[0];
        let k = ((t / dt).floor() as usize).min(kk - 1);
        self.tail[k + 1] + segment_integral(p, t, p.t[k + 1])
    }

    /// `U(s) = s − ∫ₛ^∞ (W − 1)`.
    pub fn u_of_s(&self, s: f64) -> f64 {
        s - self.tail_at(s)
    }

    /// `(U′(s), U″(s))`; `U″` comes from the ODE at the interpolated `W`.
    pub fn derivatives(&self, s: f64) -> Result<(f64, f64)> {
        let phi = self.profile.phi_at(s);
        Ok((1.0 + phi, self.profile.rate(s, phi)? / (1.0 + s)))
    }

    pub fn s_of(&self, x: &[f64]) -> f64 {
        self.params.s_of(x)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.u_of_s(self.s_of(x))
    }

    /// `Du = U′(s)·Ax`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (d1, _) = self.derivatives(self.s_of(x))?;
        Ok(self.params.matrix.mul_vec(x).into_iter().map(|v| d1 * v).collect())
    }

    /// `D²u = U′A + U″(Ax)(Ax)ᵀ`.
    pub fn hessian(&self, x: &[f64]) -> Result<SymmetricMatrix> {
        let (d1, d2) = self.derivatives(self.s_of(x))?;
        let ax = self.params.matrix.mul_vec(x);
        let a = &self.params.matrix;
        Ok(SymmetricMatrix::from_fn(self.params.n, |i, j| d1 * a.get(i, j) + d2 * ax[i] * ax[j]))
    }
}

/// Outcome of a pointwise barrier check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub kind: ProfileKind,
    pub samples: usize,
    /// Smallest signed margin of the phase inequality (≥ −1e-8 required).
    pub worst_margin: f64,
    pub worst_point: Vec<f64>,
    /// Largest violation of the Weyl sandwich, 0 if none.
    pub weyl_violation: f64,
    /// Smallest margin of `f(ā_J) − F(D²ū)` (super barriers only).
    pub lemma_margin: Option<f64>,
    pub passed: bool,
}

pub const PHASE_MARGIN_TOL: f64 = 1e-8;

struct PointCheck {
    margin: f64,
    weyl: f64,
    lemma: Option<f64>,
}

fn check_point(b: &BarrierFunction, x: &[f64]) -> Result<PointCheck> {
    let s = b.s_of(x);
    let (d1, d2) = b.derivatives(s)?;
    let hess = b.hessian(x)?;
    let lam = eigen_sym(&hess)?.values;
    let f = phase_sum(&lam);
    let ax = b.params.matrix.mul_vec(x);
    let v: f64 = ax.iter().map(|c| c * c).sum();
    let a = &b.params.a.values;
    let n = a.len();
    let mut weyl = 0.0f64;
    for i in 0..n {
        let base = a[i] * d1;
        let (lo, hi) = if d2 <= 0.0 { (base + v * d2, base) } else { (base, base + v * d2) };
        let tol = 1e-11 * (1.0 + base.abs() + (v * d2).abs());
        weyl = weyl.max(lo - lam[i] - tol).max(lam[i] - hi - tol);
    }
    let env = b.profile.envelope.as_ref();
    match b.kind() {
        ProfileKind::Sub => Ok(PointCheck { margin: f - env.upper(s), weyl, lemma: None }),
        _ => {
            let (a1, an) = (a[0], a[n - 1]);
            let j = j_factor(&b.params.a, d1, (s + 1.0) * d2)?;
            let spread = 2.0 * an * s * d2;
            let mut bar = vec![a1 * d1 + (1.0 + j) * spread];
            bar.extend(a[1..].iter().map(|ai| ai * d1 + j * spread));
            Ok(PointCheck { margin: env.lower(s) - f, weyl, lemma: Some(phase_sum(&bar) - f) })
        }
    }
}

fn verify(b: &BarrierFunction, points: &[Vec<f64>]) -> Result<VerificationReport> {
    let checks: Vec<Result<PointCheck>> =
        points.par_iter().filter(|x| x.iter().any(|&c| c != 0.0)).map(|x| check_point(b, x)).collect();
    let pts: Vec<&Vec<f64>> = points.iter().filter(|x| x.iter().any(|&c| c != 0.0)).collect();
    let mut report = VerificationReport {
        kind: b.kind(),
        samples: pts.len(),
        worst_margin: f64::INFINITY,
        worst_point: Vec::new(),
        weyl_violation: 0.0,
        lemma_margin: None,
        passed: true,
    };
    for (c, x) in checks.into_iter().zip(pts) {
        let c = c?;
        if c.margin < report.worst_margin {
            report.worst_margin = c.margin;
            report.worst_point = x.clone();
        }
        report.weyl_violation = report.weyl_violation.max(c.weyl);
        if let Some(l) = c.lemma {
            report.lemma_margin = Some(report.lemma_margin.map_or(l, |m: f64| m.min(l)));
        }
    }
    report.passed = report.worst_margin >= -PHASE_MARGIN_TOL
        && report.weyl_violation <= 0.0
        && report.lemma_margin.is_none_or(|m| m >= -1e-12);
    Ok(report)
}

/// Checks `F(D²u̲) ≥ ḡ(s) − 1e-8` and the Weyl bounds at every nonzero sample.
pub fn verify_subsolution(b: &BarrierFunction, points: &[Vec<f64>]) -> Result<VerificationReport> {
    if b.kind() != ProfileKind::Sub {
        return Err(Error::Kind("verify_subsolution needs a sub barrier".into()));
    }
    verify(b, points)
}

/// Checks `F(D²ū) ≤ g̲(s) + 1e-8`, the Weyl bounds, and `F(D²ū) ≤ f(ā_J)`.
pub fn verify_supersolution(b: &BarrierFunction, points: &[Vec<f64>]) -> Result<VerificationReport> {
    if b.kind() != ProfileKind::Super {
        return Err(Error::Kind("verify_supersolution needs a super barrier".into()));
    }
    verify(b, points)
}

/// `count` points with log-uniform radius in `[r_min, r_max]` and uniform
/// direction, followed by `±r eᵢ` for four radii spanning the range.
pub fn sample_points(n: usize, count: usize, r_min: f64, r_max: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lmin, lmax) = (r_min.ln(), r_max.ln());
    let mut pts = Vec::with_capacity(count + 8 * n);
    for _ in 0..count {
        let r = rng.random_range(lmin..=lmax).exp();
        let mut d: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        d.iter_mut().for_each(|v| *v *= r / norm);
        pts.push(d);
    }
    for k in 0..4 {
        let r = (lmin + (lmax - lmin) * k as f64 / 3.0).exp();
        for i in 0..n {
            for sgn in [1.0, -1.0] {
                let mut x = vec![0.0; n];
                x[i] = sgn * r;
                pts.push(x);
            }
        }
    }
    pts
}

/// `x = r e₁`.
pub fn axis_point(n: usize, r: f64) -> Vec<f64> {
    let mut x = vec![0.0; n];
    x[0] = r;
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{build_envelopes, EnvelopeSign, PowerEnvelope};

    fn setup(beta: f64, c: f64) -> (PhaseParams, Arc<dyn Envelope>) {
        let p = PhaseParams::diagonal(&[1.0, 1.0, 1.0], beta).unwrap();
        let e = build_envelopes(&p, c, EnvelopeSign::TwoSided).unwrap();
        (p, Arc::new(e))
    }

    fn coarse() -> ProfileOptions {
        ProfileOptions { intervals: 2000, ..ProfileOptions::default() }
    }

    #[test]
    fn constant_envelope_gives_fixed_point() {
        let (p, e) = setup(4.0, 0.0);
        let prof = integrate_sub_profile_with(&e, &p.a, 1.0, &coarse()).unwrap();
        assert!(prof.w.iter().all(|&w| w == 1.0));
        let b = make_barrier(prof, &p).unwrap();
        assert_eq!(b.c, 0.0);
        let x = [0.3, -1.2, 2.0];
        assert!((b.eval(&x) - p.s_of(&x)).abs() < 1e-15);
        let rep = verify_subsolution(&b, &sample_points(3, 200, 1e-3, 1e3, 1)).unwrap();
        assert!(rep.worst_margin.abs() < 1e-12 && rep.passed);
    }

    #[test]
    fn start_values_are_checked() {
        let (p, e) = setup(4.0, 0.1);
        let wu = solve_w_under(e.as_ref(), &p.a, 0.0).unwrap();
        assert!(matches!(integrate_sub_profile_with(&e, &p.a, wu, &coarse()), Err(Error::Domain(_))));
        let (_, e0) = setup(4.0, 0.0);
        assert!(matches!(integrate_super_profile_with(&e0, &p.a, 1.0, &coarse()), Err(Error::Domain(_))));
    }

    #[test]
    fn profiles_are_monotone_and_converge() {
        let (p, e) = setup(4.0, 0.1);
        let sub =
            integrate_sub_profile_with(&e, &p.a, default_w0(ProfileKind::Sub, e.as_ref(), &p.a).unwrap(), &coarse())
                .unwrap();
        assert!(sub.w.windows(2).all(|w| w[1] <= w[0]));
        assert!(sub.terminal_deviation().abs() < 1e-6);
        let sup = integrate_super_profile_with(
            &e,
            &p.a,
            default_w0(ProfileKind::Super, e.as_ref(), &p.a).unwrap(),
            &coarse(),
        )
        .unwrap();
        assert!(sup.w.windows(2).all(|w| w[1] >= w[0]));
        assert!(sup.dphi.iter().all(|&d| d >= 0.0));
        assert!(sup.terminal_deviation().abs() < 1e-6);
    }

    #[test]
    fn rhs_matches_literal_implicit_solves() {
        let (p, e) = setup(3.0, 0.1);
        for &(s, phi) in &[(0.0, 0.12), (3.0, 0.02), (200.0, 1e-3)] {
            let h = crate::envelope::solve_h(e.as_ref(), &p.a, s, 1.0 + phi).unwrap();
            let lit = (h.max(0.0) - (1.0 + phi)) / 2.0;
            assert!((sub_rate(e.as_ref(), &p.a, 0.0, s, phi).unwrap() - lit).abs() < 1e-12);
        }
        for &(s, phi) in &[(0.0, -0.12), (3.0, -0.02), (200.0, -1e-3)] {
            let hh = crate::envelope::solve_h_super(e.as_ref(), &p.a, s, 1.0 + phi).unwrap();
            assert!((super_rate(e.as_ref(), &p.a, 0.0, s, phi).unwrap() - hh).abs() < 1e-12);
        }
    }

    #[test]
    fn barrier_constants_have_the_expected_sign() {
        let (p, e) = setup(4.0, 0.1);
        let sub =
            integrate_sub_profile_with(&e, &p.a, default_w0(ProfileKind::Sub, e.as_ref(), &p.a).unwrap(), &coarse())
                .unwrap();
        let sup = integrate_super_profile_with(
            &e,
            &p.a,
            default_w0(ProfileKind::Super, e.as_ref(), &p.a).unwrap(),
            &coarse(),
        )
        .unwrap();
        let bs = make_barrier(sub, &p).unwrap();
        let bp = make_barrier(sup, &p).unwrap();
        assert!(bs.c < 0.0 && bp.c > 0.0);
        // U(0) = C and the tail vanishes at infinity.
        assert!((bs.u_of_s(0.0) - bs.c).abs() < 1e-14);
        assert!(bs.tail_at(1e9).abs() < 1e-4 * bs.c.abs());
    }

    #[test]
    fn constant_matches_direct_quadrature() {
        let (p, e) = setup(4.0, 0.1);
        let sub =
            integrate_sub_profile_with(&e, &p.a, default_w0(ProfileKind::Sub, e.as_ref(), &p.a).unwrap(), &coarse())
                .unwrap();
        // Composite Simpson in t of φ e^t over the table, plus the s^(−3/2) tail.
        let kk = sub.t.len() - 1;
        let dt = sub.t[1] - sub.t[0];
        let mut direct = 0.0;
        for k in 0..=kk {
            let wgt = if k == 0 || k == kk {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            direct += wgt * sub.phi[k] * sub.t[k].exp();
        }
        direct *= dt / 3.0;
        direct += sub.phi[kk] * sub.s[kk] / 0.5;
        let b = make_barrier(sub, &p).unwrap();
        assert!((b.c + direct).abs() < 1e-7 * direct.abs(), "{} vs {}", b.c, -direct);
    }

    fn profile_pair(beta: f64) -> (PhaseParams, Profile, Profile) {
        let (p, e) = setup(beta, 0.1);
        let sub = integrate_sub_profile(&e, &p.a, default_w0(ProfileKind::Sub, e.as_ref(), &p.a).unwrap()).unwrap();
        let sup = integrate_super_profile(&e, &p.a, default_w0(ProfileKind::Super, e.as_ref(), &p.a).unwrap()).unwrap();
        (p, sub, sup)
    }

    #[test]
    fn decay_rates_follow_the_smaller_exponent() {
        for &(beta, want, log) in &[(4.0, 1.5, false), (2.5, 1.25, false), (3.0, 1.5, true)] {
            let (p, sub, sup) = profile_pair(beta);
            for prof in [&sub, &sup] {
                let fit = fit_decay_rate(prof, beta, p.m_of_a).unwrap();
                assert!((fit.exponent - want).abs() < 0.05, "β = {beta}: {fit:?}");
                assert_eq!(fit.log_flag, log, "β = {beta}: {fit:?}");
            }
        }
    }

    #[test]
    fn barriers_satisfy_their_phase_inequalities() {
        let (p, sub, sup) = profile_pair(4.0);
        let pts = sample_points(3, 1000, 1e-3, 1e3, 11);
        let rs = verify_subsolution(&make_barrier(sub, &p).unwrap(), &pts).unwrap();
        assert!(rs.passed, "{rs:?}");
        let rp = verify_supersolution(&make_barrier(sup, &p).unwrap(), &pts).unwrap();
        assert!(rp.passed, "{rp:?}");
        assert!(rp.lemma_margin.unwrap() >= -1e-12);
    }

    #[test]
    fn barrier_approaches_the_quadratic_at_the_predicted_rate() {
        // β = 4, M = 1.5: |u − ½xᵀAx| ~ |x|^(2 − 3).
        let (p, sub, _) = profile_pair(4.0);
        let b = make_barrier(sub, &p).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for k in 0..=40 {
            let r = 10f64.powf(2.0 + 2.0 * k as f64 / 40.0);
            let pt = axis_point(3, r);
            x.push(r.ln());
            y.push((b.eval(&pt) - p.s_of(&pt)).abs().ln());
        }
        let fit = fit_line(&x, &y).unwrap();
        assert!((fit.slope + 1.0).abs() < 0.1, "{fit:?}");
    }

    #[test]
    fn kind_errors() {
        let (p, e) = setup(4.0, 0.1);
        let sup = integrate_super_profile_with(
            &e,
            &p.a,
            default_w0(ProfileKind::Super, e.as_ref(), &p.a).unwrap(),
            &coarse(),
        )
        .unwrap();
        let b = make_barrier(sup, &p).unwrap();
        assert!(matches!(verify_subsolution(&b, &[vec![1.0, 0.0, 0.0]]), Err(Error::Kind(_))));
    }

    #[test]
    fn barrier_preconditions() {
        let p = PhaseParams::diagonal(&[1.0, 1.0, 1.0], 2.0).unwrap();
        let e: Arc<dyn Envelope> = Arc::new(PowerEnvelope { g_inf: p.g_inf, beta: 2.0, k: 0.1 });
        let sub = integrate_sub_profile_with(&e, &p.a, 1.2, &coarse()).unwrap();
        assert!(matches!(make_barrier(sub, &p), Err(Error::Precondition(_))));
    }

    #[test]
    fn gradient_vanishes_at_origin() {
        let (p, e) = setup(4.0, 0.1);
        let sub =
            integrate_sub_profile_with(&e, &p.a, default_w0(ProfileKind::Sub, e.as_ref(), &p.a).unwrap(), &coarse())
                .unwrap();
        let b = make_barrier(sub, &p).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..8 {
            let r = 10f64.powi(-k);
            let g = b.gradient(&[r, r, -r]).unwrap();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < prev && norm < 3.0 * r);
            prev = norm;
        }
    }

    #[test]
    fn halving_tolerance_barely_moves_the_terminal_value() {
        let (p, e) = setup(4.0, 0.1);
        let w0 = default_w0(ProfileKind::Sub, e.as_ref(), &p.a).unwrap();
        let a = integrate_sub_profile_with(&e, &p.a, w0, &coarse()).unwrap();
        let opts = ProfileOptions { tol: coarse().tol.halved(), ..coarse() };
        let b = integrate_sub_profile_with(&e, &p.a, w0, &opts).unwrap();
        assert!((a.w[a.w.len() - 1] - b.w[b.w.len() - 1]).abs() < 1e-8);
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let a = sample_points(3, 100, 1e-3, 1e3, 7);
        assert_eq!(a, sample_points(3, 100, 1e-3, 1e3, 7));
        for x in &a {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((1e-3 * (1.0 - 1e-12)..=1e3 * (1.0 + 1e-12)).contains(&r));
        }
    }
}
