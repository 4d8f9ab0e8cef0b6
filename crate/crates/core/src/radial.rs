//! Radial reduction `Σ arctan λᵢ(D²u) = G(|x|)` for `u = U(|x|)`, `A ∝ I`.
//!
//! With `W = U′/r` the eigenvalues of `D²u` are `W + rW′` (once) and `W`
//! (`n−1` times), so the equation becomes `rW′ = h(r, W)` with
//! `arctan(w + h) + (n−1) arctan w = G(r)`. Profiles are integrated in
//! `t = ln r` for `φ = W − tan(G(∞)/n)`.
//!
//! Also hosts the slow-decay phase family used for the nonexistence study and
//! its growth classification.

use std::f64::consts::FRAC_PI_2;

use serde::Serialize;

use crate::barrier::{fit_power_or_log, RateFit};
use crate::envelope::h_gap_deviation;
use crate::error::{Error, Result};
use crate::numerics::fit::fit_line;
use crate::numerics::gauss_legendre5;
use crate::numerics::interp::UniformHermite;
use crate::numerics::ode::{integrate, uniform_grid, OdeTolerances};
use crate::phase::{phase_value, SymmetricMatrix};

/// Radially symmetric phase `G(r) = G(∞) + excess(r)`.
pub trait RadialForcing: Send + Sync {
    fn n(&self) -> usize;
    fn g_inf(&self) -> f64;
    /// `G(r) − G(∞)`, evaluated without cancellation.
    fn excess(&self, r: f64) -> f64;
    fn value(&self, r: f64) -> f64 {
        self.g_inf() + self.excess(r)
    }
}

/// `G ≡ G0` on `[0,1]`, a quintic blend on `[1, r_switch]`, and
/// `G(∞) + r^(−β)` beyond.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialPhase {
    pub n: usize,
    pub g0: f64,
    pub g_inf: f64,
    pub beta: f64,
    pub r_switch: f64,
    /// Coefficients of the blend in powers of `r − 1`.
    pub blend: [f64; 6],
    /// Number of times the transition was widened to restore monotonicity.
    pub widenings: usize,
}

/// Quintic Hermite interpolant on `[0, l]` matching value, slope and
/// curvature at both ends.
fn quintic_hermite(l: f64, left: [f64; 3], right: [f64; 3]) -> [f64; 6] {
    let (c0, c1, c2) = (left[0], left[1], 0.5 * left[2]);
    let d0 = right[0] - (c0 + c1 * l + c2 * l * l);
    let d1 = right[1] - (c1 + 2.0 * c2 * l);
    let d2 = right[2] - 2.0 * c2;
    let c3 = (20.0 * d0 - 8.0 * d1 * l + d2 * l * l) / (2.0 * l.powi(3));
    let c4 = (-30.0 * d0 + 14.0 * d1 * l - 2.0 * d2 * l * l) / (2.0 * l.powi(4));
    let c5 = (12.0 * d0 - 6.0 * d1 * l + d2 * l * l) / (2.0 * l.powi(5));
    [c0, c1, c2, c3, c4, c5]
}

fn poly(c: &[f64; 6], x: f64, order: usize) -> f64 {
    let mut acc = 0.0;
    for k in (order..6).rev() {
        let factor: f64 = (0..order).map(|j| (k - j) as f64).product();
        acc = acc * x + factor * c[k];
    }
    acc
}

const MAX_WIDENINGS: usize = 20;

pub fn build_radial_phase(n: usize, g0: f64, g_inf: f64, beta: f64) -> Result<RadialPhase> {
    if n < 2 {
        return Err(Error::Input(format!("dimension {n} below 2")));
    }
    let lo = (n as f64 - 2.0) * FRAC_PI_2;
    let hi = n as f64 * FRAC_PI_2;
    if !(lo < g_inf && g_inf < g0 && g0 < hi) {
        return Err(Error::Config(format!("need (n−2)π/2 < G(∞) < G0 < nπ/2, got G(∞) = {g_inf}, G0 = {g0}")));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::Input(format!("decay exponent must be positive, got {beta}")));
    }
    let mut r_switch = 2.0 * (g0 - g_inf).powf(-1.0 / beta).max(1.0);
    for widenings in 0..=MAX_WIDENINGS {
        let tail = r_switch.powf(-beta);
        let right = [g_inf + tail, -beta * tail / r_switch, beta * (beta + 1.0) * tail / (r_switch * r_switch)];
        let blend = quintic_hermite(r_switch - 1.0, [g0, 0.0, 0.0], right);
        let samples = 4000;
        let monotone = (1..samples).all(|k| poly(&blend, (r_switch - 1.0) * k as f64 / samples as f64, 1) <= 0.0);
        if monotone {
            return Ok(RadialPhase { n, g0, g_inf, beta, r_switch, blend, widenings });
        }
        r_switch *= 1.5;
    }
    Err(Error::Internal(format!("no monotone quintic transition after {MAX_WIDENINGS} widenings")))
}

impl RadialPhase {
    /// `G⁽ᵏ⁾(r)` for `k ≤ 2`.
    pub fn derivative(&self, r: f64, k: usize) -> f64 {
        if r <= 1.0 {
            return if k == 0 { self.g0 } else { 0.0 };
        }
        if r < self.r_switch {
            return poly(&self.blend, r - 1.0, k);
        }
        let b = self.beta;
        match k {
            0 => self.g_inf + r.powf(-b),
            1 => -b * r.powf(-b - 1.0),
            _ => b * (b + 1.0) * r.powf(-b - 2.0),
        }
    }
}

impl RadialForcing for RadialPhase {
    fn n(&self) -> usize {
        self.n
    }

    fn g_inf(&self) -> f64 {
        self.g_inf
    }

    fn excess(&self, r: f64) -> f64 {
        if r <= 1.0 {
            self.g0 - self.g_inf
        } else if r < self.r_switch {
            poly(&self.blend, r - 1.0, 0) - self.g_inf
        } else {
            r.powf(-self.beta)
        }
    }
}

/// `h(r, w) = tan(G(r) − (n−1) arctan w) − w`, defined for
/// `w > tan((G(r) − π/2)/(n−1))`.
pub fn solve_radial_h(phase: &dyn RadialForcing, r: f64, w: f64) -> Result<f64> {
    let m = (phase.n() - 1) as f64;
    let g = phase.value(r);
    let angle = g - m * w.atan();
    if !(angle < FRAC_PI_2) || !(angle > -FRAC_PI_2) {
        return Err(Error::Domain(format!("w = {w} is at or below the tangent barrier at r = {r}")));
    }
    Ok(angle.tan() - w)
}

/// Deviation form of `h`: with `w∞ = tan(G(∞)/n)`, `W = w∞ + φ`,
/// `h = [tan(arctan w∞ + δ) − w∞] − φ` and
/// `δ = excess + offset − (n−1) arctan(φ/(1 + w∞(w∞+φ)))`.
pub fn radial_rate(n: usize, w_inf: f64, offset: f64, excess: f64, phi: f64) -> Result<f64> {
    let m = (n - 1) as f64;
    let w = w_inf + phi;
    let delta = excess + offset - m * (phi / (1.0 + w_inf * w)).atan();
    let angle = w_inf.atan() + delta;
    if !(angle < FRAC_PI_2 && angle > -FRAC_PI_2) {
        return Err(Error::Domain(format!("radial h undefined at W = {w}")));
    }
    Ok(h_gap_deviation(1.0, w_inf, delta) - phi)
}

/// Tabulated radial profile on a grid uniform in `t = ln r`.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub n: usize,
    pub w_inf: f64,
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub w: Vec<f64>,
    /// `W − w∞`.
    pub phi: Vec<f64>,
    /// `dφ/dt = h(r, W)`.
    pub dphi: Vec<f64>,
    /// `∫₀^{rₖ} τφ(τ) dτ`, with `φ` held at `φ(r₀)` on `[0, r₀]`.
    pub cumulative: Vec<f64>,
    interp: UniformHermite,
}

/// Integrates `dφ/dt = h` from `W(r₀) = tan(G(r₀)/n)` to `r_max`.
pub fn integrate_radial(
    forcing: &dyn RadialForcing,
    r0: f64,
    r_max: f64,
    intervals: usize,
    tol: OdeTolerances,
) -> Result<RadialProfile> {
    if !(r0 > 0.0 && r_max > r0) {
        return Err(Error::Input(format!("need 0 < r0 < r_max, got {r0}, {r_max}")));
    }
    let n = forcing.n();
    let nf = n as f64;
    let w_inf = (forcing.g_inf() / nf).tan();
    let offset = forcing.g_inf() - nf * w_inf.atan();
    let phi0 = h_gap_deviation(1.0, w_inf, forcing.excess(r0) / nf);
    let t = uniform_grid(r0.ln(), r_max.ln(), intervals);
    let traj = integrate(|tt, phi| radial_rate(n, w_inf, offset, forcing.excess(tt.exp()), phi), phi0, &t, tol)?;
    let r: Vec<f64> = t.iter().map(|x| x.exp()).collect();
    let w = traj.y.iter().map(|p| w_inf + p).collect();
    let interp = UniformHermite::new(&t, traj.y.clone(), traj.dy.clone());
    let mut cumulative = vec![0.5 * r0 * r0 * phi0; t.len()];
    for k in 1..t.len() {
        let seg = gauss_legendre5(|tau| interp.value(tau) * (2.0 * tau).exp(), t[k - 1], t[k]);
        cumulative[k] = cumulative[k - 1] + seg;
    }
    Ok(RadialProfile { n, w_inf, t, r, w, phi: traj.y, dphi: traj.dy, cumulative, interp })
}

impl RadialProfile {
    pub fn r_min(&self) -> f64 {
        self.r[0]
    }

    pub fn r_max(&self) -> f64 {
        self.r[self.r.len() - 1]
    }

    pub fn phi_at(&self, r: f64) -> f64 {
        self.interp.value(r.ln())
    }

    pub fn w_at(&self, r: f64) -> f64 {
        self.w_inf + self.phi_at(r)
    }

    /// `rW′(r)`; zero below `r₀` where the profile is held constant.
    pub fn h_at(&self, r: f64) -> f64 {
        if r <= self.r_min() || r >= self.r_max() {
            return 0.0;
        }
        self.interp.derivative(r.ln())
    }

    /// `d(r) = ∫₀^r τφ(τ) dτ = U(r) − U(0) − ½w∞r²`.
    pub fn deviation(&self, r: f64) -> f64 {
        let r0 = self.r_min();
        if r <= r0 {
            return 0.5 * r * r * self.phi[0];
        }
        let t = r.ln().min(self.t[self.t.len() - 1]);
        let dt = self.t[1] - self.t[0];
        let k = (((t - self.t[0]) / dt).floor() as usize).min(self.t.len() - 2);
        self.cumulative[k] + gauss_legendre5(|tau| self.interp.value(tau) * (2.0 * tau).exp(), self.t[k], t)
    }

    /// Local decay exponent `−d ln|φ|/d ln r` at the end of the table.
    pub fn terminal_exponent(&self) -> f64 {
        let k = self.phi.len() - 1;
        -self.dphi[k] / self.phi[k]
    }

    /// `∫_r^∞ τφ(τ) dτ`, extrapolating beyond the table with the terminal
    /// local power law (requires an exponent above 2).
    pub fn deviation_tail(&self, r: f64) -> Result<f64> {
        let k = self.phi.len() - 1;
        let p = self.terminal_exponent();
        if !(p > 2.0) {
            return Err(Error::Precondition(format!("radial deviation is not integrable: local exponent {p}")));
        }
        let rm = self.r_max();
        let beyond = self.phi[k] * rm * rm / (p - 2.0);
        Ok(self.cumulative[k] - self.deviation(r) + beyond)
    }

    /// `U(r) − U(0)`.
    pub fn u_rel(&self, r: f64) -> f64 {
        0.5 * self.w_inf * r * r + self.deviation(r)
    }

    /// `D²u` at `x` for `u = U(|x|)`: `W·I + h·x̂x̂ᵀ`.
    pub fn hessian(&self, x: &[f64]) -> SymmetricMatrix {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (w, h) = (self.w_at(r), self.h_at(r));
        SymmetricMatrix::from_fn(x.len(), |i, j| {
            let diag = if i == j { w } else { 0.0 };
            if r > 0.0 {
                diag + h * x[i] * x[j] / (r * r)
            } else {
                diag
            }
        })
    }
}

pub const RADIAL_R_MAX: f64 = 1e8;
pub const RADIAL_INTERVALS: usize = 4000;
pub const GROWTH_WINDOW: (f64, f64) = (1e2, 1e7);

/// Radial entire solution for a [`RadialPhase`]: `W ≡ tan(G0/n)` on `[0,1]`.
#[derive(Debug, Clone)]
pub struct RadialSolution {
    pub phase: RadialPhase,
    pub profile: RadialProfile,
    /// Decay of `W − w∞` over the growth window.
    pub decay: Option<RateFit>,
}

impl RadialSolution {
    /// `u₀(r) = ∫₀^r τW(τ) dτ`.
    pub fn u0(&self, r: f64) -> f64 {
        self.profile.u_rel(r)
    }

    /// `d(r) = u₀(r) − ½ tan(G(∞)/n) r²`.
    pub fn d(&self, r: f64) -> f64 {
        self.profile.deviation(r)
    }
}

pub fn integrate_radial_profile(phase: &RadialPhase) -> Result<RadialSolution> {
    integrate_radial_profile_with(phase, OdeTolerances::default())
}

pub fn integrate_radial_profile_with(phase: &RadialPhase, tol: OdeTolerances) -> Result<RadialSolution> {
    let profile = integrate_radial(phase, 1.0, RADIAL_R_MAX, RADIAL_INTERVALS, tol)?;
    let nf = phase.n as f64;
    for k in 0..profile.r.len() {
        if k > 0 && profile.phi[k] > profile.phi[k - 1] {
            return Err(Error::Internal(format!("radial profile increases at r = {}", profile.r[k])));
        }
        // tan(G(r)/n) − w∞ ≤ W − w∞ ≤ tan(G0/n) − w∞.
        let lower = h_gap_deviation(1.0, profile.w_inf, phase.excess(profile.r[k]) / nf);
        let slack = 1e-9 * lower.abs() + 1e-300;
        if profile.phi[k] < lower - slack || profile.phi[k] > profile.phi[0] {
            return Err(Error::Internal(format!("radial profile leaves [tan(G/n), W(0)] at r = {}", profile.r[k])));
        }
    }
    let decay = fit_phi_decay(&profile, phase.beta).ok();
    Ok(RadialSolution { phase: phase.clone(), profile, decay })
}

fn fit_phi_decay(profile: &RadialProfile, beta: f64) -> Result<RateFit> {
    let (lo, hi) = GROWTH_WINDOW;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (k, &r) in profile.r.iter().enumerate() {
        if r >= lo && r <= hi && profile.phi[k] > 0.0 {
            x.push(profile.t[k]);
            y.push(profile.phi[k].ln());
        }
    }
    fit_power_or_log(&x, &y, GROWTH_WINDOW, (beta - profile.n as f64).abs() < 0.05)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthClass {
    /// `d(r)` converges: the quadratic asymptotics persist.
    Convergent,
    /// `d(r) ~ r^(2−β)`.
    Power,
    /// `d(r) ~ ln r`.
    Logarithmic,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub class: GrowthClass,
    pub window: (f64, f64),
    /// Slope of `ln d` against `ln r`.
    pub power_exponent: f64,
    pub power_r2: f64,
    /// Slope of `d` against `ln r`.
    pub log_coefficient: f64,
    pub log_r2: f64,
    /// Bounds `C₃ ≤ d/k ≤ C₄` over the window for the selected gauge `k`.
    pub c3: f64,
    pub c4: f64,
    /// `d(10⁷)/d(10⁴)`.
    pub ratio_1e7_1e4: f64,
    /// Ratios of successive decade increments of `d`.
    pub increment_ratios: Vec<f64>,
    pub d_end: f64,
}

fn relative_rms(pred: impl Iterator<Item = f64>, actual: &[f64]) -> f64 {
    let (mut acc, mut k) = (0.0, 0usize);
    for (p, a) in pred.zip(actual) {
        acc += ((p - a) / a).powi(2);
        k += 1;
    }
    (acc / k as f64).sqrt()
}

/// Classifies `d(r) = u₀(r) − ½tan(G(∞)/n)r²` on `r ∈ [10², 10⁷]`.
pub fn classify_growth(sol: &RadialSolution) -> Result<GrowthReport> {
    let (lo, hi) = GROWTH_WINDOW;
    let decades: Vec<f64> = (2..=7).map(|k| 10f64.powi(k)).collect();
    let inc: Vec<f64> = decades.windows(2).map(|w| sol.d(w[1]) - sol.d(w[0])).collect();
    let increment_ratios: Vec<f64> = inc.windows(2).map(|w| w[1] / w[0]).collect();

    let samples = 200;
    let rs: Vec<f64> = (0..=samples).map(|k| lo * (hi / lo).powf(k as f64 / samples as f64)).collect();
    let ds: Vec<f64> = rs.iter().map(|&r| sol.d(r)).collect();
    let lnr: Vec<f64> = rs.iter().map(|r| r.ln()).collect();
    if ds.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::Fit("d(r) must be positive on the growth window".into()));
    }
    let lnd: Vec<f64> = ds.iter().map(|d| d.ln()).collect();
    let power = fit_line(&lnr, &lnd)?;
    let log = fit_line(&lnr, &ds)?;

    let convergent = increment_ratios.iter().all(|&q| q.abs() < 0.5);
    let power_err = relative_rms(lnr.iter().map(|&x| power.predict(x).exp()), &ds);
    let log_err = relative_rms(lnr.iter().map(|&x| log.predict(x)), &ds);
    let class = if convergent {
        GrowthClass::Convergent
    } else if power.r2 < 0.999 && log.r2 < 0.999 {
        GrowthClass::Inconclusive
    } else if log_err < power_err {
        GrowthClass::Logarithmic
    } else {
        GrowthClass::Power
    };
    let gauge = |r: f64| match class {
        GrowthClass::Logarithmic => r.ln(),
        GrowthClass::Power => r.powf(2.0 - sol.phase.beta),
        _ => 1.0,
    };
    let quotients: Vec<f64> = rs.iter().zip(&ds).map(|(&r, d)| d / gauge(r)).collect();
    Ok(GrowthReport {
        class,
        window: (lo, hi),
        power_exponent: power.slope,
        power_r2: power.r2,
        log_coefficient: log.slope,
        log_r2: log.r2,
        c3: quotients.iter().copied().fold(f64::INFINITY, f64::min),
        c4: quotients.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ratio_1e7_1e4: sol.d(1e7) / sol.d(1e4),
        increment_ratios,
        d_end: sol.d(hi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ShootingStop {
    BlowUp,
    /// `W` reached the tangent barrier where `h` ceases to exist.
    BarrierCrossing,
    /// Reached the inner radius without incident.
    Survived,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShootingOutcome {
    pub epsilon: f64,
    pub r_stop: f64,
    pub stop: ShootingStop,
}

const SHOOT_R_MIN: f64 = 1e-5;

/// Integrates inward from `W(1) = tan(G0/n) + ε` on `[r_min, 1]`, where `G ≡ G0`.
/// Any `ε ≠ 0` should fail before the origin.
pub fn backward_shooting(phase: &RadialPhase, epsilon: f64) -> ShootingOutcome {
    let n = phase.n;
    let w0 = (phase.g0 / n as f64).tan();
    let cap = 1e3 * (1.0 + w0);
    let mut stop = ShootingStop::Survived;
    let grid = uniform_grid(0.0, SHOOT_R_MIN.ln(), 2000);
    let res = integrate(
        |_, dev| {
            let w = w0 + dev;
            if dev.abs() > cap {
                return Err(Error::Domain("blow-up".into()));
            }
            solve_radial_h(phase, 0.5, w)
        },
        epsilon,
        &grid,
        OdeTolerances { rtol: 1e-10, atol: 1e-14 },
    );
    let r_stop = match res {
        Ok(_) => SHOOT_R_MIN,
        Err(Error::Integration { t, state, .. }) => {
            stop = if state.abs() > 0.5 * cap { ShootingStop::BlowUp } else { ShootingStop::BarrierCrossing };
            t.exp()
        }
        Err(_) => {
            stop = ShootingStop::BarrierCrossing;
            1.0
        }
    };
    ShootingOutcome { epsilon, r_stop, stop }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// `d` diverges: no entire solution is asymptotic to the quadratic.
    NonexistenceCertified,
    /// `β > 2` lies outside the nonexistence theorem and `d` converges.
    OutsideScopeConvergent,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Premise {
    pub statement: String,
    pub holds: bool,
    pub quality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonexistenceReport {
    pub phase: RadialPhase,
    pub growth: GrowthReport,
    pub decay: Option<RateFit>,
    pub shooting: Vec<ShootingOutcome>,
    pub phase_consistency: f64,
    pub u_second_jump: f64,
    pub premises: Vec<Premise>,
    /// Cited steps that are not computed.
    pub assumptions: Vec<String>,
    pub verdict: Verdict,
}

/// `max |F(D²u₀(x)) − G(|x|)|` over `x = r·e` for the given radii.
pub fn phase_consistency(sol: &RadialSolution, radii: &[f64]) -> Result<f64> {
    let n = sol.phase.n;
    let dir: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut worst = 0.0f64;
    for &r in radii {
        let x: Vec<f64> = dir.iter().map(|v| v * r / norm).collect();
        let f = phase_value(&sol.profile.hessian(&x))?;
        worst = worst.max((f - sol.phase.derivative(r, 0)).abs());
    }
    Ok(worst)
}

pub fn nonexistence_report(phase: &RadialPhase) -> Result<NonexistenceReport> {
    let sol = integrate_radial_profile(phase)?;
    let growth = classify_growth(&sol)?;
    let shooting: Vec<ShootingOutcome> =
        [1e-3, -1e-3, 1e-2, -1e-2].iter().map(|&e| backward_shooting(phase, e)).collect();
    let radii: Vec<f64> = (0..=14).map(|k| 10f64.powf(-1.0 + 0.5 * k as f64)).collect();
    let consistency = phase_consistency(&sol, &radii)?;
    // Left of r = 1, U″ = W0; right of it U″ = W + h with h(1, W0) = 0.
    let w0 = sol.profile.w[0];
    let jump = (sol.profile.w[0] + sol.profile.dphi[0] - w0).abs();

    let forced = shooting.iter().all(|s| s.stop != ShootingStop::Survived);
    let divergent = matches!(growth.class, GrowthClass::Power | GrowthClass::Logarithmic);
    let quality = growth.power_r2.max(growth.log_r2);
    let premises = vec![
        Premise {
            statement: "W(1) = tan(G0/n) is forced: perturbed inward shots fail before the origin".into(),
            holds: forced,
            quality: None,
        },
        Premise {
            statement: "u0 is quadratic on the unit ball and C² across r = 1".into(),
            holds: jump < 1e-8,
            quality: Some(jump),
        },
        Premise {
            statement: "the radial reduction reproduces the phase G(|x|)".into(),
            holds: consistency <= 1e-8,
            quality: Some(consistency),
        },
        Premise {
            statement: "d(r) = u0 − ½tan(G(∞)/n)r² diverges".into(), holds: divergent, quality: Some(quality)
        },
    ];
    let assumptions = vec![
        "every entire solution with the given phase equals u0 up to an additive constant (maximum principle and rotation invariance)".into(),
        "a solution with u − ½xᵀAx = o(1) would be radial after averaging over rotations".into(),
    ];
    let computed_ok = premises[..3].iter().all(|p| p.holds);
    let verdict = if !computed_ok || growth.class == GrowthClass::Inconclusive {
        Verdict::Inconclusive
    } else if phase.beta <= 2.0 && divergent {
        Verdict::NonexistenceCertified
    } else if phase.beta > 2.0 && growth.class == GrowthClass::Convergent {
        Verdict::OutsideScopeConvergent
    } else {
        Verdict::Inconclusive
    };
    Ok(NonexistenceReport {
        phase: phase.clone(),
        growth,
        decay: sol.decay,
        shooting,
        phase_consistency: consistency,
        u_second_jump: jump,
        premises,
        assumptions,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::numerics::root::{solve_increasing, RootOptions};

    fn standard(beta: f64) -> RadialPhase {
        build_radial_phase(3, 2.0, 1.7, beta).unwrap()
    }

    #[test]
    fn switch_radius_arithmetic() {
        let p = standard(2.0);
        assert!((p.r_switch - 2.0 / 0.3f64.sqrt()).abs() < 1e-12);
        assert!((p.r_switch - 3.651).abs() < 1e-3);
        assert_eq!(p.widenings, 0);
    }

    #[test]
    fn band_is_enforced() {
        assert!(matches!(build_radial_phase(3, 1.7, 2.0, 2.0), Err(Error::Config(_))));
        assert!(matches!(build_radial_phase(3, 2.0, 1.5, 2.0), Err(Error::Config(_))));
    }

    #[test]
    fn phase_is_c2_and_monotone() {
        for beta in [0.5, 1.0, 2.0, 4.0] {
            let p = standard(beta);
            for &seam in &[1.0, p.r_switch] {
                let e = 1e-5;
                for k in 0..2 {
                    let left = p.derivative(seam - e, k);
                    let right = p.derivative(seam + e, k);
                    assert!((left - right).abs() < 1e-3, "β = {beta}, seam {seam}, order {k}");
                }
                let l2 =
                    (p.derivative(seam - 2e-3, 0) - 2.0 * p.derivative(seam - 1e-3, 0) + p.derivative(seam, 0)) / 1e-6;
                let r2 =
                    (p.derivative(seam, 0) - 2.0 * p.derivative(seam + 1e-3, 0) + p.derivative(seam + 2e-3, 0)) / 1e-6;
                assert!((l2 - r2).abs() < 0.05, "β = {beta}: G″ jumps {l2} vs {r2} at {seam}");
            }
            let mut prev = p.value(1.0);
            for k in 1..=5000 {
                let r = 1.0 + (3.0 * p.r_switch) * k as f64 / 5000.0;
                let g = p.value(r);
                assert!(g <= prev + 1e-15);
                prev = g;
            }
        }
    }

    #[test]
    fn radial_h_identities() {
        let p = standard(2.0);
        for &r in &[0.5, 2.0, 10.0] {
            let w = (p.value(r) / 3.0).tan();
            assert!(solve_radial_h(&p, r, w).unwrap().abs() < 1e-14);
            let e = 1e-6;
            let d = (solve_radial_h(&p, r, w + e).unwrap() - solve_radial_h(&p, r, w - e).unwrap()) / (2.0 * e);
            assert!((d + 3.0).abs() < 1e-6);
        }
        assert_eq!(solve_radial_h(&p, 0.3, 0.7).unwrap(), solve_radial_h(&p, 0.0, 0.7).unwrap());
        assert!(matches!(solve_radial_h(&p, 2.0, -10.0), Err(Error::Domain(_))));
    }

    #[test]
    fn radial_h_matches_root_solve() {
        let p = build_radial_phase(3, 3.0 * PI / 4.0, 2.2, 2.0).unwrap();
        let h = solve_radial_h(&p, 0.5, 1.2).unwrap();
        assert!((h - (0.604_077_f64.tan() - 1.2)).abs() < 1e-5);
        assert!((h + 0.509_859).abs() < 1e-5);
        let f = |x: f64| ((1.2 + x).atan() + 2.0 * 1.2f64.atan() - 3.0 * PI / 4.0, 1.0 / (1.0 + (1.2 + x).powi(2)));
        let root = solve_increasing(f, -1.0, 1.0, RootOptions::default()).unwrap();
        assert!((root.value - h).abs() < 1e-12);
    }

    #[test]
    fn deviation_rate_matches_closed_form() {
        let p = standard(2.0);
        let w_inf = (1.7f64 / 3.0).tan();
        let off = 1.7 - 3.0 * w_inf.atan();
        for &(r, phi) in &[(2.0, 0.1), (50.0, 1e-3), (1e3, 1e-6)] {
            let a = radial_rate(3, w_inf, off, p.excess(r), phi).unwrap();
            let b = solve_radial_h(&p, r, w_inf + phi).unwrap();
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn constant_phase_gives_quadratic() {
        struct Flat;
        impl RadialForcing for Flat {
            fn n(&self) -> usize {
                3
            }
            fn g_inf(&self) -> f64 {
                2.0
            }
            fn excess(&self, _: f64) -> f64 {
                0.0
            }
        }
        let prof = integrate_radial(&Flat, 1e-3, 1e3, 200, OdeTolerances::default()).unwrap();
        assert!(prof.phi.iter().all(|&p| p == 0.0));
        assert_eq!(prof.deviation(37.0), 0.0);
    }

    #[test]
    fn profile_decay_rates() {
        for (beta, want) in [(2.0, 2.0), (1.0, 1.0), (4.0, 3.0)] {
            let sol = integrate_radial_profile(&standard(beta)).unwrap();
            let fit = sol.decay.unwrap();
            assert!((fit.exponent - want).abs() < 0.1, "β = {beta}: {fit:?}");
            assert!(sol.profile.w.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn decay_prefactors_are_stable_under_window_shifts() {
        let sol = integrate_radial_profile(&standard(2.0)).unwrap();
        let q = |r: f64| sol.profile.phi_at(r) * r * r;
        let a: Vec<f64> = [1e2, 1e3, 1e4, 1e5, 1e6].iter().map(|&r| q(r)).collect();
        let b: Vec<f64> = [1e3, 1e4, 1e5, 1e6, 1e7].iter().map(|&r| q(r)).collect();
        let (c1a, c2a) = (a.iter().copied().fold(f64::INFINITY, f64::min), a.iter().copied().fold(0.0, f64::max));
        let (c1b, c2b) = (b.iter().copied().fold(f64::INFINITY, f64::min), b.iter().copied().fold(0.0, f64::max));
        assert!(c1a > 0.0 && c1b > 0.0 && c2a < 1e3);
        assert!((c1a / c1b - 1.0).abs() < 0.05 && (c2a / c2b - 1.0).abs() < 0.05);
    }

    #[test]
    fn growth_classification() {
        let g2 = classify_growth(&integrate_radial_profile(&standard(2.0)).unwrap()).unwrap();
        assert_eq!(g2.class, GrowthClass::Logarithmic);
        assert!((g2.ratio_1e7_1e4 / 1.75 - 1.0).abs() < 0.05, "{g2:?}");
        let g1 = classify_growth(&integrate_radial_profile(&standard(1.0)).unwrap()).unwrap();
        assert_eq!(g1.class, GrowthClass::Power);
        assert!((g1.power_exponent - 1.0).abs() < 0.1, "{g1:?}");
        let g4 = classify_growth(&integrate_radial_profile(&standard(4.0)).unwrap()).unwrap();
        assert_eq!(g4.class, GrowthClass::Convergent);
        assert!(g4.c3 <= g4.c4);
    }

    #[test]
    fn inward_shots_fail() {
        let p = standard(2.0);
        for eps in [1e-3, -1e-3, 1e-2, -1e-2] {
            let out = backward_shooting(&p, eps);
            assert_ne!(out.stop, ShootingStop::Survived, "{out:?}");
            assert!(out.r_stop > 1e-5 && out.r_stop < 1.0);
        }
        assert_eq!(backward_shooting(&p, 0.0).stop, ShootingStop::Survived);
    }

    #[test]
    fn reports_reach_the_expected_verdicts() {
        assert_eq!(nonexistence_report(&standard(2.0)).unwrap().verdict, Verdict::NonexistenceCertified);
        assert_eq!(nonexistence_report(&standard(1.0)).unwrap().verdict, Verdict::NonexistenceCertified);
        let r4 = nonexistence_report(&standard(4.0)).unwrap();
        assert_eq!(r4.verdict, Verdict::OutsideScopeConvergent);
        assert!(r4.phase_consistency <= 1e-8 && r4.u_second_jump < 1e-8);
    }
}
