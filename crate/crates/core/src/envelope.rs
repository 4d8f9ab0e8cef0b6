//! Phase envelopes `g̲(s) ≤ g ≤ ḡ(s)` along level sets of `s(x) = ½xᵀAx`, and
//! the implicit scalar functions `w̲, w̄, h, H` plus the dispersion factor `J`
//! that drive the barrier ODEs.
//!
//! Every implicit function is available in two forms. The public solvers take
//! `w` and evaluate the defining equation literally. The `*_deviation`
//! variants take `φ = w − 1` and a precomputed phase gap, and stay relatively
//! accurate when `φ` is far below machine epsilon, which the barrier ODEs need
//! to resolve decay out to `s = 10¹⁰`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::root::{solve_increasing, ImplicitSolveReport, RootOptions};
use crate::phase::{m_of_a, phase_sum, supercritical_margin, PhaseParams, Spectrum};

/// Monotone bounds of the phase as functions of `s ≥ 0`.
///
/// Implementors provide the distances to the limit so that tails below
/// machine epsilon relative to `g_inf` are not lost.
pub trait Envelope: Send + Sync + fmt::Debug {
    fn g_inf(&self) -> f64;
    fn beta(&self) -> f64;
    /// Amplitude `K` of the `s^(−β/2)` tail.
    fn constant(&self) -> f64;
    /// `ḡ(s) − g_inf ≥ 0`, non-increasing.
    fn upper_excess(&self, s: f64) -> f64;
    /// `g_inf − g̲(s) ≥ 0`, non-increasing.
    fn lower_deficit(&self, s: f64) -> f64;

    fn upper(&self, s: f64) -> f64 {
        self.g_inf() + self.upper_excess(s)
    }

    fn lower(&self, s: f64) -> f64 {
        self.g_inf() - self.lower_deficit(s)
    }
}

/// `ḡ = g_inf + K(1+s)^(−β/2)`, `g̲ = g_inf − K(1+s)^(−β/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerEnvelope {
    pub g_inf: f64,
    pub beta: f64,
    pub k: f64,
}

impl PowerEnvelope {
    fn tail(&self, s: f64) -> f64 {
        if self.k == 0.0 {
            0.0
        } else {
            self.k * (1.0 + s).powf(-0.5 * self.beta)
        }
    }
}

impl Envelope for PowerEnvelope {
    fn g_inf(&self) -> f64 {
        self.g_inf
    }
    fn beta(&self) -> f64 {
        self.beta
    }
    fn constant(&self) -> f64 {
        self.k
    }
    fn upper_excess(&self, s: f64) -> f64 {
        self.tail(s)
    }
    fn lower_deficit(&self, s: f64) -> f64 {
        self.tail(s)
    }
}

/// Envelope from user callables; admit it only through [`audit_envelope`].
pub struct FnEnvelope<U, L> {
    pub g_inf: f64,
    pub beta: f64,
    pub k: f64,
    pub upper_excess: U,
    pub lower_deficit: L,
}

impl<U, L> fmt::Debug for FnEnvelope<U, L> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnEnvelope").field("g_inf", &self.g_inf).field("beta", &self.beta).field("k", &self.k).finish()
    }
}

impl<U, L> Envelope for FnEnvelope<U, L>
where
    U: Fn(f64) -> f64 + Send + Sync,
    L: Fn(f64) -> f64 + Send + Sync,
{
    fn g_inf(&self) -> f64 {
        self.g_inf
    }
    fn beta(&self) -> f64 {
        self.beta
    }
    fn constant(&self) -> f64 {
        self.k
    }
    fn upper_excess(&self, s: f64) -> f64 {
        (self.upper_excess)(s)
    }
    fn lower_deficit(&self, s: f64) -> f64 {
        (self.lower_deficit)(s)
    }
}

/// Geometric audit grid: `0` and `10^k` for `k = −3, −2.9, …, 12`.
fn audit_grid() -> Vec<f64> {
    std::iter::once(0.0).chain((0..=150).map(|i| 10f64.powf(-3.0 + 0.1 * i as f64))).collect()
}

/// Checks band membership, ordering, monotonicity and the tail bound on a
/// geometric grid.
pub fn audit_envelope(env: &dyn Envelope, n: usize) -> Result<()> {
    let lo_band = (n as f64 - 2.0) * FRAC_PI_2;
    let hi_band = n as f64 * FRAC_PI_2;
    let (k, half_beta) = (env.constant(), 0.5 * env.beta());
    let mut prev: Option<(f64, f64)> = None;
    for s in audit_grid() {
        let (up, low) = (env.upper_excess(s), env.lower_deficit(s));
        if !(up.is_finite() && low.is_finite()) || up < 0.0 || low < 0.0 {
            return Err(Error::Config(format!("envelope distances must be finite and nonnegative (s = {s})")));
        }
        let (u, l) = (env.upper(s), env.lower(s));
        if !(l > lo_band && u < hi_band) {
            return Err(Error::Config(format!("envelope leaves the supercritical band at s = {s}")));
        }
        if let Some((pu, pl)) = prev {
            if up > pu || low > pl {
                return Err(Error::Config(format!("envelope is not monotone at s = {s}")));
            }
        }
        if s >= 1.0 {
            let bound = k * s.powf(-half_beta) * (1.0 + 1e-12) + 1e-300;
            if up > bound || low > bound {
                return Err(Error::Config(format!("envelope tail exceeds K·s^(−β/2) at s = {s}")));
            }
        }
        prev = Some((up, low));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeSign {
    Above,
    Below,
    TwoSided,
}

/// Canonical test phase `g = g_inf ± c·(1 + 2s/τ)^(−β/2)`, `τ = tr(A)/n`.
///
/// `TwoSided` multiplies the tail by `cos s`, so the phase crosses `g_inf`
/// infinitely often.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPhase {
    pub g_inf: f64,
    pub c: f64,
    pub beta: f64,
    pub tau: f64,
    pub sign: EnvelopeSign,
}

impl TestPhase {
    pub fn new(params: &PhaseParams, c: f64, sign: EnvelopeSign) -> Self {
        Self { g_inf: params.g_inf, c, beta: params.beta, tau: params.trace_normalizer(), sign }
    }

    /// `g − g_inf` at level `s`.
    pub fn excess_at_s(&self, s: f64) -> f64 {
        if self.c == 0.0 {
            return 0.0;
        }
        let tail = self.c * (1.0 + 2.0 * s / self.tau).powf(-0.5 * self.beta);
        match self.sign {
            EnvelopeSign::Above => tail,
            EnvelopeSign::Below => -tail,
            EnvelopeSign::TwoSided => tail * s.cos(),
        }
    }

    pub fn value_at_s(&self, s: f64) -> f64 {
        self.g_inf + self.excess_at_s(s)
    }
}

/// Envelopes for the canonical family [`TestPhase`] with amplitude `c`.
///
/// `K = c·max(1, τ/2)^(β/2)` is the least constant with
/// `c(1+2s/τ)^(−β/2) ≤ K(1+s)^(−β/2)` for all `s ≥ 0`.
pub fn build_envelopes(params: &PhaseParams, c: f64, _sign: EnvelopeSign) -> Result<PowerEnvelope> {
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::Input(format!("amplitude must be nonnegative, got {c}")));
    }
    let tau = params.trace_normalizer();
    let k = c * (0.5 * tau).max(1.0).powf(0.5 * params.beta);
    let env = PowerEnvelope { g_inf: params.g_inf, beta: params.beta, k };
    // The tail is largest at s = 0, so the band is only at risk there.
    let n = params.n as f64;
    if env.upper(0.0) >= n * FRAC_PI_2 || supercritical_margin(params.n, env.lower(0.0)) <= 0.0 {
        return Err(Error::Config(format!(
            "envelope [{}, {}] leaves the supercritical band ((n−2)π/2, nπ/2) at s = 0",
            env.lower(0.0),
            env.upper(0.0)
        )));
    }
    Ok(env)
}

fn check_s(s: f64) -> Result<()> {
    if s.is_finite() && s >= 0.0 {
        Ok(())
    } else {
        Err(Error::Input(format!("level s must be finite and nonnegative, got {s}")))
    }
}

fn strict_opts() -> RootOptions {
    RootOptions { residual_tol: 1e-13, ..RootOptions::default() }
}

/// Positive root of `Σ arctan(aᵢw) = target`.
fn solve_scalar_w(a: &Spectrum, target: f64) -> Result<ImplicitSolveReport> {
    let n = a.n() as f64;
    if !(target > 0.0 && target < n * FRAC_PI_2) {
        return Err(Error::Internal(format!("phase target {target} has no positive scalar solution")));
    }
    let t = (target / n).tan();
    let (lo, hi) = (t / a.max(), t / a.min());
    let f = |w: f64| {
        let v = a.values.iter().map(|ai| (ai * w).atan()).sum::<f64>() - target;
        let d = a.values.iter().map(|ai| ai / (1.0 + (ai * w).powi(2))).sum::<f64>();
        (v, d)
    };
    solve_increasing(f, lo, hi, strict_opts())
}

/// `w̲(s)`: `Σ arctan(aᵢ w̲) = ḡ(s)`.
pub fn solve_w_under_report(env: &dyn Envelope, a: &Spectrum, s: f64) -> Result<ImplicitSolveReport> {
    check_s(s)?;
    solve_scalar_w(a, env.upper(s))
}

pub fn solve_w_under(env: &dyn Envelope, a: &Spectrum, s: f64) -> Result<f64> {
    Ok(solve_w_under_report(env, a, s)?.value)
}

/// `w̄(s)`: `Σ arctan(aᵢ w̄) = g̲(s)`.
pub fn solve_w_over_report(env: &dyn Envelope, a: &Spectrum, s: f64) -> Result<ImplicitSolveReport> {
    check_s(s)?;
    solve_scalar_w(a, env.lower(s))
}

pub fn solve_w_over(env: &dyn Envelope, a: &Spectrum, s: f64) -> Result<f64> {
    Ok(solve_w_over_report(env, a, s)?.value)
}

/// Tolerance for deciding that `w` sits on the wrong side of `w̲` or `w̄`.
const DOMAIN_SLACK: f64 = 1e-12;

/// Root `h` of `arctan h + Σᵢ₌₂ arctan(aᵢw) = target`, with no domain check
/// beyond solvability. The bracket is `[tan(target − (n−1)π/2), a₁w]`, valid
/// whenever `f(aw) ≥ target`.
fn solve_h_raw(a: &Spectrum, w: f64, target: f64) -> Result<ImplicitSolveReport> {
    let n = a.n();
    let rest: f64 = a.values[1..].iter().map(|ai| (ai * w).atan()).sum();
    let lo = (target - (n as f64 - 1.0) * FRAC_PI_2).tan();
    let hi = a.min() * w;
    let f = |h: f64| (h.atan() + rest - target, 1.0 / (1.0 + h * h));
    if target - rest >= FRAC_PI_2 {
        return Err(Error::Domain(format!("h equation has no solution at w = {w}")));
    }
    // Below w̲ (or by rounding at w̲) the root lies above a₁w.
    let mut hi = hi;
    while f(hi).0 < 0.0 {
        hi += hi.abs().max(1e-12);
    }
    solve_increasing(f, lo, hi, strict_opts())
}

/// `h(s, w)` of the subsolution construction:
/// `arctan h + Σᵢ₌₂ arctan(aᵢw) = ḡ(s)`, defined for `w ≥ w̲(s)`.
pub fn solve_h_report(env: &dyn Envelope, a: &Spectrum, s: f64, w: f64) -> Result<ImplicitSolveReport> {
    check_s(s)?;
    let target = env.upper(s);
    if !(w > 0.0) || phase_sum_scaled(a, w) < target - DOMAIN_SLACK {
        return Err(Error::Domain(format!("w = {w} lies below w̲({s})")));
    }
    solve_h_raw(a, w, target)
}

pub fn solve_h(env: &dyn Envelope, a: &Spectrum, s: f64, w: f64) -> Result<f64> {
    Ok(solve_h_report(env, a, s, w)?.value)
}

/// `h(∞, w)`, obtained by substituting `g_inf` for the envelope.
pub fn h_limit(env: &dyn Envelope, a: &Spectrum, w: f64) -> Result<f64> {
    if phase_sum_scaled(a, w) < env.g_inf() - DOMAIN_SLACK {
        return Err(Error::Domain(format!("w = {w} lies below w̲(∞)")));
    }
    Ok(solve_h_raw(a, w, env.g_inf())?.value)
}

/// `h₀ = max(0, h)`.
pub fn h_zero_clamp(h: f64) -> f64 {
    h.max(0.0)
}

/// `∂h/∂w(∞, 1) = −(1+a₁²) Σᵢ₌₂ aᵢ/(1+aᵢ²)`; checks `(value − a₁)/(2aₙ) = −M(A)`.
pub fn dh_dw_limit(a: &Spectrum) -> Result<f64> {
    let a1 = a.min();
    let value = -(1.0 + a1 * a1) * a.values[1..].iter().map(|t| t / (1.0 + t * t)).sum::<f64>();
    let m = m_of_a(a)?;
    let lhs = (value - a1) / (2.0 * a.max());
    if (lhs + m).abs() > 1e-10 * m.max(1.0) {
        return Err(Error::Internal(format!("(∂h/∂w − a₁)/(2aₙ) = {lhs} but M(A) = {m}")));
    }
    Ok(value)
}

/// `∂H/∂w(∞, 1) = −M(A)`.
pub fn dhh_dw_limit(a: &Spectrum) -> Result<f64> {
    Ok(-m_of_a(a)?)
}

fn phase_sum_scaled(a: &Spectrum, w: f64) -> f64 {
    a.values.iter().map(|ai| (ai * w).atan()).sum()
}

/// Parts of `J(w, H) + 1 = (1 + αH)²(1 + γH)`.
#[inline]
fn j_coefficients(a1: f64, an: f64, w: f64) -> (f64, f64) {
    let p = a1 * w;
    let q = 1.0 + p * p;
    (4.0 * a1 / q.sqrt(), 4.0 * an / (p * q))
}

/// `J(w,H) = (√(1+(a₁w)²) + 4a₁H)²(a₁w + (a₁w)³ + 4aₙH) / ((1+(a₁w)²)² a₁w) − 1`.
pub fn j_factor(a: &Spectrum, w: f64, h: f64) -> Result<f64> {
    if !(w > 0.0) {
        return Err(Error::Domain(format!("J needs w > 0, got {w}")));
    }
    Ok(j_and_slope(a.min(), a.max(), w, h).0)
}

/// `J` and `∂J/∂H`, expanded so that `J(w, 0) = 0` exactly.
#[inline]
fn j_and_slope(a1: f64, an: f64, w: f64, h: f64) -> (f64, f64) {
    let (alpha, gamma) = j_coefficients(a1, an, w);
    let (u, v) = (alpha * h, gamma * h);
    let j = u * (2.0 + u) + v * (1.0 + u) * (1.0 + u);
    let dj = 2.0 * alpha * (1.0 + u) * (1.0 + v) + gamma * (1.0 + u) * (1.0 + u);
    (j, dj)
}

/// Root `H ≥ 0` of `Σᵢ [arctan(xᵢ + dᵢ(H)) − arctan xᵢ] = gap` where
/// `xᵢ = aᵢw`, `d₁ = 2aₙ(1+J)H`, `dᵢ = 2aₙJH`. Each increment is evaluated as
/// `arctan(d/(1 + x(x+d)))`, so tiny gaps give relatively accurate roots.
pub fn solve_h_super_deviation(a: &Spectrum, w: f64, gap: f64) -> Result<ImplicitSolveReport> {
    if !(w > 0.0) {
        return Err(Error::Domain(format!("H needs w > 0, got {w}")));
    }
    if gap < 0.0 {
        return Err(Error::Domain(format!("w = {w} lies above w̄ (phase gap {gap:e})")));
    }
    if gap == 0.0 {
        return Ok(ImplicitSolveReport { value: 0.0, residual: 0.0, iterations: 0, bracket: (0.0, 0.0) });
    }
    let (a1, an) = (a.min(), a.max());
    let residual = |hh: f64| {
        let (j, dj) = j_and_slope(a1, an, w, hh);
        let mut val = -gap;
        let mut der = 0.0;
        for (i, &ai) in a.values.iter().enumerate() {
            let x = ai * w;
            let (d, dd) = if i == 0 {
                (2.0 * an * (1.0 + j) * hh, 2.0 * an * (1.0 + j + hh * dj))
            } else {
                (2.0 * an * j * hh, 2.0 * an * (j + hh * dj))
            };
            val += (d / (1.0 + x * (x + d))).atan();
            der += dd / (1.0 + (x + d) * (x + d));
        }
        (val, der)
    };
    let x1 = a1 * w;
    let mut hi = (2.0 * gap * (1.0 + x1 * x1) / (2.0 * an)).max(f64::MIN_POSITIVE);
    while residual(hi).0 < 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Internal(format!("H bracket exceeded 1e6 (w = {w}, gap = {gap:e})")));
        }
    }
    let opts = RootOptions { residual_tol: 1e-15 * gap, ..RootOptions::default() };
    solve_increasing(residual, 0.0, hi, opts)
}

/// `H(s, w)` of the supersolution construction, defined for `0 < w ≤ w̄(s)`:
/// `arctan(a₁w + 2aₙ(1+J)H) + Σᵢ₌₂ arctan(aᵢw + 2aₙJH) = g̲(s)`.
///
/// The reported residual is that of the equation as written.
pub fn solve_h_super_report(env: &dyn Envelope, a: &Spectrum, s: f64, w: f64) -> Result<ImplicitSolveReport> {
    check_s(s)?;
    let target = env.lower(s);
    let gap = target - phase_sum_scaled(a, w);
    if gap < -DOMAIN_SLACK {
        return Err(Error::Domain(format!("w = {w} lies above w̄({s})")));
    }
    let mut rep = solve_h_super_deviation(a, w, gap.max(0.0))?;
    rep.residual = h_super_residual(a, w, rep.value, target);
    Ok(rep)
}

pub fn solve_h_super(env: &dyn Envelope, a: &Spectrum, s: f64, w: f64) -> Result<f64> {
    Ok(solve_h_super_report(env, a, s, w)?.value)
}

/// `H(∞, w)`, obtained by substituting `g_inf` for the envelope.
pub fn h_super_limit(env: &dyn Envelope, a: &Spectrum, w: f64) -> Result<f64> {
    let gap = env.g_inf() - phase_sum_scaled(a, w);
    if gap < -DOMAIN_SLACK {
        return Err(Error::Domain(format!("w = {w} lies above w̄(∞)")));
    }
    Ok(solve_h_super_deviation(a, w, gap.max(0.0))?.value)
}

fn h_super_residual(a: &Spectrum, w: f64, hh: f64, target: f64) -> f64 {
    let (a1, an) = (a.min(), a.max());
    let j = j_and_slope(a1, an, w, hh).0;
    let mut sum = (a1 * w + 2.0 * an * (1.0 + j) * hh).atan();
    for &ai in &a.values[1..] {
        sum += (ai * w + 2.0 * an * j * hh).atan();
    }
    sum - target
}

/// `f(a(1+φ)) − f(a)` without cancellation.
pub fn phase_increment(a: &Spectrum, phi: f64) -> f64 {
    a.values.iter().map(|&ai| (ai * phi / (1.0 + ai * ai * (1.0 + phi))).atan()).sum()
}

/// `g_inf − f(a)`; zero when the limit was computed from the spectrum.
pub fn limit_offset(env: &dyn Envelope, a: &Spectrum) -> f64 {
    env.g_inf() - phase_sum(&a.values)
}

/// `h(s, w) − a₁w` for `w = 1 + φ`, given the phase gap `δ = ḡ(s) − f(aw) ≤ 0`.
///
/// Uses `tan(θ₀ + δ) − tan θ₀ = sin δ (1+p²)/(cos δ − p sin δ)` with
/// `p = a₁w = tan θ₀`.
pub fn h_gap_deviation(a1: f64, w: f64, delta: f64) -> f64 {
    let p = a1 * w;
    let (sd, cd) = delta.sin_cos();
    sd * (1.0 + p * p) / (cd - p * sd)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn unit3() -> Spectrum {
        Spectrum::new(vec![1.0, 1.0, 1.0]).unwrap()
    }

    fn constant(g: f64) -> PowerEnvelope {
        PowerEnvelope { g_inf: g, beta: 4.0, k: 0.0 }
    }

    fn canonical(beta: f64, c: f64) -> (PhaseParams, PowerEnvelope) {
        let p = PhaseParams::diagonal(&[1.0, 1.0, 1.0], beta).unwrap();
        let e = build_envelopes(&p, c, EnvelopeSign::TwoSided).unwrap();
        (p, e)
    }

    #[test]
    fn envelope_examples() {
        let (_, e0) = canonical(4.0, 0.0);
        for s in [0.0, 1.0, 1e6] {
            assert_eq!(e0.upper(s), e0.g_inf);
            assert_eq!(e0.lower(s), e0.g_inf);
        }
        let (p, e) = canonical(4.0, 0.1);
        assert!(e.upper(0.0) <= 0.75 * PI + 0.1 + 1e-15);
        let mut prev = f64::INFINITY;
        for s in [0.0, 1.0, 10.0, 1e6] {
            assert!(e.upper(s) < prev);
            prev = e.upper(s);
            let g = TestPhase::new(&p, 0.1, EnvelopeSign::Above).value_at_s(s);
            assert!(e.lower(s) <= g && g <= e.upper(s));
        }
        audit_envelope(&e, 3).unwrap();
        assert!(matches!(build_envelopes(&p, 0.8, EnvelopeSign::TwoSided), Err(Error::Config(_))));
    }

    #[test]
    fn envelope_constant_is_minimal_for_anisotropic_a() {
        let p = PhaseParams::diagonal(&[1.0, 3.0, 5.0], 3.0).unwrap();
        let e = build_envelopes(&p, 0.05, EnvelopeSign::Above).unwrap();
        let tp = TestPhase::new(&p, 0.05, EnvelopeSign::Above);
        let mut worst = 0.0f64;
        for i in 0..400 {
            let s = 10f64.powf(-3.0 + 0.03 * i as f64);
            let ratio = tp.excess_at_s(s) / e.upper_excess(s);
            assert!(ratio <= 1.0 + 1e-12);
            worst = worst.max(ratio);
        }
        assert!(worst > 0.999, "K is not tight: {worst}");
    }

    #[test]
    fn audit_rejects_bad_user_envelopes() {
        let rising = FnEnvelope {
            g_inf: 0.75 * PI,
            beta: 4.0,
            k: 0.1,
            upper_excess: |s: f64| 0.1 * s / (1.0 + s),
            lower_deficit: |_s: f64| 0.0,
        };
        assert!(audit_envelope(&rising, 3).is_err());
        let ok = FnEnvelope {
            g_inf: 0.75 * PI,
            beta: 4.0,
            k: 0.1,
            upper_excess: |s: f64| 0.1 / (1.0 + s).powi(2),
            lower_deficit: |_s: f64| 0.0,
        };
        assert!(audit_envelope(&ok, 3).is_ok());
    }

    #[test]
    fn w_under_examples() {
        let a = unit3();
        assert!((solve_w_under(&constant(0.75 * PI), &a, 5.0).unwrap() - 1.0).abs() < 1e-14);
        let (_, e) = canonical(4.0, 0.1);
        let rep = solve_w_under_report(&e, &a, 0.0).unwrap();
        assert!((rep.value - (PI / 4.0 + 1.0 / 30.0).tan()).abs() < 1e-13);
        assert!((rep.value - 1.0690).abs() < 1e-4);
        assert!(rep.residual.abs() <= 1e-12);
        assert!((solve_w_under(&e, &a, 1e10).unwrap() - 1.0).abs() < 1e-12);
        assert!(solve_w_under(&e, &a, 1.0).unwrap() > solve_w_under(&e, &a, 2.0).unwrap());
    }

    #[test]
    fn w_over_examples() {
        let a = unit3();
        assert!((solve_w_over(&constant(0.75 * PI), &a, 5.0).unwrap() - 1.0).abs() < 1e-14);
        let (_, e) = canonical(4.0, 0.1);
        let w0 = solve_w_over(&e, &a, 0.0).unwrap();
        assert!((w0 - (PI / 4.0 - 1.0 / 30.0).tan()).abs() < 1e-13);
        assert!((w0 - 0.9355).abs() < 1e-4);
        let w100 = solve_w_over(&e, &a, 100.0).unwrap();
        assert!(w0 < w100 && w100 < 1.0);
    }

    #[test]
    fn h_examples() {
        let a = unit3();
        let env = constant(0.75 * PI);
        assert!((solve_h(&env, &a, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let rep = solve_h_report(&env, &a, 0.0, 1.2).unwrap();
        let expected = (0.75 * PI - 2.0 * 1.2f64.atan()).tan();
        assert!((rep.value - expected).abs() < 1e-12);
        assert!((rep.value - 0.6901).abs() < 1e-4);
        assert!(rep.residual.abs() <= 1e-12);
        assert!(matches!(solve_h(&env, &a, 0.0, 0.9), Err(Error::Domain(_))));
    }

    #[test]
    fn h_at_w_under_is_a1_w_under() {
        let a = Spectrum::new(vec![0.8, 1.3, 2.0]).unwrap();
        let p = PhaseParams::diagonal(&a.values, 3.0).unwrap();
        let e = build_envelopes(&p, 0.1, EnvelopeSign::Above).unwrap();
        for s in [0.0, 0.5, 3.0, 100.0, 1e5] {
            let w = solve_w_under(&e, &a, s).unwrap();
            assert!((solve_h(&e, &a, s, w).unwrap() - a.min() * w).abs() < 1e-10);
        }
    }

    #[test]
    fn h_decreasing_in_s_and_w() {
        let (_, e) = canonical(3.0, 0.1);
        let a = unit3();
        for &(s, w) in &[(0.0, 1.2), (1.0, 1.1), (10.0, 1.05), (100.0, 1.3)] {
            let base = solve_h(&e, &a, s, w).unwrap();
            assert!(solve_h(&e, &a, s + 0.1, w).unwrap() < base);
            assert!(solve_h(&e, &a, s, w + 1e-3).unwrap() < base);
        }
    }

    #[test]
    fn clamp() {
        assert_eq!(h_zero_clamp(-0.5), 0.0);
        assert_eq!(h_zero_clamp(0.0), 0.0);
        assert_eq!(h_zero_clamp(0.3), 0.3);
    }

    #[test]
    fn dh_dw_examples() {
        assert!((dh_dw_limit(&unit3()).unwrap() + 2.0).abs() < 1e-14);
        for t in [0.3, 1.0, 4.0] {
            assert!((dh_dw_limit(&Spectrum::new(vec![t; 3]).unwrap()).unwrap() + 2.0 * t).abs() < 1e-12);
        }
    }

    #[test]
    fn dh_dw_matches_centered_difference() {
        for vals in [vec![1.0, 1.0, 1.0], vec![0.9, 1.1, 1.4], vec![2.0, 2.5, 3.0, 3.1]] {
            let a = Spectrum::new(vals.clone()).unwrap();
            let p = PhaseParams::diagonal(&vals, 4.0).unwrap();
            let e = build_envelopes(&p, 0.1, EnvelopeSign::Above).unwrap();
            let step = 1e-4;
            // Centered differences straddle w̲(s); the defining equation
            // extends smoothly below it.
            let h = |w: f64| solve_h_raw(&a, w, e.upper(1e8)).unwrap().value;
            let fd = (h(1.0 + step) - h(1.0 - step)) / (2.0 * step);
            assert!((fd - dh_dw_limit(&a).unwrap()).abs() < 1e-5, "{fd}");
        }
    }

    #[test]
    fn j_examples() {
        let a = unit3();
        let expected = (3.0 + 2.0 * 2f64.sqrt()) * 0.75 - 1.0;
        assert!((j_factor(&a, 1.0, 0.25).unwrap() - expected).abs() < 1e-13);
        assert!((j_factor(&a, 1.0, 0.25).unwrap() - 3.37132).abs() < 1e-5);
        let (j1, j2, j3) =
            (j_factor(&a, 1.0, 0.1).unwrap(), j_factor(&a, 1.0, 0.2).unwrap(), j_factor(&a, 1.0, 0.3).unwrap());
        assert!(j1 < j2 && j2 < j3);
        assert!(matches!(j_factor(&a, 0.0, 0.1), Err(Error::Domain(_))));
    }

    /// Literal transcription of the displayed formula, as an independent check
    /// of the expanded form.
    fn j_literal(a1: f64, an: f64, w: f64, h: f64) -> f64 {
        let p = a1 * w;
        ((1.0 + p * p).sqrt() + 4.0 * a1 * h).powi(2) * (p + p.powi(3) + 4.0 * an * h) / ((1.0 + p * p).powi(2) * p)
            - 1.0
    }

    #[test]
    fn j_expansion_matches_literal_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let a1 = rng.random_range(0.1..3.0);
            let an = a1 + rng.random_range(0.0..3.0);
            let w = rng.random_range(0.05..3.0);
            let h = rng.random_range(0.0..2.0);
            let lit = j_literal(a1, an, w, h);
            assert!((j_and_slope(a1, an, w, h).0 - lit).abs() < 1e-12 * lit.abs().max(1.0));
            let eps = 1e-6;
            let fd = (j_literal(a1, an, w, h + eps) - j_literal(a1, an, w, (h - eps).max(0.0)))
                / (h + eps - (h - eps).max(0.0));
            assert!((j_and_slope(a1, an, w, h).1 - fd).abs() < 1e-5 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn j_second_differences_bounded() {
        let a = unit3();
        let e = 1e-3;
        let mut worst = 0.0f64;
        for i in 0..20 {
            for k in 1..20 {
                let (w, h) = (0.5 + 0.05 * i as f64, 0.05 * k as f64);
                let d2 = (j_factor(&a, w, h + e).unwrap() - 2.0 * j_factor(&a, w, h).unwrap()
                    + j_factor(&a, w, h - e).unwrap())
                    / (e * e);
                worst = worst.max(d2.abs());
            }
        }
        assert!(worst.is_finite() && worst < 1e3);
    }

    #[test]
    fn h_super_examples() {
        let a = unit3();
        let env = constant(0.75 * PI);
        assert_eq!(solve_h_super(&env, &a, 0.0, 1.0).unwrap(), 0.0);
        let rep = solve_h_super_report(&env, &a, 0.0, 0.95).unwrap();
        assert!(rep.value > 0.0 && rep.residual.abs() <= 1e-12);
        assert!(matches!(solve_h_super(&env, &a, 0.0, 1.01), Err(Error::Domain(_))));
    }

    #[test]
    fn h_super_vanishes_on_w_over_and_is_monotone() {
        let a = Spectrum::new(vec![0.8, 1.3, 2.0]).unwrap();
        let p = PhaseParams::diagonal(&a.values, 3.0).unwrap();
        let e = build_envelopes(&p, 0.1, EnvelopeSign::Below).unwrap();
        for s in [0.0, 0.5, 3.0, 100.0] {
            let w = solve_w_over(&e, &a, s).unwrap();
            assert!(solve_h_super(&e, &a, s, w).unwrap().abs() < 1e-10);
            let w2 = 0.9 * w;
            let base = solve_h_super(&e, &a, s, w2).unwrap();
            assert!(solve_h_super(&e, &a, s + 0.5, w2).unwrap() > base);
            assert!(solve_h_super(&e, &a, s, w2 - 1e-3).unwrap() > base);
        }
    }

    #[test]
    fn dhh_dw_matches_one_sided_difference() {
        for vals in [vec![1.0, 1.0, 1.0], vec![0.9, 1.1, 1.4]] {
            let a = Spectrum::new(vals.clone()).unwrap();
            let p = PhaseParams::diagonal(&vals, 4.0).unwrap();
            let e = build_envelopes(&p, 0.1, EnvelopeSign::Below).unwrap();
            let s = 1e8;
            let wbar = solve_w_over(&e, &a, s).unwrap();
            let step = 1e-6;
            let fd = (solve_h_super(&e, &a, s, wbar).unwrap() - solve_h_super(&e, &a, s, wbar - step).unwrap()) / step;
            assert!((fd - dhh_dw_limit(&a).unwrap()).abs() < 1e-4, "{fd}");
        }
    }

    #[test]
    fn residuals_on_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (_, e) = canonical(3.0, 0.1);
        let a = unit3();
        for _ in 0..1000 {
            let s = 10f64.powf(rng.random_range(-3.0..9.0));
            let wu = solve_w_under_report(&e, &a, s).unwrap();
            let wo = solve_w_over_report(&e, &a, s).unwrap();
            assert!(wu.residual.abs() <= 1e-12 && wo.residual.abs() <= 1e-12);
            let w_h = wu.value * rng.random_range(1.0..1.5);
            assert!(solve_h_report(&e, &a, s, w_h).unwrap().residual.abs() <= 1e-12);
            let w_hh = wo.value * rng.random_range(0.3..1.0);
            assert!(solve_h_super_report(&e, &a, s, w_hh).unwrap().residual.abs() <= 1e-12);
        }
    }

    #[test]
    fn h_tail_bound_is_stable() {
        let (_, e) = canonical(3.0, 0.1);
        let a = unit3();
        let ws = [1.01, 1.05, 1.2, 1.5];
        let c_of = |s: f64| {
            ws.iter()
                .map(|&w| (solve_h(&e, &a, s, w).unwrap() - h_limit(&e, &a, w).unwrap()) * s.powf(1.5))
                .fold(0.0, f64::max)
        };
        let fitted = c_of(1e2);
        for s in [1e3, 1e4, 1e5] {
            for &w in &ws {
                let d = solve_h(&e, &a, s, w).unwrap() - h_limit(&e, &a, w).unwrap();
                assert!(d >= 0.0 && d <= 1.05 * fitted * s.powf(-1.5), "s = {s}, w = {w}");
            }
        }
    }

    #[test]
    fn bisection_and_free_newton_agree() {
        let (_, e) = canonical(3.0, 0.1);
        let a = unit3();
        let g = e.upper(2.0);
        let bis = solve_w_under(&e, &a, 2.0).unwrap();
        for seed in [0.5, 1.0, 2.0] {
            let mut w: f64 = seed;
            for _ in 0..100 {
                let f = 3.0 * w.atan() - g;
                w -= f / (3.0 / (1.0 + w * w));
            }
            assert!((w - bis).abs() < 1e-10);
        }
        let target = e.lower(2.0);
        let wb = 0.8;
        let bis_h = solve_h_super(&e, &a, 2.0, wb).unwrap();
        for seed in [0.02, 0.08, 0.15] {
            let mut hh: f64 = seed;
            for _ in 0..100 {
                let f = h_super_residual(&a, wb, hh, target);
                let d =
                    (h_super_residual(&a, wb, hh + 1e-7, target) - h_super_residual(&a, wb, hh - 1e-7, target)) / 2e-7;
                hh -= f / d;
            }
            assert!((hh - bis_h).abs() < 1e-10, "{seed}: {hh} vs {bis_h}");
        }
    }

    #[test]
    fn deviation_forms_match_literal_solves() {
        let (_, e) = canonical(3.0, 0.1);
        let a = unit3();
        for &(s, phi) in &[(0.0, 0.2), (1.0, 0.05), (50.0, 0.01)] {
            let w = 1.0 + phi;
            let delta = e.upper_excess(s) + limit_offset(&e, &a) - phase_increment(&a, phi);
            let lit = solve_h(&e, &a, s, w).unwrap() - w;
            assert!((h_gap_deviation(1.0, w, delta) - lit).abs() < 1e-12);
        }
        for &(s, phi) in &[(0.0, -0.2), (1.0, -0.05), (50.0, -0.01)] {
            let w = 1.0 + phi;
            let gap = -e.lower_deficit(s) + limit_offset(&e, &a) - phase_increment(&a, phi);
            let dev = solve_h_super_deviation(&a, w, gap).unwrap().value;
            assert!((dev - solve_h_super(&e, &a, s, w).unwrap()).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn j_zero_at_zero_dispersion(a1 in 0.01f64..10.0, gap in 0.0f64..10.0, w in 0.01f64..10.0) {
            let a = Spectrum::new(vec![a1, a1 + gap]).unwrap();
            prop_assert_eq!(j_factor(&a, w, 0.0).unwrap(), 0.0);
        }

        #[test]
        fn j_increasing_in_h(a1 in 0.01f64..10.0, w in 0.01f64..10.0, h in 0.0f64..5.0, dh in 1e-6f64..1.0) {
            let a = Spectrum::new(vec![a1, a1 * 2.0]).unwrap();
            prop_assert!(j_factor(&a, w, h + dh).unwrap() > j_factor(&a, w, h).unwrap());
        }
    }
}
