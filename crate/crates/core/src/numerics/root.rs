//! Bracketed scalar root finding: bisection down to a coarse width, then
//! safeguarded Newton polish on the defining residual.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    /// Bisection stops once the bracket is narrower than this.
    pub bisect_width: f64,
    /// Newton stops once `|f| <= residual_tol`.
    pub residual_tol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self { bisect_width: 1e-6, residual_tol: 1e-13, max_iter: 200 }
    }
}

/// Outcome of an implicit scalar solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImplicitSolveReport {
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
}

/// Root of an increasing function `f` on `[lo, hi]` with `f(lo) <= 0 <= f(hi)`.
///
/// `fdf` returns the value and the derivative. Newton iterates never leave the
/// current bracket; a step that would is replaced by a bisection step.
pub fn solve_increasing<F>(mut fdf: F, lo: f64, hi: f64, opts: RootOptions) -> Result<ImplicitSolveReport>
where
    F: FnMut(f64) -> (f64, f64),
{
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::Internal(format!("invalid bracket [{lo}, {hi}]")));
    }
    let bracket = (lo, hi);
    let (flo, _) = fdf(lo);
    let (fhi, _) = fdf(hi);
    if flo > opts.residual_tol || fhi < -opts.residual_tol {
        return Err(Error::Internal(format!("bracket [{lo}, {hi}] does not enclose a root (f = {flo}, {fhi})")));
    }
    if flo.abs() <= opts.residual_tol && flo.abs() <= fhi.abs() {
        return Ok(ImplicitSolveReport { value: lo, residual: flo, iterations: 0, bracket });
    }
    if fhi.abs() <= opts.residual_tol {
        return Ok(ImplicitSolveReport { value: hi, residual: fhi, iterations: 0, bracket });
    }

    let (mut a, mut b) = (lo, hi);
    let mut iterations = 0;
    while b - a > opts.bisect_width && iterations < opts.max_iter {
        let m = 0.5 * (a + b);
        let (fm, _) = fdf(m);
        iterations += 1;
        if fm == 0.0 {
            return Ok(ImplicitSolveReport { value: m, residual: 0.0, iterations, bracket });
        }
        if fm < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }

    let mut x = 0.5 * (a + b);
    let mut best = (x, f64::INFINITY);
    while iterations < opts.max_iter {
        let (fx, dfx) = fdf(x);
        iterations += 1;
        if fx.abs() < best.1.abs() {
            best = (x, fx);
        }
        if fx.abs() <= opts.residual_tol {
            return Ok(ImplicitSolveReport { value: x, residual: fx, iterations, bracket });
        }
        if fx < 0.0 {
            a = x;
        } else {
            b = x;
        }
        let newton = if dfx > 0.0 { x - fx / dfx } else { f64::NAN };
        let next = if newton.is_finite() && newton > a && newton < b { newton } else { 0.5 * (a + b) };
        // Bracket collapsed to adjacent floats: the best iterate is as good as it gets.
        if next == x || b - a <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            return Ok(ImplicitSolveReport { value: best.0, residual: best.1, iterations, bracket });
        }
        x = next;
    }
    if best.1.abs() <= opts.residual_tol {
        return Ok(ImplicitSolveReport { value: best.0, residual: best.1, iterations, bracket });
    }
    Err(Error::Convergence {
        msg: format!("root solve stalled at x = {} with residual {}", best.0, best.1),
        history: vec![best.1],
    })
}
