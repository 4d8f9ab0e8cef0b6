//! Adaptive Dormand–Prince 5(4) integration of a scalar ODE, reporting the
//! state and its derivative at every requested output abscissa.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeTolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for OdeTolerances {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-40 }
    }
}

impl OdeTolerances {
    pub fn halved(self) -> Self {
        Self { rtol: 0.5 * self.rtol, atol: 0.5 * self.atol }
    }
}

/// Samples of a scalar trajectory on an output grid.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub dy: Vec<f64>,
    pub steps: usize,
    pub rejected: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Fifth-order weights minus embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = f(t, y)` from `(grid[0], y0)` through every point of the
/// increasing or decreasing `grid`.
///
/// `f` may reject a state (for instance one that left the domain of an
/// implicit function); the rejection is retried with a smaller step and
/// reported as an integration failure once the step underflows.
pub fn integrate<F>(mut f: F, y0: f64, grid: &[f64], tol: OdeTolerances) -> Result<Trajectory>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    if grid.len() < 2 {
        return Err(Error::Input("output grid needs at least two points".into()));
    }
    let dir = (grid[1] - grid[0]).signum();
    if dir == 0.0 || grid.windows(2).any(|w| (w[1] - w[0]) * dir <= 0.0) {
        return Err(Error::Input("output grid must be strictly monotone".into()));
    }
    let mut traj = Trajectory {
        t: Vec::with_capacity(grid.len()),
        y: Vec::with_capacity(grid.len()),
        dy: Vec::with_capacity(grid.len()),
        ..Default::default()
    };
    let mut t = grid[0];
    let mut y = y0;
    let mut k1 = f(t, y).map_err(|e| Error::Integration { msg: e.to_string(), t, state: y })?;
    traj.t.push(t);
    traj.y.push(y);
    traj.dy.push(k1);

    let span = (grid[grid.len() - 1] - grid[0]).abs();
    let mut h = (grid[1] - grid[0]).abs();
    let h_min = 1e-14 * span.max(1.0);

    for &t_out in &grid[1..] {
        while (t_out - t) * dir > 0.0 {
            let remaining = (t_out - t).abs();
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            let hs = step * dir;
            match dp_step(&mut f, t, y, k1, hs) {
                Ok((y_new, k7, err_est)) => {
                    let scale = tol.atol + tol.rtol * y.abs().max(y_new.abs());
                    let err = (err_est / scale).abs();
                    if err <= 1.0 {
                        t = if last { t_out } else { t + hs };
                        y = y_new;
                        k1 = k7;
                        traj.steps += 1;
                        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                        if !last || factor < 1.0 {
                            h = step * factor;
                        }
                    } else {
                        traj.rejected += 1;
                        h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 0.5);
                    }
                }
                Err(_) => {
                    traj.rejected += 1;
                    h = 0.25 * step;
                }
            }
            if h < h_min {
                return Err(Error::Integration { msg: "step size underflow".into(), t, state: y });
            }
            if !y.is_finite() {
                return Err(Error::Integration { msg: "non-finite state".into(), t, state: y });
            }
        }
        traj.t.push(t_out);
        traj.y.push(y);
        traj.dy.push(k1);
    }
    Ok(traj)
}

fn dp_step<F>(f: &mut F, t: f64, y: f64, k1: f64, h: f64) -> Result<(f64, f64, f64)>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    let k2 = f(t + C2 * h, y + h * A21 * k1)?;
    let k3 = f(t + C3 * h, y + h * (A31 * k1 + A32 * k2))?;
    let k4 = f(t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3))?;
    let k5 = f(t + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))?;
    let k6 = f(t + h, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))?;
    let y_new = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
    let k7 = f(t + h, y_new)?;
    let err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
    Ok((y_new, k7, err))
}

/// Uniform grid of `count + 1` points from `a` to `b` inclusive.
pub fn uniform_grid(a: f64, b: f64, count: usize) -> Vec<f64> {
    let step = (b - a) / count as f64;
    (0..=count).map(|i| if i == count { b } else { a + step * i as f64 }).collect()
}
