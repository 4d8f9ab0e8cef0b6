//! Piecewise cubic Hermite interpolation on a uniform abscissa grid.

/// Cubic Hermite interpolant through `(t_k, y_k)` with prescribed slopes.
/// Outside the grid the end values are held constant.
#[derive(Debug, Clone)]
pub struct UniformHermite {
    t0: f64,
    dt: f64,
    y: Vec<f64>,
    dy: Vec<f64>,
}

impl UniformHermite {
    /// `t` must be uniformly spaced (up to rounding) and increasing.
    pub fn new(t: &[f64], y: Vec<f64>, dy: Vec<f64>) -> Self {
        assert!(t.len() >= 2 && t.len() == y.len() && y.len() == dy.len());
        let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        Self { t0: t[0], dt, y, dy }
    }

    pub fn t_min(&self) -> f64 {
        self.t0
    }

    pub fn t_max(&self) -> f64 {
        self.t0 + self.dt * (self.y.len() - 1) as f64
    }

    fn locate(&self, t: f64) -> Option<(usize, f64)> {
        let last = self.y.len() - 1;
        if t <= self.t0 || t >= self.t_max() {
            return None;
        }
        let k = (((t - self.t0) / self.dt).floor() as usize).min(last - 1);
        Some((k, (t - self.t0) / self.dt - k as f64))
    }

    pub fn value(&self, t: f64) -> f64 {
        match self.locate(t) {
            None => {
                if t <= self.t0 {
                    self.y[0]
                } else {
                    self.y[self.y.len() - 1]
                }
            }
            Some((k, u)) => {
                let (y0, y1) = (self.y[k], self.y[k + 1]);
                let (m0, m1) = (self.dy[k] * self.dt, self.dy[k + 1] * self.dt);
                let u2 = u * u;
                let u3 = u2 * u;
                (2.0 * u3 - 3.0 * u2 + 1.0) * y0
                    + (u3 - 2.0 * u2 + u) * m0
                    + (-2.0 * u3 + 3.0 * u2) * y1
                    + (u3 - u2) * m1
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self.locate(t) {
            None => 0.0,
            Some((k, u)) => {
                let (y0, y1) = (self.y[k], self.y[k + 1]);
                let (m0, m1) = (self.dy[k] * self.dt, self.dy[k + 1] * self.dt);
                let u2 = u * u;
                ((6.0 * u2 - 6.0 * u) * y0
                    + (3.0 * u2 - 4.0 * u + 1.0) * m0
                    + (-6.0 * u2 + 6.0 * u) * y1
                    + (3.0 * u2 - 2.0 * u) * m1)
                    / self.dt
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubics() {
        let t: Vec<f64> = (0..11).map(|i| i as f64 * 0.3).collect();
        let f = |x: f64| x * x * x - 2.0 * x + 1.0;
        let df = |x: f64| 3.0 * x * x - 2.0;
        let it = UniformHermite::new(&t, t.iter().map(|&x| f(x)).collect(), t.iter().map(|&x| df(x)).collect());
        for i in 0..100 {
            let x = 0.01 + i as f64 * 0.0297;
            assert!((it.value(x) - f(x)).abs() < 1e-12);
            assert!((it.derivative(x) - df(x)).abs() < 1e-11);
        }
    }
}
