//! Scalar numerical building blocks shared by the barrier, Dirichlet and
//! radial modules.

pub mod fit;
pub mod interp;
pub mod ode;
pub mod root;

/// Five-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre5<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    const X: [f64; 5] =
        [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = 0.0;
    for i in 0..5 {
        acc += W[i] * f(m + r * X[i]);
    }
    acc * r
}

/// Deterministic sum: fixed-size chunks are summed in order, so the result
/// does not depend on how many worker threads produced the inputs.
pub fn stable_dot(a: &[f64], b: &[f64]) -> f64 {
    use rayon::prelude::*;
    const CHUNK: usize = 8192;
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}
