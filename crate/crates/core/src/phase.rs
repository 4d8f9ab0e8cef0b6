//! Spectral machinery of the phase operator `F(M) = Σ arctan λᵢ(M)`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_DIM: usize = 2;
pub const MAX_DIM: usize = 8;

/// Real symmetric matrix stored as its packed lower triangle, so `m[i][j] == m[j][i]` always.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    n: usize,
    packed: Vec<f64>,
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    r * (r + 1) / 2 + c
}

impl SymmetricMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, packed: vec![0.0; n * (n + 1) / 2] }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds from full rows; the rows must be symmetric to `1e-12` relative.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Input("matrix rows must form a square array".into()));
        }
        let scale = rows.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
        for i in 0..n {
            for j in 0..i {
                if (rows[i][j] - rows[j][i]).abs() > 1e-12 * scale.max(1.0) {
                    return Err(Error::Input(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self::from_fn(n, |i, j| 0.5 * (rows[i][j] + rows[j][i])))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.packed[packed_index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.packed[packed_index(i, j)] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j).abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { n: self.n, packed: self.packed.iter().map(|v| c * v).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self { n: self.n, packed: self.packed.iter().zip(&other.packed).map(|(a, b)| a + b).collect() }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum()).collect()
    }

    /// `½ xᵀ M x`.
    pub fn half_quadratic_form(&self, x: &[f64]) -> f64 {
        0.5 * x.iter().zip(self.mul_vec(x)).map(|(a, b)| a * b).sum::<f64>()
    }

    fn check_finite(&self) -> Result<()> {
        if self.packed.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Input("matrix has non-finite entries".into()))
        }
    }
}

/// Eigenvalues sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub values: Vec<f64>,
}

impl Spectrum {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("spectrum has non-finite values".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// Spectrum with orthonormal eigenvectors; `vectors[k]` belongs to `values[k]`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub spectrum: Spectrum,
    pub vectors: Vec<Vec<f64>>,
}

impl EigenDecomposition {
    /// `Q diag(φ(λ)) Qᵀ`.
    pub fn apply_function(&self, mut phi: impl FnMut(f64) -> f64) -> SymmetricMatrix {
        let n = self.spectrum.n();
        let weights: Vec<f64> = self.spectrum.values.iter().map(|&l| phi(l)).collect();
        SymmetricMatrix::from_fn(n, |i, j| (0..n).map(|k| weights[k] * self.vectors[k][i] * self.vectors[k][j]).sum())
    }
}

const JACOBI_MAX_SWEEPS: usize = 50;
const JACOBI_THRESHOLD: f64 = 1e-13;

/// Cyclic Jacobi eigen-decomposition.
pub fn eigen_decompose(m: &SymmetricMatrix) -> Result<EigenDecomposition> {
    m.check_finite()?;
    let n = m.n();
    let mut a = m.to_rows();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let threshold = JACOBI_THRESHOLD * m.norm_inf();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| a[i][j].abs()).fold(0.0, f64::max);
        if off <= threshold {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                a[p][q] = 0.0;
                a[q][p] = 0.0;
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let values = order.iter().map(|&k| a[k][k]).collect();
    let vectors = order.iter().map(|&k| (0..n).map(|i| v[i][k]).collect()).collect();
    Ok(EigenDecomposition { spectrum: Spectrum { values }, vectors })
}

pub fn eigen_sym(m: &SymmetricMatrix) -> Result<Spectrum> {
    Ok(eigen_decompose(m)?.spectrum)
}

/// `f(λ) = Σ arctan λᵢ`.
pub fn phase_sum(values: &[f64]) -> f64 {
    values.iter().map(|v| v.atan()).sum()
}

pub fn phase_value(m: &SymmetricMatrix) -> Result<f64> {
    Ok(phase_sum(&eigen_sym(m)?.values))
}

/// Derivative of [`phase_value`], `(I + M²)⁻¹`.
pub fn phase_gradient(m: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let eig = eigen_decompose(m)?;
    let g = eig.apply_function(|l| 1.0 / (1.0 + l * l));
    let n = m.n();
    let m2 = eig.apply_function(|l| 1.0 + l * l);
    let mut residual = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let prod: f64 = (0..n).map(|k| m2.get(i, k) * g.get(k, j)).sum();
            residual = residual.max((prod - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    if residual > 1e-8 {
        return Err(Error::Internal(format!("(I+M²) inversion residual {residual:e}")));
    }
    Ok(g)
}

/// `|g| − (n−2)π/2`, positive exactly in the supercritical range.
pub fn supercritical_margin(n: usize, g_value: f64) -> f64 {
    g_value.abs() - (n as f64 - 2.0) * FRAC_PI_2
}

/// `M(A) = min_{j,k} (1+aⱼ²)/(2aₖ) · Σᵢ aᵢ/(1+aᵢ²)` for a definite spectrum.
///
/// Negative spectra are evaluated on `|aᵢ|`. The full minimum and the closed
/// form for sorted spectra must agree to `1e-10`.
pub fn m_of_a(a: &Spectrum) -> Result<f64> {
    let vals = &a.values;
    if vals.is_empty() {
        return Err(Error::Input("empty spectrum".into()));
    }
    let all_pos = vals.iter().all(|&v| v > 0.0);
    let all_neg = vals.iter().all(|&v| v < 0.0);
    if !all_pos && !all_neg {
        return Err(Error::Domain("M(A) needs a definite spectrum".into()));
    }
    let mut abs: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let sum: f64 = abs.iter().map(|&t| t / (1.0 + t * t)).sum();
    let mut min_form = f64::INFINITY;
    for &aj in &abs {
        for &ak in &abs {
            min_form = min_form.min((1.0 + aj * aj) / (2.0 * ak) * sum);
        }
    }
    let (a1, an) = (abs[0], abs[abs.len() - 1]);
    let closed = (1.0 + a1 * a1) / (2.0 * an) * sum;
    if (min_form - closed).abs() > 1e-10 * closed.max(1.0) {
        return Err(Error::Internal(format!("M(A) forms disagree: {min_form} vs {closed}")));
    }
    Ok(closed)
}

/// Structural data of one problem instance: `F(D²u) = g` with `g → g_inf` and
/// the quadratic `½xᵀAx` as the model solution at infinity.
///
/// Always stored with `A` positive definite; a negative-definite input is
/// replaced by `(−A, −g_inf)` and `flipped` records that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseParams {
    pub n: usize,
    pub matrix: SymmetricMatrix,
    pub a: Spectrum,
    pub g_inf: f64,
    pub beta: f64,
    pub m_of_a: f64,
    pub flipped: bool,
}

impl PhaseParams {
    /// Takes `g_inf = f(λ(A))`.
    pub fn from_matrix(matrix: SymmetricMatrix, beta: f64) -> Result<Self> {
        let a = eigen_sym(&matrix)?;
        let g = phase_sum(&a.values);
        Self::new(matrix, g, beta)
    }

    /// Checks `f(λ(A)) = g_inf` to `1e-10`; the stored limit is the computed
    /// `f(λ(A))` so that `W → 1` holds exactly in floating point.
    pub fn new(matrix: SymmetricMatrix, g_inf: f64, beta: f64) -> Result<Self> {
        let n = matrix.n();
        if !(MIN_DIM..=MAX_DIM).contains(&n) {
            return Err(Error::Input(format!("dimension {n} outside [{MIN_DIM}, {MAX_DIM}]")));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Input(format!("decay exponent must be positive, got {beta}")));
        }
        if !g_inf.is_finite() {
            return Err(Error::Input("phase limit is not finite".into()));
        }
        let spec = eigen_sym(&matrix)?;
        let flipped = if spec.values.iter().all(|&v| v > 0.0) {
            false
        } else if spec.values.iter().all(|&v| v < 0.0) {
            true
        } else {
            return Err(Error::Domain("A must be positive or negative definite".into()));
        };
        let (matrix, g_target) = if flipped { (matrix.scaled(-1.0), -g_inf) } else { (matrix, g_inf) };
        let a = eigen_sym(&matrix)?;
        let g = phase_sum(&a.values);
        if (g - g_target).abs() > 1e-10 {
            return Err(Error::Config(format!("f(λ(A)) = {g} differs from the phase limit {g_target}")));
        }
        if supercritical_margin(n, g) <= 0.0 {
            return Err(Error::Config(format!("phase limit {g} is not supercritical for n = {n}")));
        }
        let m = m_of_a(&a)?;
        Ok(Self { n, matrix, a, g_inf: g, beta, m_of_a: m, flipped })
    }

    /// `A = t·I` with `t = tan(g_inf/n)`.
    pub fn scalar(n: usize, g_inf: f64, beta: f64) -> Result<Self> {
        let t = (g_inf / n as f64).tan();
        Self::new(SymmetricMatrix::diagonal(&vec![t; n]), g_inf, beta)
    }

    /// `A = diag(a)`, with `g_inf = f(a)`.
    pub fn diagonal(a: &[f64], beta: f64) -> Result<Self> {
        Self::from_matrix(SymmetricMatrix::diagonal(a), beta)
    }

    /// `s(x) = ½ xᵀAx`.
    pub fn s_of(&self, x: &[f64]) -> f64 {
        self.matrix.half_quadratic_form(x)
    }

    pub fn a1(&self) -> f64 {
        self.a.min()
    }

    pub fn an(&self) -> f64 {
        self.a.max()
    }

    /// Mean eigenvalue `tr(A)/n`.
    pub fn trace_normalizer(&self) -> f64 {
        self.matrix.trace() / self.n as f64
    }

    pub fn supercritical_margin(&self, g_value: f64) -> f64 {
        supercritical_margin(self.n, g_value)
    }
}
