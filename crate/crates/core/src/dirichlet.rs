//! Dirichlet problems `F(D²u) = g` in `D_s = {½xᵀAx < s}`, `u = s` on the
//! boundary, for `n = 3` on a uniform grid.
//!
//! Second derivatives are taken along nine lines through each node (three
//! axes and six face diagonals). Arms that leave `D_s` are clipped at the
//! exact ray–quadric intersection and the three-point Shortley–Weller
//! formula is used on the resulting unequal arms. Mixed entries come from
//! the difference of the two diagonal second differences in a coordinate
//! plane, so the stencil is exact on quadratics at every node.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::barrier::{fit_power_or_log, BarrierFunction, ProfileKind, RateFit};
use crate::envelope::TestPhase;
use crate::error::{Error, Result};
use crate::numerics::ode::OdeTolerances;
use crate::numerics::stable_dot;
use crate::phase::{eigen_decompose, phase_sum, PhaseParams, SymmetricMatrix};
use crate::radial::{integrate_radial, RadialForcing, RadialProfile};

pub const DIM: usize = 3;

/// Stencil lines; arm `2l` points along `+LINES[l]`, arm `2l+1` along `−LINES[l]`.
pub const LINES: [[i32; 3]; 9] =
    [[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0], [1, -1, 0], [1, 0, 1], [1, 0, -1], [0, 1, 1], [0, 1, -1]];
pub const ARMS: usize = 18;

/// Arms shorter than this fraction of `h` make the node a boundary node.
const MIN_ARM: f64 = 1e-6;

pub const BOUNDARY: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct EllipsoidGrid {
    pub params: PhaseParams,
    pub s_level: f64,
    pub h: f64,
    /// Node `(i,j,k)` of the box sits at `h·(i − half₀, j − half₁, k − half₂)`.
    pub half: [usize; 3],
    /// Integer offsets of interior nodes from the centre.
    pub nodes: Vec<[i32; 3]>,
    /// Interior index by box position, [`BOUNDARY`] elsewhere.
    pub box_index: Vec<u32>,
    /// Interior neighbour per arm, [`BOUNDARY`] for a Dirichlet arm.
    pub neighbors: Vec<[u32; ARMS]>,
    /// Index into `arm_lengths` for nodes with a clipped arm.
    pub clip_slot: Vec<u32>,
    /// Arm lengths in units of `h` for nodes listed in `clip_slot`.
    pub arm_lengths: Vec<[f64; ARMS]>,
    /// Nodes with `s < s_level` demoted to boundary because an arm was shorter than `1e-6·h`.
    pub demoted: usize,
}

fn matrix3(params: &PhaseParams) -> [[f64; 3]; 3] {
    let mut a = [[0.0; 3]; 3];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = params.matrix.get(i, j);
        }
    }
    a
}

fn quad(a: &[[f64; 3]; 3], x: &[f64; 3], y: &[f64; 3]) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += x[i] * a[i][j] * y[j];
        }
    }
    acc
}

/// Smallest `τ > 0` with `s(x + τ·step) = level`, given `s(x) < level`.
fn clip_fraction(a: &[[f64; 3]; 3], x: &[f64; 3], step: &[f64; 3], s_x: f64, level: f64) -> f64 {
    let rem = level - s_x;
    let qa = 0.5 * quad(a, step, step);
    let qb = quad(a, x, step);
    let disc = (qb * qb + 4.0 * qa * rem).sqrt();
    let tau = if qb >= 0.0 { 2.0 * rem / (qb + disc) } else { (disc - qb) / (2.0 * qa) };
    tau.min(1.0)
}

pub fn build_grid(params: &PhaseParams, s_level: f64, h: f64) -> Result<EllipsoidGrid> {
    if params.n != DIM {
        return Err(Error::Config(format!("the grid solver is three-dimensional, got n = {}", params.n)));
    }
    if !(s_level > 0.0 && s_level.is_finite() && h > 0.0 && h.is_finite()) {
        return Err(Error::Input(format!("need positive level and spacing, got {s_level}, {h}")));
    }
    let r_in = (2.0 * s_level / params.an()).sqrt();
    if r_in / h < 2.0 {
        return Err(Error::Config(format!(
            "h = {h} leaves fewer than 5 nodes per axis in the inscribed ball (radius {r_in})"
        )));
    }
    let inv = eigen_decompose(&params.matrix)?.apply_function(|l| 1.0 / l);
    let mut half = [0usize; 3];
    for (d, m) in half.iter_mut().enumerate() {
        *m = ((2.0 * s_level * inv.get(d, d)).sqrt() / h).floor() as usize + 1;
    }
    let dims = half.map(|m| 2 * m + 1);
    let a = matrix3(params);
    let pos = |ijk: [i32; 3]| [h * ijk[0] as f64, h * ijk[1] as f64, h * ijk[2] as f64];
    let lin = |ijk: [i32; 3]| -> Option<usize> {
        let mut idx = 0usize;
        for d in 0..3 {
            let c = ijk[d] + half[d] as i32;
            if c < 0 || c >= dims[d] as i32 {
                return None;
            }
            idx = idx * dims[d] + c as usize;
        }
        Some(idx)
    };

    // Candidates: s(x) < level.
    let total = dims[0] * dims[1] * dims[2];
    let mut inside = vec![false; total];
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let ijk = [i as i32 - half[0] as i32, j as i32 - half[1] as i32, k as i32 - half[2] as i32];
                let x = pos(ijk);
                if 0.5 * quad(&a, &x, &x) < s_level {
                    inside[lin(ijk).unwrap()] = true;
                }
            }
        }
    }

    let arm_of = |ijk: [i32; 3], inside: &[bool]| -> [Option<f64>; ARMS] {
        let x = pos(ijk);
        let s_x = 0.5 * quad(&a, &x, &x);
        let mut out = [None; ARMS];
        for (l, v) in LINES.iter().enumerate() {
            for (side, sgn) in [1i32, -1].iter().enumerate() {
                let nb = [ijk[0] + sgn * v[0], ijk[1] + sgn * v[1], ijk[2] + sgn * v[2]];
                if lin(nb).is_some_and(|q| inside[q]) {
                    continue;
                }
                let step = [h * (sgn * v[0]) as f64, h * (sgn * v[1]) as f64, h * (sgn * v[2]) as f64];
                out[2 * l + side] = Some(clip_fraction(&a, &x, &step, s_x, s_level));
            }
        }
        out
    };

    // Demote nodes that sit within 1e-6·h of the quadric along some arm.
    let mut demoted = 0;
    let candidates: Vec<usize> = (0..total).filter(|&q| inside[q]).collect();
    let mut keep = inside.clone();
    for &q in &candidates {
        let ijk = unlinear(q, dims, half);
        if arm_of(ijk, &inside).iter().flatten().any(|&th| th < MIN_ARM) {
            keep[q] = false;
            demoted += 1;
        }
    }

    let mut box_index = vec![BOUNDARY; total];
    let mut nodes = Vec::new();
    for q in 0..total {
        if keep[q] {
            box_index[q] = nodes.len() as u32;
            nodes.push(unlinear(q, dims, half));
        }
    }
    let mut neighbors = Vec::with_capacity(nodes.len());
    let mut clip_slot = vec![BOUNDARY; nodes.len()];
    let mut arm_lengths = Vec::new();
    for (id, &ijk) in nodes.iter().enumerate() {
        let clipped = arm_of(ijk, &inside);
        let mut nb = [BOUNDARY; ARMS];
        let mut lengths = [1.0; ARMS];
        let mut any = false;
        for (l, v) in LINES.iter().enumerate() {
            for (side, sgn) in [1i32, -1].iter().enumerate() {
                let arm = 2 * l + side;
                match clipped[arm] {
                    Some(th) => {
                        lengths[arm] = th;
                        any = true;
                    }
                    None => {
                        let q = lin([ijk[0] + sgn * v[0], ijk[1] + sgn * v[1], ijk[2] + sgn * v[2]]).unwrap();
                        // A demoted neighbour is a Dirichlet node at full arm length.
                        nb[arm] = box_index[q];
                        any |= nb[arm] == BOUNDARY;
                    }
                }
            }
        }
        neighbors.push(nb);
        if any {
            clip_slot[id] = arm_lengths.len() as u32;
            arm_lengths.push(lengths);
        }
    }
    Ok(EllipsoidGrid {
        params: params.clone(),
        s_level,
        h,
        half,
        nodes,
        box_index,
        neighbors,
        clip_slot,
        arm_lengths,
        demoted,
    })
}

fn unlinear(mut q: usize, dims: [usize; 3], half: [usize; 3]) -> [i32; 3] {
    let k = q % dims[2];
    q /= dims[2];
    let j = q % dims[1];
    let i = q / dims[1];
    [i as i32 - half[0] as i32, j as i32 - half[1] as i32, k as i32 - half[2] as i32]
}

impl EllipsoidGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.half.map(|m| 2 * m + 1)
    }

    pub fn position(&self, node: usize) -> [f64; 3] {
        let ijk = self.nodes[node];
        [self.h * ijk[0] as f64, self.h * ijk[1] as f64, self.h * ijk[2] as f64]
    }

    /// Interior node at integer offset `ijk`, if any.
    pub fn node_at(&self, ijk: [i32; 3]) -> Option<usize> {
        let dims = self.dims();
        let mut idx = 0usize;
        for d in 0..3 {
            let c = ijk[d] + self.half[d] as i32;
            if c < 0 || c >= dims[d] as i32 {
                return None;
            }
            idx = idx * dims[d] + c as usize;
        }
        let v = self.box_index[idx];
        (v != BOUNDARY).then_some(v as usize)
    }

    /// Arm length in units of `h`.
    pub fn arm_length(&self, node: usize, arm: usize) -> f64 {
        match self.clip_slot[node] {
            BOUNDARY => 1.0,
            slot => self.arm_lengths[slot as usize][arm],
        }
    }

    /// End point of an arm.
    pub fn arm_end(&self, node: usize, arm: usize) -> [f64; 3] {
        let x = self.position(node);
        let v = LINES[arm / 2];
        let sgn = if arm.is_multiple_of(2) { 1.0 } else { -1.0 };
        let len = self.h * self.arm_length(node, arm) * sgn;
        [x[0] + len * v[0] as f64, x[1] + len * v[1] as f64, x[2] + len * v[2] as f64]
    }

    pub fn s_of(&self, node: usize) -> f64 {
        self.params.s_of(&self.position(node))
    }

    /// `½xᵀAx` at every node.
    pub fn quadratic(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.s_of(i)).collect()
    }

    pub fn clipped_nodes(&self) -> usize {
        self.arm_lengths.len()
    }
}

/// Weights `(w₊, w₋, w₀)` of the three-point second difference with arms `θ₊h`, `θ₋h`.
#[inline]
fn line_weights(h: f64, tp: f64, tm: f64) -> (f64, f64, f64) {
    let scale = 2.0 / (h * h * (tp + tm));
    let (wp, wm) = (scale / tp, scale / tm);
    (wp, wm, -(wp + wm))
}

struct Stencil {
    /// `vₗᵀ D²u vₗ` along each line.
    second: [f64; 9],
    weights: [(f64, f64, f64); 9],
}

fn stencil(grid: &EllipsoidGrid, u: &[f64], node: usize) -> Stencil {
    let nb = &grid.neighbors[node];
    let u0 = u[node];
    let value = |arm: usize| if nb[arm] == BOUNDARY { grid.s_level } else { u[nb[arm] as usize] };
    let mut second = [0.0; 9];
    let mut weights = [(0.0, 0.0, 0.0); 9];
    for l in 0..9 {
        let (tp, tm) = (grid.arm_length(node, 2 * l), grid.arm_length(node, 2 * l + 1));
        let w = line_weights(grid.h, tp, tm);
        second[l] = w.0 * value(2 * l) + w.1 * value(2 * l + 1) + w.2 * u0;
        weights[l] = w;
    }
    Stencil { second, weights }
}

/// `(d, e)` plane of diagonal lines `3..9`: `(3,4)` → (0,1), `(5,6)` → (0,2), `(7,8)` → (1,2).
const PLANES: [(usize, usize, usize); 3] = [(0, 1, 3), (0, 2, 5), (1, 2, 7)];

fn hessian_of(st: &Stencil) -> SymmetricMatrix {
    let mut m = SymmetricMatrix::zeros(DIM);
    for d in 0..3 {
        m.set(d, d, st.second[d]);
    }
    for &(d, e, l) in &PLANES {
        // (e_d+e_e)ᵀH(e_d+e_e) − (e_d−e_e)ᵀH(e_d−e_e) = 4H_de.
        m.set(d, e, 0.25 * (st.second[l] - st.second[l + 1]));
    }
    m
}

/// Discrete Hessian at an interior node; Dirichlet arms read `s_level`.
pub fn discrete_hessian(u: &[f64], grid: &EllipsoidGrid, node: usize) -> SymmetricMatrix {
    hessian_of(&stencil(grid, u, node))
}

/// One row of the Newton linearisation.
#[derive(Clone, Copy)]
struct Row {
    residual: f64,
    diag: f64,
    off: [f64; ARMS],
}

fn linearize_node(grid: &EllipsoidGrid, u: &[f64], g: f64, node: usize) -> Result<Row> {
    let st = stencil(grid, u, node);
    let eig = eigen_decompose(&hessian_of(&st))?;
    let residual = phase_sum(&eig.spectrum.values) - g;
    let grad = eig.apply_function(|l| 1.0 / (1.0 + l * l));
    // dF = Σ_d G_dd dD²_d + Σ_{d<e} (G_de/2)(dD²₊ − dD²₋).
    let mut coef = [0.0; 9];
    for d in 0..3 {
        coef[d] = grad.get(d, d);
    }
    for &(d, e, l) in &PLANES {
        coef[l] = 0.5 * grad.get(d, e);
        coef[l + 1] = -0.5 * grad.get(d, e);
    }
    let nb = &grid.neighbors[node];
    let mut row = Row { residual, diag: 0.0, off: [0.0; ARMS] };
    for l in 0..9 {
        let (wp, wm, w0) = st.weights[l];
        row.diag += coef[l] * w0;
        if nb[2 * l] != BOUNDARY {
            row.off[2 * l] = coef[l] * wp;
        }
        if nb[2 * l + 1] != BOUNDARY {
            row.off[2 * l + 1] = coef[l] * wm;
        }
    }
    Ok(row)
}

fn residual_node(grid: &EllipsoidGrid, u: &[f64], g: f64, node: usize) -> Result<f64> {
    let m = discrete_hessian(u, grid, node);
    Ok(phase_sum(&eigen_decompose(&m)?.spectrum.values) - g)
}

/// `F(D²u) − g` at every interior node.
pub fn residuals(grid: &EllipsoidGrid, u: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    (0..grid.len()).into_par_iter().map(|i| residual_node(grid, u, g[i], i)).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Jacobian<'a> {
    grid: &'a EllipsoidGrid,
    rows: Vec<Row>,
}

impl Jacobian<'_> {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nbs = &self.grid.neighbors;
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let row = &self.rows[i];
            let mut acc = row.diag * x[i];
            for (arm, &q) in nbs[i].iter().enumerate() {
                if q != BOUNDARY {
                    acc += row.off[arm] * x[q as usize];
                }
            }
            *yi = acc;
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub linear_tol: f64,
    pub max_linear_iters: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 50, linear_tol: 1e-10, max_linear_iters: 20_000, max_halvings: 30 }
    }
}

/// Jacobi-preconditioned BiCGSTAB to relative residual `tol`. Dot products are
/// reduced in fixed chunks, so results do not depend on the thread count.
fn bicgstab(jac: &Jacobian, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let n = b.len();
    let inv_diag: Vec<f64> = jac.rows.iter().map(|r| 1.0 / r.diag).collect();
    let precond = |src: &[f64], dst: &mut [f64]| {
        dst.par_iter_mut().zip(src.par_iter()).zip(inv_diag.par_iter()).for_each(|((d, s), m)| *d = s * m);
    };
    let b_norm = stable_dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let mut r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let rho_new = stable_dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            // Breakdown: restart the shadow residual.
            r_hat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p.par_iter_mut()
            .zip(r.par_iter())
            .zip(v.par_iter())
            .for_each(|((pi, ri), vi)| *pi = ri + beta * (*pi - omega * vi));
        precond(&p, &mut y);
        jac.apply(&y, &mut v);
        let denom = stable_dot(&r_hat, &v);
        if denom == 0.0 {
            return Err(Error::Convergence { msg: "BiCGSTAB breakdown".into(), history });
        }
        alpha = rho / denom;
        s.par_iter_mut().zip(r.par_iter()).zip(v.par_iter()).for_each(|((si, ri), vi)| *si = ri - alpha * vi);
        let s_norm = stable_dot(&s, &s).sqrt();
        if s_norm <= tol * b_norm {
            x.par_iter_mut().zip(y.par_iter()).for_each(|(xi, yi)| *xi += alpha * yi);
            return Ok((x, it));
        }
        precond(&s, &mut z);
        jac.apply(&z, &mut t);
        let tt = stable_dot(&t, &t);
        omega = if tt == 0.0 { 0.0 } else { stable_dot(&t, &s) / tt };
        x.par_iter_mut().zip(y.par_iter()).zip(z.par_iter()).for_each(|((xi, yi), zi)| *xi += alpha * yi + omega * zi);
        r.par_iter_mut().zip(s.par_iter()).zip(t.par_iter()).for_each(|((ri, si), ti)| *ri = si - omega * ti);
        let r_norm = stable_dot(&r, &r).sqrt();
        history.push(r_norm / b_norm);
        if r_norm <= tol * b_norm {
            return Ok((x, it));
        }
    }
    Err(Error::Convergence { msg: format!("BiCGSTAB did not reach {tol:e} in {max_iter} iterations"), history })
}

#[derive(Debug, Clone)]
pub struct GridSolution {
    pub grid: Arc<EllipsoidGrid>,
    pub u: Vec<f64>,
    pub g: Vec<f64>,
    pub newton_iters: usize,
    /// `max |F(D²u) − g|` over interior nodes, re-evaluated after the last step.
    pub final_residual: f64,
    pub history: Vec<f64>,
    pub linear_iters: Vec<usize>,
    pub restarted: bool,
}

impl GridSolution {
    pub fn h(&self) -> f64 {
        self.grid.h
    }

    pub fn s_level(&self) -> f64 {
        self.grid.s_level
    }

    /// `max |u − ½xᵀAx|`.
    pub fn max_deviation_from_quadratic(&self) -> f64 {
        (0..self.u.len()).map(|i| (self.u[i] - self.grid.s_of(i)).abs()).fold(0.0, f64::max)
    }

    pub fn value_at(&self, ijk: [i32; 3]) -> Option<f64> {
        self.grid.node_at(ijk).map(|i| self.u[i])
    }
}

/// Phase values at the nodes; fails unless `|g| > (n−2)π/2` everywhere.
pub fn sample_phase(grid: &EllipsoidGrid, g: &(dyn Fn(&[f64; 3]) -> f64 + Sync)) -> Result<Vec<f64>> {
    let values: Vec<f64> = (0..grid.len()).into_par_iter().map(|i| g(&grid.position(i))).collect();
    if let Some(i) =
        values.iter().position(|&v| !(v.is_finite() && v.abs() > std::f64::consts::FRAC_PI_2 * (DIM as f64 - 2.0)))
    {
        return Err(Error::Config(format!("phase {} is not supercritical at node {:?}", values[i], grid.position(i))));
    }
    Ok(values)
}

/// Damped Newton for `F(D²u) = g`, `u = s_level` on the boundary.
///
/// Starts from `u_init` (default `½xᵀAx`). If 30 step halvings fail to reduce
/// the residual, restarts once from `fallback` when given.
pub fn newton_solve(
    grid: &Arc<EllipsoidGrid>,
    g: &(dyn Fn(&[f64; 3]) -> f64 + Sync),
    u_init: Option<Vec<f64>>,
    fallback: Option<Vec<f64>>,
    opts: &NewtonOptions,
) -> Result<GridSolution> {
    let gv = sample_phase(grid, g)?;
    let mut u = u_init.unwrap_or_else(|| grid.quadratic());
    if u.len() != grid.len() {
        return Err(Error::Input(format!("initial iterate has {} values for {} nodes", u.len(), grid.len())));
    }
    let mut fallback = fallback;
    let mut restarted = false;
    let mut res = max_abs(&residuals(grid, &u, &gv)?);
    let mut history = vec![res];
    let mut linear_iters = Vec::new();
    let mut iters = 0;
    while res > opts.tol {
        if iters >= opts.max_iters {
            return Err(Error::Convergence {
                msg: format!("Newton stopped at residual {res:e} after {iters} iterations"),
                history,
            });
        }
        iters += 1;
        let rows: Vec<Row> =
            (0..grid.len()).into_par_iter().map(|i| linearize_node(grid, &u, gv[i], i)).collect::<Result<_>>()?;
        let rhs: Vec<f64> = rows.iter().map(|r| -r.residual).collect();
        let jac = Jacobian { grid, rows };
        let (delta, lin) = bicgstab(&jac, &rhs, opts.linear_tol, opts.max_linear_iters)?;
        linear_iters.push(lin);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
            let r = max_abs(&residuals(grid, &trial, &gv)?);
            if r < res {
                accepted = Some((trial, r));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, r)) => {
                u = trial;
                res = r;
            }
            None => match fallback.take() {
                Some(start) if start.len() == grid.len() => {
                    u = start;
                    restarted = true;
                    res = max_abs(&residuals(grid, &u, &gv)?);
                }
                _ => {
                    return Err(Error::Convergence {
                        msg: format!("line search stalled at residual {res:e}"),
                        history,
                    });
                }
            },
        }
        history.push(res);
    }
    Ok(GridSolution {
        grid: Arc::clone(grid),
        u,
        g: gv,
        newton_iters: iters,
        final_residual: res,
        history,
        linear_iters,
        restarted,
    })
}

/// Barrier midpoint `(u̲ + ū)/2` shifted to match the boundary level on average.
pub fn sandwich_midpoint(grid: &EllipsoidGrid, sub: &BarrierFunction, sup: &BarrierFunction) -> Vec<f64> {
    let shift = grid.s_level - 0.5 * (sub.u_of_s(grid.s_level) + sup.u_of_s(grid.s_level));
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let s = grid.s_of(i);
            0.5 * (sub.u_of_s(s) + sup.u_of_s(s)) + shift
        })
        .collect()
}

/// `G(r) = g(t r²/2)` for `A = t·I` and the canonical test phase.
#[derive(Debug, Clone)]
pub struct ScaledTestForcing {
    pub n: usize,
    pub t: f64,
    pub phase: TestPhase,
}

impl RadialForcing for ScaledTestForcing {
    fn n(&self) -> usize {
        self.n
    }

    fn g_inf(&self) -> f64 {
        self.phase.g_inf
    }

    fn excess(&self, r: f64) -> f64 {
        self.phase.excess_at_s(0.5 * self.t * r * r)
    }
}

/// `t` with `A = t·I`, or a precondition error.
pub fn scalar_multiple(params: &PhaseParams) -> Result<f64> {
    let (lo, hi) = (params.a1(), params.an());
    let offdiag = (0..params.n).flat_map(|i| (0..i).map(move |j| (i, j))).any(|(i, j)| params.matrix.get(i, j) != 0.0);
    if hi - lo > 1e-12 * hi || offdiag {
        return Err(Error::Precondition("radial reduction needs A = t·I".into()));
    }
    Ok(0.5 * (lo + hi))
}

/// Radial solution of the Dirichlet problem on the ball `s(x) < s_level`.
///
/// Regularity at the origin forces `W(0) = tan(G(0)/n)`, so the profile is a
/// single initial value problem and the boundary condition fixes `U(0)`.
#[derive(Debug, Clone)]
pub struct RadialOracle {
    pub profile: RadialProfile,
    pub s_level: f64,
    pub radius: f64,
    /// `U(0)`.
    pub u_origin: f64,
}

pub const ORACLE_R0: f64 = 1e-4;

pub fn radial_reduction_solve(params: &PhaseParams, phase: &TestPhase, s_level: f64) -> Result<RadialOracle> {
    let t = scalar_multiple(params)?;
    let radius = (2.0 * s_level / t).sqrt();
    let forcing = ScaledTestForcing { n: params.n, t, phase: phase.clone() };
    let profile = integrate_radial(&forcing, ORACLE_R0, radius, 2000, OdeTolerances { rtol: 1e-12, atol: 1e-40 })?;
    let u_origin = s_level - profile.u_rel(radius);
    Ok(RadialOracle { profile, s_level, radius, u_origin })
}

impl RadialOracle {
    pub fn u(&self, r: f64) -> f64 {
        self.u_origin + self.profile.u_rel(r)
    }

    /// `max |u_grid − U(|x|)|` over interior nodes.
    pub fn max_error(&self, sol: &GridSolution) -> f64 {
        (0..sol.u.len())
            .into_par_iter()
            .map(|i| {
                let x = sol.grid.position(i);
                let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                (sol.u[i] - self.u(r)).abs()
            })
            .reduce(|| 0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub s_level: f64,
    pub h: f64,
    /// `inf (½xᵀAx − u̲)` over the tabulated range.
    pub beta_minus: f64,
    /// `sup (½xᵀAx − ū)` over the tabulated range.
    pub beta_plus: f64,
    /// Bound on `|u_s − ½xᵀAx|` implied by the sandwich, plus `tol`.
    pub c1: f64,
    pub tol: f64,
    /// `min (u_s − u̲ − β₋)`.
    pub lower_margin: f64,
    /// `min (ū + β₊ − u_s)`.
    pub upper_margin: f64,
    pub max_deviation: f64,
    pub worst_node: [f64; 3],
    pub passed: bool,
}

pub fn sandwich_tolerance(h: f64) -> f64 {
    10.0 * h * h + 1e-6
}

/// Nodewise check of `u̲ + β₋ − tol ≤ u_s ≤ ū + β₊ + tol` and `|u_s − ½xᵀAx| ≤ C₁`.
///
/// With `T(s) = ∫ₛ^∞ (W − 1)`, `½xᵀAx − u = T(s)`, so `β₋ = inf T̲`,
/// `β₊ = sup T̄` and `C₁ = max(sup T̲ − β₋, β₊ − inf T̄) + tol`.
pub fn sandwich_check(sol: &GridSolution, sub: &BarrierFunction, sup: &BarrierFunction) -> Result<SandwichReport> {
    if sub.kind() != ProfileKind::Sub || sup.kind() != ProfileKind::Super {
        return Err(Error::Kind("sandwich_check needs (sub, super) barriers".into()));
    }
    if sub.params.matrix != sol.grid.params.matrix || sup.params.matrix != sol.grid.params.matrix {
        return Err(Error::Input("barriers and solution use different matrices".into()));
    }
    let beta_minus = sub.tail.iter().copied().fold(f64::INFINITY, f64::min);
    let beta_plus = sup.tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sup_sub = sub.tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inf_sup = sup.tail.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = sandwich_tolerance(sol.h());
    let c1 = (sup_sub - beta_minus).max(beta_plus - inf_sup) + tol;

    let per_node: Vec<(f64, f64, f64)> = (0..sol.u.len())
        .into_par_iter()
        .map(|i| {
            let s = sol.grid.s_of(i);
            let u = sol.u[i];
            (u - sub.u_of_s(s) - beta_minus, sup.u_of_s(s) + beta_plus - u, (u - s).abs())
        })
        .collect();
    let mut rep = SandwichReport {
        s_level: sol.s_level(),
        h: sol.h(),
        beta_minus,
        beta_plus,
        c1,
        tol,
        lower_margin: f64::INFINITY,
        upper_margin: f64::INFINITY,
        max_deviation: 0.0,
        worst_node: [0.0; 3],
        passed: false,
    };
    let mut worst = f64::INFINITY;
    for (i, &(lo, hi, dev)) in per_node.iter().enumerate() {
        rep.lower_margin = rep.lower_margin.min(lo);
        rep.upper_margin = rep.upper_margin.min(hi);
        rep.max_deviation = rep.max_deviation.max(dev);
        if lo.min(hi) < worst {
            worst = lo.min(hi);
            rep.worst_node = sol.grid.position(i);
        }
    }
    rep.passed = rep.lower_margin >= -tol && rep.upper_margin >= -tol && rep.max_deviation <= c1;
    Ok(rep)
}

/// Decay of `u_∞ − ½xᵀAx − c_∞` in `|x|` from the entire radial solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FarFieldFit {
    pub fit: RateFit,
    /// Fitted slope of `ln|u − quadratic − c_∞|` against `ln|x|`.
    pub slope: f64,
    /// `2 − min{β, n}`.
    pub expected_slope: f64,
    pub window: (f64, f64),
}

pub const FAR_FIELD_WINDOW: (f64, f64) = (1e1, 1e3);

/// Entire radial solution for `A = t·I` and the canonical test phase, out to `r = 1e6`.
pub fn entire_radial_solution(params: &PhaseParams, phase: &TestPhase) -> Result<RadialProfile> {
    let t = scalar_multiple(params)?;
    let forcing = ScaledTestForcing { n: params.n, t, phase: phase.clone() };
    integrate_radial(&forcing, ORACLE_R0, 1e6, 6000, OdeTolerances::default())
}

pub fn far_field_rate(params: &PhaseParams, phase: &TestPhase) -> Result<FarFieldFit> {
    let prof = entire_radial_solution(params, phase)?;
    let (lo, hi) = FAR_FIELD_WINDOW;
    let samples = 200;
    let mut x = Vec::with_capacity(samples + 1);
    let mut y = Vec::with_capacity(samples + 1);
    for k in 0..=samples {
        let r = lo * (hi / lo).powf(k as f64 / samples as f64);
        let d = prof.deviation_tail(r)?;
        x.push(r.ln());
        y.push(d.abs().ln());
    }
    let n = params.n as f64;
    let fit = fit_power_or_log(&x, &y, FAR_FIELD_WINDOW, (phase.beta - n).abs() < 0.05)?;
    Ok(FarFieldFit { slope: -fit.exponent, fit, expected_slope: 2.0 - phase.beta.min(n), window: FAR_FIELD_WINDOW })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSummary {
    pub s_level: f64,
    pub h: f64,
    pub nodes: usize,
    pub newton_iters: usize,
    pub final_residual: f64,
    /// `u_s` at the probe nodes.
    pub probe_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitStudyReport {
    pub levels: Vec<LevelSummary>,
    /// Probe radii actually used, snapped to the coarsest grid along `e₁`.
    pub probe_radii: Vec<f64>,
    /// `max over probes |u_{s_{i+1}} − u_{s_i}|`.
    pub cauchy: Vec<f64>,
    /// Whether the Cauchy differences decrease (within `10h²`).
    pub cauchy_monotone: bool,
    /// Best-fit constant between the largest-level solution and the entire radial solution.
    pub c_inf: Option<f64>,
    pub far_field: Option<FarFieldFit>,
}

/// Spacing used for a Dirichlet level: `1/16` up to level 4, `1/8` above.
pub fn default_spacing(s_level: f64) -> f64 {
    if s_level <= 4.0 {
        1.0 / 16.0
    } else {
        1.0 / 8.0
    }
}

pub fn entire_limit_study(
    params: &PhaseParams,
    phase: &TestPhase,
    s_levels: &[f64],
    probe_radii: &[f64],
    spacing: &dyn Fn(f64) -> f64,
    opts: &NewtonOptions,
) -> Result<LimitStudyReport> {
    if s_levels.is_empty() || s_levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("s_levels must be nonempty and increasing".into()));
    }
    let hs: Vec<f64> = s_levels.iter().map(|&s| spacing(s)).collect();
    let coarse = hs.iter().copied().fold(0.0, f64::max);
    let inner = (2.0 * s_levels[0] / params.an()).sqrt();
    let probes: Vec<f64> = probe_radii.iter().map(|&r| (r / coarse).round() * coarse).collect();
    if probes.iter().any(|&r| r >= inner) {
        return Err(Error::Input(format!("probe radii must lie inside the smallest domain (radius {inner})")));
    }
    let g = |x: &[f64; 3]| phase.value_at_s(params.s_of(x));
    let mut levels = Vec::new();
    for (&s_level, &h) in s_levels.iter().zip(&hs) {
        let grid = Arc::new(build_grid(params, s_level, h)?);
        let sol = newton_solve(&grid, &g, None, None, opts)?;
        let mut vals = Vec::new();
        for &r in &probes {
            let k = (r / h).round() as i32;
            let v =
                sol.value_at([k, 0, 0]).ok_or_else(|| Error::Internal(format!("probe {r} is not an interior node")))?;
            vals.push(v);
        }
        levels.push(LevelSummary {
            s_level,
            h,
            nodes: grid.len(),
            newton_iters: sol.newton_iters,
            final_residual: sol.final_residual,
            probe_values: vals,
        });
    }
    let cauchy: Vec<f64> = levels
        .windows(2)
        .map(|w| w[0].probe_values.iter().zip(&w[1].probe_values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect();
    let slack = 10.0 * coarse * coarse;
    let cauchy_monotone = cauchy.windows(2).all(|w| w[1] <= w[0] + slack);

    let (c_inf, far_field) = match scalar_multiple(params) {
        Ok(t) => {
            let prof = entire_radial_solution(params, phase)?;
            let top = levels.last().unwrap();
            let mut acc = 0.0;
            for (&r, &v) in probes.iter().zip(&top.probe_values) {
                acc += v - (0.5 * t * r * r - prof.deviation_tail(r)?);
            }
            (Some(acc / probes.len().max(1) as f64), Some(far_field_rate(params, phase)?))
        }
        Err(_) => (None, None),
    };
    Ok(LimitStudyReport { levels, probe_radii: probes, cauchy, cauchy_monotone, c_inf, far_field })
}

/// Little-endian dump: magic `LMLG`, version `u32`, three `u64` box
/// dimensions, `h`, `s_level`, then one `f64` per box node in row-major
/// `(i, j, k)` order with `NaN` outside the interior.
pub fn encode_binary(sol: &GridSolution) -> Vec<u8> {
    let grid = &sol.grid;
    let dims = grid.dims();
    let mut out = Vec::with_capacity(48 + 8 * grid.box_index.len());
    out.extend_from_slice(b"LMLG");
    out.extend_from_slice(&1u32.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&grid.h.to_le_bytes());
    out.extend_from_slice(&grid.s_level.to_le_bytes());
    for &q in &grid.box_index {
        let v = if q == BOUNDARY { f64::NAN } else { sol.u[q as usize] };
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Header and payload of [`encode_binary`].
pub fn decode_binary(bytes: &[u8]) -> Result<([usize; 3], f64, f64, Vec<f64>)> {
    let bad = || Error::Input("not an LMLG grid dump".into());
    if bytes.len() < 48 || &bytes[..4] != b"LMLG" {
        return Err(bad());
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != 1 {
        return Err(Error::Input(format!("unsupported dump version {version}")));
    }
    let dims = [u64_at(8) as usize, u64_at(16) as usize, u64_at(24) as usize];
    let h = f64::from_bits(u64_at(32));
    let s_level = f64::from_bits(u64_at(40));
    let count = dims[0] * dims[1] * dims[2];
    if bytes.len() != 48 + 8 * count {
        return Err(bad());
    }
    let values = (0..count).map(|k| f64::from_bits(u64_at(48 + 8 * k))).collect();
    Ok((dims, h, s_level, values))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::barrier::{default_w0, integrate_sub_profile, integrate_super_profile, make_barrier};
    use crate::envelope::{build_envelopes, Envelope, EnvelopeSign};

    fn identity(beta: f64) -> PhaseParams {
        PhaseParams::diagonal(&[1.0, 1.0, 1.0], beta).unwrap()
    }

    fn solve(params: &PhaseParams, phase: &TestPhase, s_level: f64, h: f64) -> GridSolution {
        let grid = Arc::new(build_grid(params, s_level, h).unwrap());
        newton_solve(&grid, &|x: &[f64; 3]| phase.value_at_s(params.s_of(x)), None, None, &NewtonOptions::default())
            .unwrap()
    }

    #[test]
    fn unit_ball_node_count() {
        let grid = build_grid(&identity(4.0), 0.5, 1.0 / 16.0).unwrap();
        let expect = 4.0 / 3.0 * PI * 16f64.powi(3);
        assert!((grid.len() as f64 / expect - 1.0).abs() < 0.1, "{} vs {expect}", grid.len());
    }

    #[test]
    fn clip_points_lie_on_the_quadric() {
        let p = PhaseParams::diagonal(&[1.0, 2.0, 3.0], 4.0).unwrap();
        let grid = build_grid(&p, 1.0, 0.1).unwrap();
        let mut checked = 0;
        for i in 0..grid.len() {
            for arm in 0..ARMS {
                if grid.neighbors[i][arm] == BOUNDARY && grid.arm_length(i, arm) < 1.0 {
                    let s = p.s_of(&grid.arm_end(i, arm));
                    assert!((s - 1.0).abs() < 1e-12, "{s}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn coarse_spacing_is_rejected() {
        assert!(matches!(build_grid(&identity(4.0), 0.5, 0.6), Err(Error::Config(_))));
    }

    #[test]
    fn stencil_is_exact_on_quadratics() {
        let m = SymmetricMatrix::from_rows(&[vec![2.0, 0.3, -0.1], vec![0.3, 1.0, 0.2], vec![-0.1, 0.2, 1.5]]).unwrap();
        let p = PhaseParams::from_matrix(m.clone(), 4.0).unwrap();
        let grid = build_grid(&p, 1.0, 0.125).unwrap();
        let u = grid.quadratic();
        for i in 0..grid.len() {
            let hm = discrete_hessian(&u, &grid, i);
            for a in 0..3 {
                for b in 0..3 {
                    assert!((hm.get(a, b) - m.get(a, b)).abs() < 1e-9, "node {i}");
                }
            }
        }
    }

    #[test]
    fn mixed_monomial() {
        let grid = build_grid(&identity(4.0), 2.0, 0.125).unwrap();
        let node = grid.node_at([2, -1, 3]).unwrap();
        let u: Vec<f64> = (0..grid.len())
            .map(|i| {
                let x = grid.position(i);
                x[0] * x[1]
            })
            .collect();
        let hm = discrete_hessian(&u, &grid, node);
        assert!((hm.get(0, 1) - 1.0).abs() < 1e-12);
        for (a, b) in [(0, 0), (1, 1), (2, 2), (0, 2), (1, 2)] {
            assert!(hm.get(a, b).abs() < 1e-12);
        }
    }

    #[test]
    fn quartic_hessian_is_second_order() {
        let quartic = |x: [f64; 3]| (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).powi(2);
        let mut errs = Vec::new();
        for h in [0.02, 0.01] {
            let grid = build_grid(&identity(4.0), 0.5, h).unwrap();
            let node = grid.node_at([(0.3 / h).round() as i32, 0, 0]).unwrap();
            let u: Vec<f64> = (0..grid.len()).map(|i| quartic(grid.position(i))).collect();
            let hm = discrete_hessian(&u, &grid, node);
            // D²|x|⁴ = 4|x|²I + 8xxᵀ at (0.3,0,0).
            let exact = [12.0 * 0.09, 4.0 * 0.09, 4.0 * 0.09];
            let err = (0..3).map(|d| (hm.get(d, d) - exact[d]).abs()).fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[1] < 1e-3);
        assert!(errs[0] / errs[1] > 3.5, "{errs:?}");
    }

    #[test]
    fn constant_phase_recovers_the_quadratic() {
        let p = identity(4.0);
        let phase = TestPhase::new(&p, 0.0, EnvelopeSign::Above);
        let sol = solve(&p, &phase, 2.0, 1.0 / 16.0);
        assert!(sol.newton_iters <= 2);
        assert!(sol.max_deviation_from_quadratic() < 1e-10);
    }

    #[test]
    fn subcritical_phase_is_rejected() {
        let p = identity(4.0);
        let grid = Arc::new(build_grid(&p, 1.0, 0.125).unwrap());
        let res = newton_solve(&grid, &|_: &[f64; 3]| 1.0, None, None, &NewtonOptions::default());
        assert!(matches!(res, Err(Error::Config(_))));
    }

    #[test]
    fn radial_oracle_for_constant_phase() {
        let p = identity(4.0);
        let phase = TestPhase::new(&p, 0.0, EnvelopeSign::Above);
        let o = radial_reduction_solve(&p, &phase, 2.0).unwrap();
        for r in [0.0, 0.5, 1.3, 2.0] {
            assert!((o.u(r) - 0.5 * r * r).abs() < 1e-12);
        }
    }

    #[test]
    fn solution_matches_radial_oracle_and_converges() {
        let p = identity(4.0);
        let phase = TestPhase::new(&p, 0.1, EnvelopeSign::Above);
        let oracle = radial_reduction_solve(&p, &phase, 2.0).unwrap();
        let mut errs = Vec::new();
        let mut sols = Vec::new();
        for h in [0.25, 0.125, 0.0625] {
            let sol = solve(&p, &phase, 2.0, h);
            assert!(sol.final_residual <= 1e-8);
            let re = residuals(&sol.grid, &sol.u, &sol.g).unwrap();
            assert!(max_abs(&re) <= 1e-8);
            let err = oracle.max_error(&sol);
            assert!(err <= 20.0 * h * h, "h = {h}: {err}");
            errs.push(err);
            sols.push(sol);
        }
        // Differences between successive grids on shared nodes.
        let diff = |a: &GridSolution, b: &GridSolution| {
            let ratio = (a.h() / b.h()).round() as i32;
            (0..a.u.len())
                .filter_map(|i| {
                    let ijk = a.grid.nodes[i];
                    b.value_at([ijk[0] * ratio, ijk[1] * ratio, ijk[2] * ratio]).map(|v| (v - a.u[i]).abs())
                })
                .fold(0.0, f64::max)
        };
        let d1 = diff(&sols[0], &sols[1]);
        let d2 = diff(&sols[1], &sols[2]);
        assert!(d1 / d2 >= 3.0, "{d1} / {d2}; oracle errors {errs:?}");
    }

    #[test]
    fn discrete_comparison() {
        let p = identity(4.0);
        let strong = TestPhase::new(&p, 0.1, EnvelopeSign::Above);
        let weak = TestPhase::new(&p, 0.1, EnvelopeSign::Below);
        let h = 0.125;
        let a = solve(&p, &strong, 2.0, h);
        let b = solve(&p, &weak, 2.0, h);
        // Larger phase, same boundary data ⇒ smaller solution.
        assert!(a.u.iter().zip(&b.u).all(|(x, y)| *x <= y + 10.0 * h * h));
        assert!(a.u.iter().zip(&b.u).any(|(x, y)| x < y));
    }

    #[test]
    fn distinct_initial_iterates_agree() {
        let p = identity(4.0);
        let phase = TestPhase::new(&p, 0.1, EnvelopeSign::TwoSided);
        let grid = Arc::new(build_grid(&p, 1.0, 0.125).unwrap());
        let g = |x: &[f64; 3]| phase.value_at_s(p.s_of(x));
        let a = newton_solve(&grid, &g, None, None, &NewtonOptions::default()).unwrap();
        let init: Vec<f64> = grid.quadratic().iter().map(|s| 0.9 * s + 0.1).collect();
        let b = newton_solve(&grid, &g, Some(init), None, &NewtonOptions::default()).unwrap();
        assert!(a.u.iter().zip(&b.u).all(|(x, y)| (x - y).abs() < 1e-7));
    }

    #[test]
    fn sandwich_holds_with_a_common_bound() {
        let p = identity(4.0);
        let phase = TestPhase::new(&p, 0.1, EnvelopeSign::TwoSided);
        let env: Arc<dyn Envelope> = Arc::new(build_envelopes(&p, 0.1, EnvelopeSign::TwoSided).unwrap());
        let sub = integrate_sub_profile(&env, &p.a, default_w0(ProfileKind::Sub, env.as_ref(), &p.a).unwrap()).unwrap();
        let sup =
            integrate_super_profile(&env, &p.a, default_w0(ProfileKind::Super, env.as_ref(), &p.a).unwrap()).unwrap();
        let (bs, bp) = (make_barrier(sub, &p).unwrap(), make_barrier(sup, &p).unwrap());
        let mut bounds = Vec::new();
        for (s_level, h) in [(1.0, 0.125), (2.0, 0.125)] {
            let sol = solve(&p, &phase, s_level, h);
            let rep = sandwich_check(&sol, &bs, &bp).unwrap();
            assert!(rep.passed, "{rep:?}");
            bounds.push(rep.c1);
        }
        assert_eq!(bounds[0], bounds[1]);
        assert!(matches!(sandwich_check(&solve(&p, &phase, 1.0, 0.125), &bp, &bs), Err(Error::Kind(_))));
    }

    #[test]
    fn far_field_rates() {
        let p = identity(4.0);
        let f4 = far_field_rate(&p, &TestPhase::new(&p, 0.1, EnvelopeSign::Above)).unwrap();
        assert!((f4.slope + 1.0).abs() < 0.15 && !f4.fit.log_flag, "{f4:?}");
        let p3 = identity(3.0);
        let f3 = far_field_rate(&p3, &TestPhase::new(&p3, 0.1, EnvelopeSign::Above)).unwrap();
        assert!(f3.fit.log_flag, "{f3:?}");
    }

    #[test]
    fn binary_round_trip() {
        let p = identity(4.0);
        let sol = solve(&p, &TestPhase::new(&p, 0.0, EnvelopeSign::Above), 1.0, 0.25);
        let bytes = encode_binary(&sol);
        let (dims, h, s, vals) = decode_binary(&bytes).unwrap();
        assert_eq!(dims, sol.grid.dims());
        assert_eq!((h, s), (0.25, 1.0));
        assert_eq!(vals.iter().filter(|v| !v.is_nan()).count(), sol.u.len());
        assert!(decode_binary(&bytes[..40]).is_err());
    }
}
