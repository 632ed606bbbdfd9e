//! Trinomial (tensor trinomial in 2D) Markov chain approximating the
//! diffusion on a bounded box. It serves as a deterministic
//! conditional-expectation engine for the backward solvers.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::DiffusionSpec;

/// Uniform box `lo + j·dx`, `j = 0..n`, per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeBox {
    pub lo: Vec<f64>,
    pub dx: Vec<f64>,
    pub n: Vec<usize>,
}

impl LatticeBox {
    /// Box spanning `[lo, hi]` per axis with `n` nodes per axis.
    pub fn spanning(lo: &[f64], hi: &[f64], n: &[usize]) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != n.len() || lo.is_empty() {
            return Err(Error::invalid("lattice box: mismatched axis counts"));
        }
        let mut dx = Vec::with_capacity(lo.len());
        for i in 0..lo.len() {
            if n[i] < 3 || !(hi[i] > lo[i]) {
                return Err(Error::invalid("lattice box needs hi > lo and at least 3 nodes per axis"));
            }
            dx.push((hi[i] - lo[i]) / (n[i] - 1) as f64);
        }
        Ok(LatticeBox { lo: lo.to_vec(), dx, n: n.to_vec() })
    }

    /// Box centred on `center` (which becomes a node) with spacing `dx`,
    /// covering at least `center ± half_width`.
    pub fn centered(center: &[f64], half_width: &[f64], dx: &[f64]) -> Result<Self> {
        let mut lo = Vec::new();
        let mut n = Vec::new();
        for i in 0..center.len() {
            if !(dx[i] > 0.0) || !(half_width[i] > 0.0) {
                return Err(Error::invalid("lattice box: spacing and width must be positive"));
            }
            let m = (half_width[i] / dx[i]).ceil().max(1.0) as usize;
            lo.push(center[i] - m as f64 * dx[i]);
            n.push(2 * m + 1);
        }
        Ok(LatticeBox { lo, dx: dx.to_vec(), n })
    }

    /// `center ± 6√(Λ T)` with spacing chosen so that `Λ·Δt/Δx² = ratio`.
    pub fn default_for(spec: &DiffusionSpec, grid: &TimeGrid, center: &[f64], ratio: f64) -> Result<Self> {
        let lam = spec.lambda_hi();
        let hw = 6.0 * (lam * (grid.horizon() - grid.t0())).sqrt();
        let dx = (lam * grid.max_dt() / ratio).sqrt();
        Self::centered(center, &vec![hw; center.len()], &vec![dx; center.len()])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n.iter().product()
    }

    pub fn hi(&self, axis: usize) -> f64 {
        self.lo[axis] + (self.n[axis] - 1) as f64 * self.dx[axis]
    }
}

/// One backward step: row `i` has `width` entries `(col, weight, ΔB surrogate)`.
#[derive(Debug, Clone)]
pub struct StepKernel {
    width: usize,
    dim: usize,
    cols: Vec<u32>,
    weights: Vec<f64>,
    db: Vec<f64>,
}

impl StepKernel {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64, &[f64])> + '_ {
        let w = self.width;
        let d = self.dim;
        (i * w..(i + 1) * w).map(move |e| (self.cols[e] as usize, self.weights[e], &self.db[e * d..(e + 1) * d]))
    }

    pub fn n_rows(&self) -> usize {
        self.weights.len() / self.width
    }
}

#[derive(Debug, Clone)]
pub struct MarkovLattice {
    grid: TimeGrid,
    bx: LatticeBox,
    nodes: Vec<f64>,
    steps: Vec<Arc<StepKernel>>,
}

/// Per-axis trinomial weights `(down, stay, up)` and ΔB surrogates.
fn trinomial(a: f64, mu: f64, dt: f64, dx: f64) -> ([f64; 3], [f64; 3]) {
    let s = a * dt / (dx * dx);
    let m = mu * dt / dx;
    let w = [0.5 * (s - m), 1.0 - s, 0.5 * (s + m)];
    let sig = a.sqrt();
    let db = [(-dx - mu * dt) / sig, (-mu * dt) / sig, (dx - mu * dt) / sig];
    (w, db)
}

fn kernel_for_step(spec: &DiffusionSpec, bx: &LatticeBox, nodes: &[f64], t: f64, dt: f64) -> Result<StepKernel> {
    let d = bx.dim();
    let n_nodes = bx.n_nodes();
    let width = 3usize.pow(d as u32);
    let rows: Vec<Result<(Vec<u32>, Vec<f64>, Vec<f64>)>> = (0..n_nodes)
        .into_par_iter()
        .map(|i| {
            let x = &nodes[i * d..(i + 1) * d];
            let a = spec.a_at(t, x);
            let mut mu = vec![0.0; d];
            spec.ito_drift_into(t, x, &mut mu);
            if d == 2 && a[1].abs() > 1e-14 * (1.0 + a[0].abs()) {
                return Err(Error::invalid("2D lattice requires a diagonal diffusion matrix"));
            }
            let mut axis_w = Vec::with_capacity(d);
            let mut axis_db = Vec::with_capacity(d);
            // multi-index of this node
            let mut idx = vec![0usize; d];
            let mut rem = i;
            for ax in (0..d).rev() {
                idx[ax] = rem % bx.n[ax];
                rem /= bx.n[ax];
            }
            for ax in 0..d {
                let aii = a[ax * d + ax];
                if !(aii > 0.0) {
                    return Err(Error::Decomposition { t, x: x.to_vec() });
                }
                let dx = bx.dx[ax];
                let ratio = aii * dt / (dx * dx);
                if ratio > 1.0 + 1e-12 {
                    return Err(Error::Cfl { ratio, required_steps: 0 });
                }
                if mu[ax].abs() * dx > aii * (1.0 + 1e-12) {
                    return Err(Error::Peclet { dx, x: x.to_vec(), lhs: mu[ax].abs() * dx, a: aii });
                }
                let (mut w, db) = trinomial(aii, mu[ax], dt, dx);
                // boundary nodes keep the mass that would leave the box
                if idx[ax] == 0 {
                    w[1] += w[0];
                    w[0] = 0.0;
                }
                if idx[ax] + 1 == bx.n[ax] {
                    w[1] += w[2];
                    w[2] = 0.0;
                }
                for v in w.iter_mut() {
                    if *v < 0.0 && *v > -1e-15 {
                        *v = 0.0;
                    }
                }
                axis_w.push(w);
                axis_db.push(db);
            }
            let mut cols = Vec::with_capacity(width);
            let mut ws = Vec::with_capacity(width);
            let mut dbs = Vec::with_capacity(width * d);
            for e in 0..width {
                let mut col = 0usize;
                let mut weight = 1.0;
                let mut rem = e;
                let mut moves = vec![0usize; d];
                for ax in (0..d).rev() {
                    moves[ax] = rem % 3;
                    rem /= 3;
                }
                for ax in 0..d {
                    let j = (idx[ax] as isize + moves[ax] as isize - 1).clamp(0, bx.n[ax] as isize - 1) as usize;
                    col = col * bx.n[ax] + j;
                    weight *= axis_w[ax][moves[ax]];
                    dbs.push(axis_db[ax][moves[ax]]);
                }
                cols.push(col as u32);
                ws.push(weight);
            }
            Ok((cols, ws, dbs))
        })
        .collect();
    let mut cols = Vec::with_capacity(n_nodes * width);
    let mut weights = Vec::with_capacity(n_nodes * width);
    let mut db = Vec::with_capacity(n_nodes * width * d);
    for r in rows {
        let (c, w, b) = r?;
        cols.extend(c);
        weights.extend(w);
        db.extend(b);
    }
    Ok(StepKernel { width, dim: d, cols, weights, db })
}

/// Builds the lattice; fails with the number of time steps needed when the
/// CFL condition `a·Δt/Δx² ≤ 1` is violated.
pub fn build_lattice(spec: &DiffusionSpec, grid: &TimeGrid, bx: &LatticeBox) -> Result<MarkovLattice> {
    let d = spec.dim();
    if d > 2 {
        return Err(Error::invalid("lattice supports dimension 1 or 2"));
    }
    if bx.dim() != d {
        return Err(Error::invalid("lattice box dimension differs from the diffusion"));
    }
    let n_nodes = bx.n_nodes();
    if n_nodes > u32::MAX as usize {
        return Err(Error::invalid("lattice too large"));
    }
    let mut nodes = Vec::with_capacity(n_nodes * d);
    for i in 0..n_nodes {
        let mut rem = i;
        let mut x = vec![0.0; d];
        for ax in (0..d).rev() {
            x[ax] = bx.lo[ax] + (rem % bx.n[ax]) as f64 * bx.dx[ax];
            rem /= bx.n[ax];
        }
        nodes.extend(x);
    }

    // CFL pre-check over all nodes and steps to report the required step count.
    let mut worst_ratio: f64 = 0.0;
    let homogeneous = spec.is_time_homogeneous() && grid.is_uniform();
    let check_steps: Vec<usize> = if homogeneous { vec![0] } else { (0..grid.n_steps()).collect() };
    for &k in &check_steps {
        let t = grid.time(k);
        let dt = grid.dt(k);
        for i in 0..n_nodes {
            let a = spec.a_at(t, &nodes[i * d..(i + 1) * d]);
            for ax in 0..d {
                worst_ratio = worst_ratio.max(a[ax * d + ax] * dt / (bx.dx[ax] * bx.dx[ax]));
            }
        }
    }
    if worst_ratio > 1.0 + 1e-12 {
        let required_steps = (grid.n_steps() as f64 * worst_ratio).ceil() as usize;
        return Err(Error::Cfl { ratio: worst_ratio, required_steps });
    }

    let mut steps = Vec::with_capacity(grid.n_steps());
    if homogeneous {
        let kern = Arc::new(kernel_for_step(spec, bx, &nodes, grid.t0(), grid.dt(0))?);
        steps.resize(grid.n_steps(), kern);
    } else {
        for k in 0..grid.n_steps() {
            steps.push(Arc::new(kernel_for_step(spec, bx, &nodes, grid.time(k), grid.dt(k))?));
        }
    }
    Ok(MarkovLattice { grid: grid.clone(), bx: bx.clone(), nodes, steps })
}

impl MarkovLattice {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn lattice_box(&self) -> &LatticeBox {
        &self.bx
    }
    pub fn dim(&self) -> usize {
        self.bx.dim()
    }
    pub fn n_nodes(&self) -> usize {
        self.bx.n_nodes()
    }
    pub fn node(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.nodes[i * d..(i + 1) * d]
    }
    pub fn kernel(&self, k: usize) -> &StepKernel {
        &self.steps[k]
    }
    /// Smallest spacing over axes.
    pub fn dx(&self) -> f64 {
        self.bx.dx.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Index of the node nearest to `x`.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut idx = 0usize;
        for ax in 0..self.dim() {
            let j = ((x[ax] - self.bx.lo[ax]) / self.bx.dx[ax]).round();
            let j = (j.max(0.0) as usize).min(self.bx.n[ax] - 1);
            idx = idx * self.bx.n[ax] + j;
        }
        idx
    }

    /// `E[v(X_{k+1}) | X_k = node]` and `E[v(X_{k+1}) ΔB_k | X_k = node] / Δt_k`.
    pub fn conditional(&self, k: usize, next: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let dt = self.grid.dt(k);
        let kern = &self.steps[k];
        let rows: Vec<(f64, Vec<f64>)> = (0..self.n_nodes())
            .into_par_iter()
            .map(|i| {
                let mut mean = 0.0;
                let mut z = vec![0.0; d];
                for (c, w, db) in kern.row(i) {
                    let v = w * next[c];
                    mean += v;
                    for (zc, b) in z.iter_mut().zip(db) {
                        *zc += v * b;
                    }
                }
                z.iter_mut().for_each(|v| *v /= dt);
                (mean, z)
            })
            .collect();
        let mut means = Vec::with_capacity(rows.len());
        let mut zs = Vec::with_capacity(rows.len() * d);
        for (m, z) in rows {
            means.push(m);
            zs.extend(z);
        }
        (means, zs)
    }

    /// Pushes a distribution at node `k` forward one step.
    pub fn propagate(&self, k: usize, dist: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; dist.len()];
        let kern = &self.steps[k];
        for (i, &p) in dist.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (c, w, _) in kern.row(i) {
                out[c] += p * w;
            }
        }
        out
    }

    /// Marginal laws of the chain started at node `start` at `τ_0`, one per time node.
    pub fn marginals(&self, start: usize) -> Vec<Vec<f64>> {
        let mut cur = vec![0.0; self.n_nodes()];
        cur[start] = 1.0;
        let mut out = Vec::with_capacity(self.grid.n_steps() + 1);
        out.push(cur.clone());
        for k in 0..self.grid.n_steps() {
            cur = self.propagate(k, &cur);
            out.push(cur.clone());
        }
        out
    }

    /// Dense transition matrix over steps `k0..k1` (small lattices only).
    pub fn compose(&self, k0: usize, k1: usize) -> DMatrix<f64> {
        let n = self.n_nodes();
        let mut m = DMatrix::<f64>::identity(n, n);
        for k in k0..k1 {
            let mut p = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for (c, w, _) in self.steps[k].row(i) {
                    p[(i, c)] += w;
                }
            }
            m *= p;
        }
        m
    }

    /// Per-node first moments `E[Σ_{j<k} d_j(X_j); X_k = ·]` and second moments,
    /// returned as `(E[D_k], E[D_k²])` for every node `k` of the chain started at `start`.
    pub fn additive_moments(&self, start: usize, increments: &[Vec<f64>]) -> Vec<(f64, f64)> {
        let n = self.n_nodes();
        let mut pi = vec![0.0; n];
        pi[start] = 1.0;
        let mut m1 = vec![0.0; n];
        let mut m2 = vec![0.0; n];
        let mut out = vec![(0.0, 0.0)];
        for k in 0..self.grid.n_steps() {
            let inc = &increments[k];
            let kern = &self.steps[k];
            let mut p_next = vec![0.0; n];
            let mut m1_next = vec![0.0; n];
            let mut m2_next = vec![0.0; n];
            for i in 0..n {
                if pi[i] == 0.0 && m1[i] == 0.0 && m2[i] == 0.0 {
                    continue;
                }
                let d = inc[i];
                let a1 = m1[i] + d * pi[i];
                let a2 = m2[i] + 2.0 * d * m1[i] + d * d * pi[i];
                for (c, w, _) in kern.row(i) {
                    p_next[c] += w * pi[i];
                    m1_next[c] += w * a1;
                    m2_next[c] += w * a2;
                }
            }
            pi = p_next;
            m1 = m1_next;
            m2 = m2_next;
            out.push((m1.iter().sum(), m2.iter().sum()));
        }
        out
    }
}
