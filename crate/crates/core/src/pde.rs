//! Implicit finite differences for `∂_t u + L u + f(u, σᵀ∇u) + g(u) q = 0`,
//! the obstacle problem `min(u − h, −∂_t u − L u − f) = 0`, and the
//! homographic sequence `∂_t u_n + L u_n + f = −Φ⁻/(1 + n|u_n − h|)`.
//!
//! `L v = ½ δ(a δv) + b δv` with `a` at half nodes (1D, or 2D with diagonal
//! `a`). Boundary nodes carry no spatial operator.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gbsde::solve_increasing;
use crate::grid::{weight_eval, TimeGrid, WeightSpec};
use crate::model::{DiffusionSpec, DriverSpec, MeasureData, ScalarFn};

const NEWTON_MAX: u32 = 80;
const SWEEP_MAX: u32 = 50_000;

#[derive(Debug, Clone)]
pub struct SpaceTimeGrid {
    pub time: TimeGrid,
    lo: Vec<f64>,
    dx: f64,
    n: Vec<usize>,
}

impl SpaceTimeGrid {
    /// Nodes `lo + i·dx` covering `[lo, hi]` in every dimension.
    pub fn new(time: TimeGrid, lo: &[f64], hi: &[f64], dx: f64) -> Result<Self> {
        let d = lo.len();
        if d == 0 || d > 2 || hi.len() != d {
            return Err(Error::invalid("space grids are 1D or 2D"));
        }
        if !(dx > 0.0) || !dx.is_finite() {
            return Err(Error::invalid(format!("Δx must be positive, got {dx}")));
        }
        let mut n = Vec::with_capacity(d);
        for j in 0..d {
            if !(hi[j] > lo[j]) {
                return Err(Error::invalid(format!("empty box in dimension {j}")));
            }
            let cells = ((hi[j] - lo[j]) / dx - 1e-9).ceil().max(2.0) as usize;
            n.push(cells + 1);
        }
        Ok(SpaceTimeGrid { time, lo: lo.to_vec(), dx, n })
    }

    pub fn centered(time: TimeGrid, center: &[f64], half_width: &[f64], dx: f64) -> Result<Self> {
        let lo: Vec<f64> = center.iter().zip(half_width).map(|(c, h)| c - h).collect();
        let hi: Vec<f64> = center.iter().zip(half_width).map(|(c, h)| c + h).collect();
        Self::new(time, &lo, &hi, dx)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn shape(&self) -> &[usize] {
        &self.n
    }
    pub fn lo(&self) -> &[f64] {
        &self.lo
    }
    pub fn hi(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.n).map(|(l, n)| l + (*n - 1) as f64 * self.dx).collect()
    }
    pub fn n_nodes(&self) -> usize {
        self.n.iter().product()
    }
    fn stride(&self, j: usize) -> usize {
        self.n[..j].iter().product()
    }
    fn multi(&self, i: usize) -> [usize; 2] {
        let mut m = [0; 2];
        let mut r = i;
        for j in 0..self.dim() {
            m[j] = r % self.n[j];
            r /= self.n[j];
        }
        m
    }
    pub fn node(&self, i: usize) -> Vec<f64> {
        let m = self.multi(i);
        (0..self.dim()).map(|j| self.lo[j] + m[j] as f64 * self.dx).collect()
    }
    pub fn is_boundary(&self, i: usize) -> bool {
        let m = self.multi(i);
        (0..self.dim()).any(|j| m[j] == 0 || m[j] + 1 == self.n[j])
    }
    pub fn contains(&self, x: &[f64]) -> bool {
        let hi = self.hi();
        x.len() == self.dim() && (0..self.dim()).all(|j| x[j] >= self.lo[j] - 1e-12 && x[j] <= hi[j] + 1e-12)
    }
    /// Cell volume `Δx^d`.
    pub fn cell(&self) -> f64 {
        self.dx.powi(self.dim() as i32)
    }
}

/// Per-layer discrete operator.
struct Stencil {
    d: usize,
    strides: [usize; 2],
    dx: f64,
    wm: Vec<f64>,
    wp: Vec<f64>,
    sigma: Vec<f64>,
    boundary: Vec<bool>,
}

impl Stencil {
    fn build(grid: &SpaceTimeGrid, spec: &DiffusionSpec, t: f64, xs: &[f64]) -> Result<Stencil> {
        let d = grid.dim();
        if spec.dim() != d {
            return Err(Error::Mismatch(format!("diffusion dimension {} vs grid dimension {d}", spec.dim())));
        }
        let m = grid.n_nodes();
        let dx = grid.dx;
        let mut wm = vec![0.0; m * d];
        let mut wp = vec![0.0; m * d];
        let mut sigma = vec![0.0; m * d * d];
        let mut boundary = vec![false; m];
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        let mut xh = vec![0.0; d];
        for i in 0..m {
            let x = &xs[i * d..(i + 1) * d];
            boundary[i] = grid.is_boundary(i);
            spec.sigma_into(t, x, &mut sigma[i * d * d..(i + 1) * d * d])?;
            if boundary[i] {
                continue;
            }
            spec.a_into(t, x, &mut a);
            if d == 2 && a[1].abs() > 1e-12 {
                return Err(Error::invalid("2D grids need a diagonal diffusion matrix"));
            }
            spec.b_into(t, x, &mut b);
            for j in 0..d {
                xh.copy_from_slice(x);
                xh[j] = x[j] - 0.5 * dx;
                spec.a_into(t, &xh, &mut a);
                let am = a[j * d + j];
                xh[j] = x[j] + 0.5 * dx;
                spec.a_into(t, &xh, &mut a);
                let ap = a[j * d + j];
                let lo = am / (2.0 * dx * dx) - b[j] / (2.0 * dx);
                let hi = ap / (2.0 * dx * dx) + b[j] / (2.0 * dx);
                if lo < 0.0 || hi < 0.0 {
                    return Err(Error::Peclet { dx, x: x.to_vec(), lhs: b[j].abs() * dx, a: am.min(ap) });
                }
                wm[i * d + j] = lo;
                wp[i * d + j] = hi;
            }
        }
        let mut strides = [1, 1];
        for (j, s) in strides.iter_mut().enumerate().take(d) {
            *s = grid.stride(j);
        }
        Ok(Stencil { d, strides, dx, wm, wp, sigma, boundary })
    }

    fn lu(&self, u: &[f64], i: usize) -> f64 {
        if self.boundary[i] {
            return 0.0;
        }
        (0..self.d)
            .map(|j| {
                let s = self.strides[j];
                self.wm[i * self.d + j] * (u[i - s] - u[i]) + self.wp[i * self.d + j] * (u[i + s] - u[i])
            })
            .sum()
    }

    fn off_sum(&self, u: &[f64], i: usize) -> (f64, f64) {
        let mut nb = 0.0;
        let mut w = 0.0;
        for j in 0..self.d {
            let s = self.strides[j];
            nb += self.wm[i * self.d + j] * u[i - s] + self.wp[i * self.d + j] * u[i + s];
            w += self.wm[i * self.d + j] + self.wp[i * self.d + j];
        }
        (nb, w)
    }

    /// `σᵀ∇u` by central differences; zero on the boundary.
    fn z_into(&self, u: &[f64], i: usize, out: &mut [f64]) {
        out.fill(0.0);
        if self.boundary[i] {
            return;
        }
        let d = self.d;
        for l in 0..d {
            let s = self.strides[l];
            let g = (u[i + s] - u[i - s]) / (2.0 * self.dx);
            for j in 0..d {
                out[j] += self.sigma[i * d * d + l * d + j] * g;
            }
        }
    }
}

/// Central differences inside, one-sided on the boundary.
fn gradient(grid: &SpaceTimeGrid, u: &[f64]) -> Vec<f64> {
    let d = grid.dim();
    let mut g = vec![0.0; u.len() * d];
    for i in 0..u.len() {
        let m = grid.multi(i);
        for j in 0..d {
            let s = grid.stride(j);
            let (a, b, w) = if m[j] == 0 {
                (i, i + s, grid.dx)
            } else if m[j] + 1 == grid.n[j] {
                (i - s, i, grid.dx)
            } else {
                (i - s, i + s, 2.0 * grid.dx)
            };
            g[i * d + j] = (u[b] - u[a]) / w;
        }
    }
    g
}

#[derive(Clone, Copy)]
enum Constraint<'a> {
    Free,
    Projected { h: &'a [f64] },
    Homographic { h: &'a [f64], phim: &'a [f64], n: f64 },
}

/// Data for one backward layer `k`.
struct Layer<'a> {
    t: f64,
    dt: f64,
    xs: &'a [f64],
    q: &'a [f64],
    c: &'a [f64],
    st: &'a Stencil,
    driver: &'a DriverSpec,
}

fn dstep(v: f64) -> f64 {
    1e-7 * (1.0 + v.abs())
}

impl Layer<'_> {
    fn x(&self, i: usize) -> &[f64] {
        let d = self.st.d;
        &self.xs[i * d..(i + 1) * d]
    }

    /// Source `f + g q + extra` at node `i` for value `v` and gradient term `z`.
    fn source(&self, i: usize, v: f64, z: &[f64], con: Constraint) -> f64 {
        let x = self.x(i);
        let mut s = (self.driver.f)(self.t, x, v, z) + (self.driver.g)(self.t, x, v) * self.q[i];
        if let Constraint::Homographic { h, phim, n } = con {
            s += phim[i] / (1.0 + n * (v - h[i]).max(0.0));
        }
        s
    }

    fn residual(&self, u: &[f64], i: usize, con: Constraint, z: &mut [f64]) -> f64 {
        self.st.z_into(u, i, z);
        u[i] - self.dt * self.st.lu(u, i) - self.dt * self.source(i, u[i], z, con) - self.c[i]
    }
}

fn thomas(lower: &[f64], diag: &mut [f64], upper: &[f64], rhs: &mut [f64]) -> bool {
    let m = diag.len();
    for i in 1..m {
        if diag[i - 1] == 0.0 {
            return false;
        }
        let w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    if diag[m - 1] == 0.0 {
        return false;
    }
    rhs[m - 1] /= diag[m - 1];
    for i in (0..m - 1).rev() {
        rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
    }
    true
}

/// Damped (semismooth for the obstacle) Newton on a 1D layer.
fn newton_1d(ly: &Layer, u: &mut [f64], con: Constraint, layer: usize) -> Result<u32> {
    let m = u.len();
    let dt = ly.dt;
    let scale = 1.0 + ly.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-15 * scale;
    let mut z = [0.0; 1];
    let merit = |u: &[f64], z: &mut [f64]| -> f64 {
        (0..m)
            .map(|i| {
                let r = ly.residual(u, i, con, z);
                match con {
                    Constraint::Projected { h } => r.min(u[i] - h[i]).abs(),
                    _ => r.abs(),
                }
            })
            .fold(0.0, f64::max)
    };
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let mut current = merit(u, &mut z);
    for it in 0..NEWTON_MAX {
        if current <= tol {
            return Ok(it);
        }
        for i in 0..m {
            let r = ly.residual(u, i, con, &mut z);
            if let Constraint::Projected { h } = con {
                if u[i] - h[i] <= r {
                    lower[i] = 0.0;
                    upper[i] = 0.0;
                    diag[i] = 1.0;
                    rhs[i] = -(u[i] - h[i]);
                    continue;
                }
            }
            let v = u[i];
            let e = dstep(v);
            let sy = (ly.source(i, v + e, &z, con) - ly.source(i, v - e, &z, con)) / (2.0 * e);
            rhs[i] = -r;
            if ly.st.boundary[i] {
                lower[i] = 0.0;
                upper[i] = 0.0;
                diag[i] = 1.0 - dt * sy;
                continue;
            }
            let ez = dstep(z[0]);
            let x = ly.x(i);
            let fz = ((ly.driver.f)(ly.t, x, v, &[z[0] + ez]) - (ly.driver.f)(ly.t, x, v, &[z[0] - ez])) / (2.0 * ez);
            let sg = ly.st.sigma[i] * fz / (2.0 * ly.st.dx);
            let (wm, wp) = (ly.st.wm[i], ly.st.wp[i]);
            lower[i] = -dt * wm + dt * sg;
            upper[i] = -dt * wp - dt * sg;
            diag[i] = 1.0 + dt * (wm + wp) - dt * sy;
        }
        if !thomas(&lower, &mut diag, &upper, &mut rhs) {
            return Err(Error::NewtonDivergence { layer });
        }
        let mut lambda = 1.0;
        let base = u.to_vec();
        loop {
            for i in 0..m {
                u[i] = base[i] + lambda * rhs[i];
            }
            let next = merit(u, &mut z);
            if next >= current && current <= 1e2 * tol {
                // stagnation at roundoff level
                u.copy_from_slice(&base);
                return Ok(it + 1);
            }
            if next < current || lambda < 1e-6 {
                if !next.is_finite() {
                    return Err(Error::NewtonDivergence { layer });
                }
                current = next;
                break;
            }
            lambda *= 0.5;
        }
    }
    if current <= tol * 1e2 {
        Ok(NEWTON_MAX)
    } else {
        Err(Error::NewtonDivergence { layer })
    }
}

/// Nonlinear Gauss–Seidel: scalar solve per node, projected when constrained.
fn sweeps(ly: &Layer, u: &mut [f64], con: Constraint, layer: usize) -> Result<u32> {
    let m = u.len();
    let d = ly.st.d;
    let dt = ly.dt;
    let mut z = vec![0.0; d];
    for sweep in 0..SWEEP_MAX {
        let mut change: f64 = 0.0;
        let mut size: f64 = 0.0;
        for i in 0..m {
            ly.st.z_into(u, i, &mut z);
            let (nb, w) = if ly.st.boundary[i] { (0.0, 0.0) } else { ly.st.off_sum(u, i) };
            let g = |v: f64| v * (1.0 + dt * w) - dt * nb - dt * ly.source(i, v, &z, con) - ly.c[i];
            let (mut v, _) = solve_increasing(g, u[i]).ok_or(Error::NewtonDivergence { layer })?;
            if let Constraint::Projected { h } = con {
                v = v.max(h[i]);
            }
            change = change.max((v - u[i]).abs());
            size = size.max(v.abs());
            u[i] = v;
        }
        if change <= 1e-12 * (1.0 + size) {
            return Ok(sweep + 1);
        }
    }
    Err(Error::NewtonDivergence { layer })
}

fn solve_layer(ly: &Layer, u: &mut [f64], con: Constraint, layer: usize) -> Result<u32> {
    if ly.st.d == 1 {
        let start = u.to_vec();
        newton_1d(ly, u, con, layer).or_else(|_| {
            // semismooth Newton can cycle on the kink of large-n homographic terms
            u.copy_from_slice(&start);
            sweeps(ly, u, con, layer).map(|s| s + NEWTON_MAX)
        })
    } else {
        sweeps(ly, u, con, layer)
    }
}

/// One homographic member: `μ_n = Φ⁻/(1 + n|u_n − h|)` and `u_n`.
#[derive(Debug, Clone)]
pub struct HomographicMember {
    pub n: f64,
    pub mu: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct PDESolution {
    pub grid: SpaceTimeGrid,
    /// `u[k][node]`.
    pub u: Vec<Vec<f64>>,
    /// `grad_u[k][node·d + j]`.
    pub grad_u: Vec<Vec<f64>>,
    /// Reaction density on layers `k < N` (obstacle modes).
    pub reaction: Option<Vec<Vec<f64>>>,
    /// Barrier on every layer (obstacle modes).
    pub obstacle: Option<Vec<Vec<f64>>>,
    /// Discrete `Φ⁻` on layers `k < N` (obstacle modes).
    pub phi_minus: Option<Vec<Vec<f64>>>,
    pub mu_n_sequence: Vec<HomographicMember>,
    pub newton_iterations: u32,
}

struct Prepared {
    xs: Vec<f64>,
    stencils: Vec<Stencil>,
}

fn prepare(grid: &SpaceTimeGrid, spec: &DiffusionSpec) -> Result<Prepared> {
    let d = grid.dim();
    let m = grid.n_nodes();
    let mut xs = Vec::with_capacity(m * d);
    for i in 0..m {
        xs.extend(grid.node(i));
    }
    let nt = grid.time.n_steps();
    let stencils = if spec.is_time_homogeneous() {
        vec![Stencil::build(grid, spec, grid.time.t0(), &xs)?]
    } else {
        (0..nt).map(|k| Stencil::build(grid, spec, grid.time.time(k), &xs)).collect::<Result<_>>()?
    };
    Ok(Prepared { xs, stencils })
}

impl Prepared {
    fn stencil(&self, k: usize) -> &Stencil {
        if self.stencils.len() == 1 {
            &self.stencils[0]
        } else {
            &self.stencils[k]
        }
    }
}

fn terminal(grid: &SpaceTimeGrid, driver: &DriverSpec) -> Vec<f64> {
    (0..grid.n_nodes()).map(|i| (driver.phi)(&grid.node(i))).collect()
}

fn densities(grid: &SpaceTimeGrid, prep: &Prepared, mu: &MeasureData, k: usize) -> Result<Vec<f64>> {
    let d = grid.dim();
    let t = grid.time.time(k);
    (0..grid.n_nodes())
        .map(|i| {
            let x = &prep.xs[i * d..(i + 1) * d];
            let q = mu.density_at(t, x);
            if q >= 0.0 {
                Ok(q)
            } else {
                Err(Error::NegativeDensity { t, x: x.to_vec(), value: q })
            }
        })
        .collect()
}

fn run(
    grid: &SpaceTimeGrid,
    prep: &Prepared,
    driver: &DriverSpec,
    mu: &MeasureData,
    mode: Mode,
) -> Result<(Vec<Vec<f64>>, u32)> {
    let nt = grid.time.n_steps();
    let mut u = vec![Vec::new(); nt + 1];
    u[nt] = terminal(grid, driver);
    let mut iters = 0;
    for k in (0..nt).rev() {
        let q = densities(grid, prep, mu, k)?;
        let ly = Layer {
            t: grid.time.time(k),
            dt: grid.time.dt(k),
            xs: &prep.xs,
            q: &q,
            c: &u[k + 1],
            st: prep.stencil(k),
            driver,
        };
        let mut v = u[k + 1].clone();
        if let Mode::Projected { h } = mode {
            for (a, b) in v.iter_mut().zip(&h[k]) {
                *a = a.max(*b);
            }
        }
        let con = match mode {
            Mode::Free => Constraint::Free,
            Mode::Projected { h } => Constraint::Projected { h: &h[k] },
            Mode::Homographic { h, phim, n } => {
                // start above the maximal solution: unconstrained step plus Φ⁻Δt
                iters = iters.max(solve_layer(&ly, &mut v, Constraint::Free, k)?);
                for (a, p) in v.iter_mut().zip(&phim[k]) {
                    *a += p * ly.dt;
                }
                Constraint::Homographic { h: &h[k], phim: &phim[k], n }
            }
        };
        iters = iters.max(solve_layer(&ly, &mut v, con, k)?);
        u[k] = v;
    }
    Ok((u, iters))
}

#[derive(Clone, Copy)]
enum Mode<'a> {
    Free,
    Projected { h: &'a [Vec<f64>] },
    Homographic { h: &'a [Vec<f64>], phim: &'a [Vec<f64>], n: f64 },
}

fn finish(grid: &SpaceTimeGrid, u: Vec<Vec<f64>>, iters: u32) -> PDESolution {
    let grad_u = u.iter().map(|l| gradient(grid, l)).collect();
    PDESolution {
        grid: grid.clone(),
        u,
        grad_u,
        reaction: None,
        obstacle: None,
        phi_minus: None,
        mu_n_sequence: Vec::new(),
        newton_iterations: iters,
    }
}

pub fn solve_parabolic_measure(grid: &SpaceTimeGrid, spec: &DiffusionSpec, driver: &DriverSpec, mu: &MeasureData) -> Result<PDESolution> {
    let prep = prepare(grid, spec)?;
    let (u, it) = run(grid, &prep, driver, mu, Mode::Free)?;
    Ok(finish(grid, u, it))
}

fn barrier(grid: &SpaceTimeGrid, h: &ScalarFn) -> Vec<Vec<f64>> {
    (0..=grid.time.n_steps())
        .map(|k| {
            let t = grid.time.time(k);
            (0..grid.n_nodes()).map(|i| h(t, &grid.node(i))).collect()
        })
        .collect()
}

fn check_terminal(grid: &SpaceTimeGrid, u_t: &[f64], h_t: &[f64]) -> Result<()> {
    for i in 0..u_t.len() {
        if u_t[i] < h_t[i] - 1e-12 * (1.0 + h_t[i].abs()) {
            return Err(Error::invalid(format!(
                "terminal value {} below the barrier {} at x={:?}",
                u_t[i],
                h_t[i],
                grid.node(i)
            )));
        }
    }
    Ok(())
}

/// Discrete `D_k[v] = (v_{k+1} − v_k)/Δt + L v_k + f(v_k, σᵀ∇v_k)` on layers `k < N`.
fn discrete_residual(grid: &SpaceTimeGrid, prep: &Prepared, driver: &DriverSpec, v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = grid.dim();
    (0..grid.time.n_steps())
        .into_par_iter()
        .map(|k| {
            let st = prep.stencil(k);
            let t = grid.time.time(k);
            let dt = grid.time.dt(k);
            let mut z = vec![0.0; d];
            (0..grid.n_nodes())
                .map(|i| {
                    st.z_into(&v[k], i, &mut z);
                    let x = &prep.xs[i * d..(i + 1) * d];
                    (v[k + 1][i] - v[k][i]) / dt + st.lu(&v[k], i) + (driver.f)(t, x, v[k][i], &z)
                })
                .collect()
        })
        .collect()
}

/// LCP per layer; the reaction is `−D_k[u] ≥ 0` on the active set, zero elsewhere.
pub fn solve_obstacle_projected(grid: &SpaceTimeGrid, spec: &DiffusionSpec, driver: &DriverSpec, h: &ScalarFn) -> Result<PDESolution> {
    let prep = prepare(grid, spec)?;
    let hv = barrier(grid, h);
    let nt = grid.time.n_steps();
    check_terminal(grid, &terminal(grid, driver), &hv[nt])?;
    let (u, it) = run(grid, &prep, driver, &MeasureData::zero(), Mode::Projected { h: &hv })?;
    // multiplier of the complementarity problem: zero off the active set
    let reaction = discrete_residual(grid, &prep, driver, &u)
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            r.into_iter()
                .enumerate()
                .map(|(i, v)| if (u[k][i] - hv[k][i]).abs() <= 1e-13 * (1.0 + hv[k][i].abs()) { -v } else { 0.0 })
                .collect()
        })
        .collect();
    let phim = discrete_residual(grid, &prep, driver, &hv)
        .into_iter()
        .map(|r| r.into_iter().map(|v| (-v).max(0.0)).collect())
        .collect();
    let mut sol = finish(grid, u, it);
    sol.reaction = Some(reaction);
    sol.obstacle = Some(hv);
    sol.phi_minus = Some(phim);
    Ok(sol)
}

/// Homographic sequence over increasing `n_list`; `u`/`reaction` hold the
/// last member, every member is kept in `mu_n_sequence`.
pub fn solve_obstacle_homographic(
    grid: &SpaceTimeGrid,
    spec: &DiffusionSpec,
    driver: &DriverSpec,
    h: &ScalarFn,
    n_list: &[f64],
) -> Result<PDESolution> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[1] <= w[0]) || n_list[0] <= 0.0 {
        return Err(Error::invalid("n_list must be strictly increasing and positive"));
    }
    let prep = prepare(grid, spec)?;
    let hv = barrier(grid, h);
    let nt = grid.time.n_steps();
    check_terminal(grid, &terminal(grid, driver), &hv[nt])?;
    let phim: Vec<Vec<f64>> = discrete_residual(grid, &prep, driver, &hv)
        .into_iter()
        .map(|r| r.into_iter().map(|v| (-v).max(0.0)).collect())
        .collect();
    let members: Vec<(HomographicMember, u32)> = n_list
        .par_iter()
        .map(|&n| {
            let (u, it) = run(grid, &prep, driver, &MeasureData::zero(), Mode::Homographic { h: &hv, phim: &phim, n })?;
            let mu = (0..nt)
                .map(|k| (0..grid.n_nodes()).map(|i| phim[k][i] / (1.0 + n * (u[k][i] - hv[k][i]).abs())).collect())
                .collect();
            Ok((HomographicMember { n, mu, u }, it))
        })
        .collect::<Result<_>>()?;
    for w in members.windows(2) {
        let (a, b) = (&w[0].0, &w[1].0);
        let mut excess: f64 = 0.0;
        for (x, y) in a.u.iter().flatten().zip(b.u.iter().flatten()) {
            excess = excess.max(y - x);
        }
        if excess > 1e-6 {
            return Err(Error::Monotonicity { module: "pde", n_prev: a.n as u32, n_next: b.n as u32, excess });
        }
    }
    let iters = members.iter().map(|m| m.1).max().unwrap_or(0);
    let seq: Vec<HomographicMember> = members.into_iter().map(|m| m.0).collect();
    let last = seq.last().unwrap();
    let mut sol = finish(grid, last.u.clone(), iters);
    sol.reaction = Some(last.mu.clone());
    sol.obstacle = Some(hv);
    sol.phi_minus = Some(phim);
    sol.mu_n_sequence = seq;
    Ok(sol)
}

#[derive(Debug, Clone, Serialize)]
pub struct Complementarity {
    pub min_reaction: f64,
    pub min_excess: f64,
    /// `Σ r (u − h) Δx^d Δt`.
    pub pairing: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReactionReport {
    pub defined: usize,
    pub undefined: usize,
    pub min_alpha: f64,
    pub max_alpha: f64,
    /// Largest `α̂` outside the contact band.
    pub off_contact_max: f64,
}

impl ReactionReport {
    pub fn in_range(&self, tol: f64) -> bool {
        self.defined == 0 || (self.min_alpha >= -tol && self.max_alpha <= 1.0 + tol)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PdeLsReport {
    pub checked: usize,
    pub violations: usize,
    pub lower_excess: f64,
    pub upper_excess: f64,
    /// Largest `|residual|` off the contact band.
    pub free_residual: f64,
}

impl PDESolution {
    pub fn n_layers(&self) -> usize {
        self.u.len()
    }

    fn locate(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        if !self.grid.contains(x) {
            return Err(Error::invalid(format!("point {x:?} outside the grid box")));
        }
        let d = self.grid.dim();
        let mut cells = Vec::with_capacity(d);
        for j in 0..d {
            let s = (x[j] - self.grid.lo[j]) / self.grid.dx;
            let i0 = (s.floor().max(0.0) as usize).min(self.grid.n[j] - 2);
            cells.push((i0, (s - i0 as f64).clamp(0.0, 1.0)));
        }
        Ok(cells)
    }

    fn interpolate(&self, layer: &[f64], x: &[f64], comps: usize, comp: usize) -> Result<f64> {
        let cells = self.locate(x)?;
        let d = self.grid.dim();
        let mut v = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            for (j, (i0, fr)) in cells.iter().enumerate() {
                let up = (corner >> j) & 1;
                w *= if up == 1 { *fr } else { 1.0 - fr };
                idx += (i0 + up) * self.grid.stride(j);
            }
            if w != 0.0 {
                v += w * layer[idx * comps + comp];
            }
        }
        Ok(v)
    }

    /// `u(t, x)`: previous time node, multilinear in space.
    pub fn value_at(&self, t: f64, x: &[f64]) -> Result<f64> {
        let k = self.grid.time.index_at_or_before(t);
        self.interpolate(&self.u[k], x, 1, 0)
    }

    pub fn grad_at(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.grid.time.index_at_or_before(t);
        let d = self.grid.dim();
        (0..d).map(|j| self.interpolate(&self.grad_u[k], x, d, j)).collect()
    }

    /// `Σ_{k<N} Σ_i ξ(t_k, x_i) m_{k,i} Δt Δx^d`.
    pub fn pairing(&self, m: &[Vec<f64>], xi: impl Fn(f64, &[f64]) -> f64) -> f64 {
        let cell = self.grid.cell();
        let mut s = 0.0;
        for (k, row) in m.iter().enumerate() {
            let t = self.grid.time.time(k);
            let dt = self.grid.time.dt(k);
            for (i, v) in row.iter().enumerate() {
                if *v != 0.0 {
                    s += xi(t, &self.grid.node(i)) * v * dt * cell;
                }
            }
        }
        s
    }

    pub fn mass(&self, m: &[Vec<f64>]) -> f64 {
        self.pairing(m, |_, _| 1.0)
    }

    pub fn complementarity(&self) -> Option<Complementarity> {
        let r = self.reaction.as_ref()?;
        let h = self.obstacle.as_ref()?;
        let cell = self.grid.cell();
        let mut c = Complementarity { min_reaction: f64::INFINITY, min_excess: f64::INFINITY, pairing: 0.0 };
        for k in 0..self.u.len() {
            for i in 0..self.grid.n_nodes() {
                let ex = self.u[k][i] - h[k][i];
                c.min_excess = c.min_excess.min(ex);
                if k < r.len() {
                    c.min_reaction = c.min_reaction.min(r[k][i]);
                    c.pairing += r[k][i] * ex * self.grid.time.dt(k) * cell;
                }
            }
        }
        Some(c)
    }

    pub fn sup_norm(&self) -> f64 {
        self.u.iter().flatten().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `u` grid as CSV: `t,x0[,x1],u,du_dx0[,du_dx1][,reaction]`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let d = self.grid.dim();
        let mut head = String::from("t");
        for j in 0..d {
            head.push_str(&format!(",x{j}"));
        }
        head.push_str(",u");
        for j in 0..d {
            head.push_str(&format!(",du_dx{j}"));
        }
        if self.reaction.is_some() {
            head.push_str(",reaction");
        }
        writeln!(w, "{head}")?;
        for k in 0..self.u.len() {
            let t = self.grid.time.time(k);
            for i in 0..self.grid.n_nodes() {
                let mut line = format!("{t:.8}");
                for v in self.grid.node(i) {
                    line.push_str(&format!(",{v:.8}"));
                }
                line.push_str(&format!(",{:.12e}", self.u[k][i]));
                for j in 0..d {
                    line.push_str(&format!(",{:.12e}", self.grad_u[k][i * d + j]));
                }
                if let Some(r) = &self.reaction {
                    let v = r.get(k).map_or(0.0, |row| row[i]);
                    line.push_str(&format!(",{v:.12e}"));
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }
}

/// A nodal field on one layer, multilinear in space.
pub fn interpolate_layer(sol: &PDESolution, layer: &[f64], x: &[f64]) -> Result<f64> {
    sol.interpolate(layer, x, 1, 0)
}

/// `(Σ_{k<N} Δt Σ_i ρ²(x_i) |u − v|² Δx^d)^{1/2}`; unit weight when `weight` is `None`.
pub fn weighted_l2(grid: &SpaceTimeGrid, u: &[Vec<f64>], v: &[Vec<f64>], weight: Option<&WeightSpec>) -> f64 {
    let cell = grid.cell();
    let rho2: Vec<f64> = (0..grid.n_nodes()).map(|i| weight.map_or(1.0, |w| weight_eval(w, &grid.node(i)).powi(2))).collect();
    let mut s = 0.0;
    for k in 0..grid.time.n_steps() {
        let dt = grid.time.dt(k);
        for i in 0..grid.n_nodes() {
            s += dt * rho2[i] * (u[k][i] - v[k][i]).powi(2) * cell;
        }
    }
    s.sqrt()
}

pub fn sup_gap(u: &[Vec<f64>], v: &[Vec<f64>]) -> f64 {
    u.iter().flatten().zip(v.iter().flatten()).fold(0.0, |a, (x, y)| a.max((x - y).abs()))
}

/// A fine solution sampled at the nodes of `coarse` (previous time node,
/// multilinear in space).
pub fn restrict(fine: &PDESolution, coarse: &SpaceTimeGrid) -> Result<Vec<Vec<f64>>> {
    (0..=coarse.time.n_steps())
        .map(|k| {
            let t = coarse.time.time(k) + 1e-9 * coarse.time.dt(k.min(coarse.time.n_steps() - 1));
            let t = t.min(coarse.time.horizon());
            (0..coarse.n_nodes()).map(|i| fine.value_at(t, &coarse.node(i))).collect()
        })
        .collect()
}

/// `α̂ = r/Φ⁻` where `Φ⁻ > tol`; `None` elsewhere.
pub fn recover_reaction_density(sol: &PDESolution, tol: f64) -> Result<(Vec<Vec<Option<f64>>>, ReactionReport)> {
    let (Some(r), Some(phim), Some(h)) = (&sol.reaction, &sol.phi_minus, &sol.obstacle) else {
        return Err(Error::invalid("reaction density needs an obstacle solution"));
    };
    let band = 2.0 * sol.grid.dx;
    let mut rep = ReactionReport {
        defined: 0,
        undefined: 0,
        min_alpha: f64::INFINITY,
        max_alpha: f64::NEG_INFINITY,
        off_contact_max: 0.0,
    };
    let field = (0..r.len())
        .map(|k| {
            (0..sol.grid.n_nodes())
                .map(|i| {
                    if phim[k][i] <= tol {
                        rep.undefined += 1;
                        return None;
                    }
                    let a = r[k][i] / phim[k][i];
                    rep.defined += 1;
                    rep.min_alpha = rep.min_alpha.min(a);
                    rep.max_alpha = rep.max_alpha.max(a);
                    if (sol.u[k][i] - h[k][i]).abs() > band {
                        rep.off_contact_max = rep.off_contact_max.max(a.abs());
                    }
                    Some(a)
                })
                .collect()
        })
        .collect();
    Ok((field, rep))
}

/// `0 ≤ −D_k[u] ≤ 1{|u − h| ≤ 2Δx} Φ⁻ + tol` nodewise, for symmetric `L` (`b = 0`).
pub fn check_pde_lewy_stampacchia(sol: &PDESolution, spec: &DiffusionSpec, driver: &DriverSpec, tol: f64) -> Result<PdeLsReport> {
    let (Some(phim), Some(h)) = (&sol.phi_minus, &sol.obstacle) else {
        return Err(Error::invalid("Lewy–Stampacchia check needs an obstacle solution"));
    };
    for i in (0..sol.grid.n_nodes()).step_by((sol.grid.n_nodes() / 16).max(1)) {
        for k in [0, sol.grid.time.n_steps()] {
            let b = spec.b_at(sol.grid.time.time(k), &sol.grid.node(i));
            if b.iter().any(|v| v.abs() > 1e-14) {
                return Err(Error::invalid("Lewy–Stampacchia check needs b = 0"));
            }
        }
    }
    let prep = prepare(&sol.grid, spec)?;
    let res = discrete_residual(&sol.grid, &prep, driver, &sol.u);
    let band = 2.0 * sol.grid.dx;
    let mut rep = PdeLsReport {
        checked: 0,
        violations: 0,
        lower_excess: f64::NEG_INFINITY,
        upper_excess: f64::NEG_INFINITY,
        free_residual: 0.0,
    };
    for k in 0..res.len() {
        for i in 0..sol.grid.n_nodes() {
            let r = -res[k][i];
            let contact = (sol.u[k][i] - h[k][i]).abs() <= band;
            let cap = if contact { phim[k][i] } else { 0.0 };
            rep.checked += 1;
            rep.lower_excess = rep.lower_excess.max(-r);
            rep.upper_excess = rep.upper_excess.max(r - cap);
            if !contact {
                rep.free_residual = rep.free_residual.max(r.abs());
            }
            if r < -tol || r > cap + tol {
                rep.violations += 1;
            }
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct PdeConvergenceRow {
    pub n: f64,
    pub sup_gap: f64,
    pub l2rho_gap: f64,
    pub mu_mass: f64,
}

/// Gaps of each homographic member to a reference solution on the same grid.
pub fn homographic_table(sol: &PDESolution, reference: &PDESolution, weight: Option<&WeightSpec>) -> Vec<PdeConvergenceRow> {
    sol.mu_n_sequence
        .iter()
        .map(|m| PdeConvergenceRow {
            n: m.n,
            sup_gap: sup_gap(&m.u, &reference.u),
            l2rho_gap: weighted_l2(&sol.grid, &m.u, &reference.u, weight),
            mu_mass: sol.mass(&m.mu),
        })
        .collect()
}

pub fn write_table_csv(rows: &[PdeConvergenceRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "n,sup_gap,l2rho_gap,mu_mass")?;
    for r in rows {
        writeln!(w, "{},{:.10e},{:.10e},{:.10e}", r.n, r.sup_gap, r.l2rho_gap, r.mu_mass)?;
    }
    Ok(())
}
