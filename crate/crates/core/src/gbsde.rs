//! Generalized BSDE `Y_t = φ(X_T) + ∫ f(s,X,Y,Z) ds + ∫ g(s,X,Y) dR − ∫ Z dB`
//! solved backward on a lattice or by regression Monte Carlo.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{expect, BackwardEngine, LatticeEngine, Mode, RegressionEngine};
use crate::error::{Error, Result};
use crate::forward::{FunctionalPath, MarkovLattice, PathBundle};
use crate::grid::TimeGrid;
use crate::infconv::{inf_convolved_driver, LineGrid};
use crate::model::{DriverSpec, MeasureData};

/// Samples used for pathwise functionals on the lattice.
pub const LATTICE_SAMPLES: usize = 4096;
pub const LATTICE_SAMPLE_SEED: u64 = 0x5eed;

/// The inf-convolution grid is `INFCONV_REFINE` times finer than `1/n²` so
/// that the minimizer of `f(y') + n|y − y'|` near a square-root
/// singularity (at distance `1/(4n²)`) is resolved.
pub const INFCONV_REFINE: f64 = 16.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolveReport {
    /// Largest number of scalar-solver evaluations at any node.
    pub iterations: u32,
    /// Largest absolute residual of the per-node equation.
    pub residual: f64,
}

/// `y[k][i]`, `z[k][i·d + j]`; `z` on the terminal layer is zero.
#[derive(Debug, Clone)]
pub struct BSDESolution {
    pub grid: TimeGrid,
    pub mode: Mode,
    pub dim: usize,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub law: Vec<Vec<f64>>,
    pub report: SolveReport,
    /// Pathwise first-node estimates (Monte Carlo mode only).
    pub y0_samples: Vec<f64>,
}

impl BSDESolution {
    pub fn n_states(&self) -> usize {
        self.y[0].len()
    }

    pub fn z_at(&self, k: usize, i: usize) -> &[f64] {
        &self.z[k][i * self.dim..(i + 1) * self.dim]
    }

    /// `Y` at the start point: the lattice start node or the path average.
    pub fn y0(&self) -> f64 {
        expect(&self.law[0], &self.y[0])
    }

    /// Standard error of `y0` (zero on the lattice). The regression keeps
    /// path means, so `y0` is the average of the pathwise values
    /// `ξ + Σ_k (Y_k − E_k[Y_{k+1}])`; their spread gives the error.
    pub fn y0_stderr(&self) -> f64 {
        match self.mode {
            Mode::Lattice => 0.0,
            Mode::MonteCarlo => {
                let s = &self.y0_samples;
                let n = s.len() as f64;
                let m = s.iter().sum::<f64>() / n;
                let v = s.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (n - 1.0).max(1.0);
                (v / n).sqrt()
            }
        }
    }

    /// `Z` at the start point.
    pub fn z0(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|j| (0..self.n_states()).map(|i| self.law[0][i] * self.z_at(0, i)[j]).sum())
            .collect()
    }

    pub fn negated(mut self) -> Self {
        self.y0_samples.iter_mut().for_each(|v| *v = -*v);
        self.y.iter_mut().flatten().for_each(|v| *v = -*v);
        self.z.iter_mut().flatten().for_each(|v| *v = -*v);
        self
    }

    /// `node,time,state,x…,y,z…` rows, restricted to states with positive law.
    pub fn write_csv<E: BackwardEngine + ?Sized>(&self, engine: &E, mut w: impl Write) -> Result<()> {
        let d = self.dim;
        let xs: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        let zs: Vec<String> = (0..d).map(|j| format!("z{j}")).collect();
        writeln!(w, "node,time,state,{},y,{}", xs.join(","), zs.join(","))?;
        for k in 0..self.y.len() {
            let t = self.grid.time(k);
            for i in 0..self.n_states() {
                if self.law[k][i] <= 0.0 {
                    continue;
                }
                let x: Vec<String> = engine.state(k, i).iter().map(|v| format!("{v:.12e}")).collect();
                let z: Vec<String> = self.z_at(k, i).iter().map(|v| format!("{v:.12e}")).collect();
                writeln!(w, "{k},{t:.12e},{i},{},{:.12e},{}", x.join(","), self.y[k][i], z.join(","))?;
            }
        }
        Ok(())
    }

    /// Little-endian layout: magic `OBSY`, version, dim, states, nodes,
    /// then time nodes, `Y` and `Z` row-major by time node.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"OBSY")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.n_states() as u64).to_le_bytes())?;
        w.write_all(&(self.y.len() as u64).to_le_bytes())?;
        for t in self.grid.nodes() {
            w.write_all(&t.to_le_bytes())?;
        }
        for v in self.y.iter().flatten().chain(self.z.iter().flatten()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

pub(crate) struct StepOut {
    pub y: f64,
    pub dk: f64,
    pub alpha: f64,
    pub iters: u32,
    pub residual: f64,
}

impl StepOut {
    pub(crate) fn plain(y: f64, iters: u32, residual: f64) -> Self {
        StepOut { y, dk: 0.0, alpha: 1.0, iters, residual }
    }
}

pub(crate) struct Backward {
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub dk: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub report: SolveReport,
    /// `Y_N + Σ_k (Y_k − E_k[Y_{k+1}])` per state, meaningful along paths.
    pub pathwise: Vec<f64>,
}

/// Generic backward induction: `step(k, i, x, E[Y_{k+1}|x], Z_k)` returns
/// the new value at node `(k, i)`.
pub(crate) fn backward<E, T, F>(engine: &E, terminal: T, step: F) -> Result<Backward>
where
    E: BackwardEngine + ?Sized,
    T: Fn(usize, &[f64]) -> f64 + Sync,
    F: Fn(usize, usize, &[f64], f64, &[f64]) -> Result<StepOut> + Sync,
{
    let grid = engine.grid();
    let n = grid.n_steps();
    let m = engine.n_states();
    let d = engine.dim();
    let mut y = vec![Vec::new(); n + 1];
    let mut z = vec![Vec::new(); n + 1];
    let mut dk = vec![Vec::new(); n];
    let mut alpha = vec![Vec::new(); n];
    y[n] = (0..m).into_par_iter().map(|i| terminal(i, engine.state(n, i))).collect();
    z[n] = vec![0.0; m * d];
    let mut report = SolveReport::default();
    let mut pathwise = y[n].clone();
    for k in (0..n).rev() {
        let cond = engine.conditional(k, &y[k + 1])?;
        let outs: Vec<StepOut> = (0..m)
            .into_par_iter()
            .map(|i| step(k, i, engine.state(k, i), cond.mean[i], &cond.z[i * d..(i + 1) * d]))
            .collect::<Result<_>>()?;
        let mut yk = Vec::with_capacity(m);
        let mut dkk = Vec::with_capacity(m);
        let mut ak = Vec::with_capacity(m);
        for (i, o) in outs.into_iter().enumerate() {
            pathwise[i] += o.y - cond.mean[i];
            report.iterations = report.iterations.max(o.iters);
            report.residual = report.residual.max(o.residual);
            yk.push(o.y);
            dkk.push(o.dk);
            ak.push(o.alpha);
        }
        y[k] = yk;
        z[k] = cond.z;
        dk[k] = dkk;
        alpha[k] = ak;
    }
    Ok(Backward { y, z, dk, alpha, report, pathwise })
}

/// Root of a nondecreasing scalar function near `guess`: bracket by
/// doubling, then Illinois-type regula falsi. Returns `(root, evaluations)`.
pub(crate) fn solve_increasing(f: impl Fn(f64) -> f64, guess: f64) -> Option<(f64, u32)> {
    let fg = f(guess);
    if !fg.is_finite() {
        return None;
    }
    if fg.abs() <= 1e-15 * (1.0 + guess.abs()) {
        return Some((guess, 1));
    }
    let mut evals = 1u32;
    let mut width = fg.abs().max(1e-12);
    let (mut lo, mut hi, mut flo, mut fhi);
    if fg > 0.0 {
        hi = guess;
        fhi = fg;
        loop {
            lo = guess - width;
            flo = f(lo);
            evals += 1;
            if flo <= 0.0 {
                break;
            }
            width *= 2.0;
            if evals > 200 || !lo.is_finite() {
                return None;
            }
        }
    } else {
        lo = guess;
        flo = fg;
        loop {
            hi = guess + width;
            fhi = f(hi);
            evals += 1;
            if fhi >= 0.0 {
                break;
            }
            width *= 2.0;
            if evals > 200 || !hi.is_finite() {
                return None;
            }
        }
    }
    if flo == 0.0 {
        return Some((lo, evals));
    }
    if fhi == 0.0 {
        return Some((hi, evals));
    }
    let mut side = 0i8;
    for _ in 0..300 {
        let mut m = (lo * fhi - hi * flo) / (fhi - flo);
        if !(m > lo && m < hi) {
            m = 0.5 * (lo + hi);
        }
        let fm = f(m);
        evals += 1;
        if fm.abs() <= 1e-15 * (1.0 + m.abs()) || hi - lo <= 4.0 * f64::EPSILON * (1.0 + m.abs()) {
            return Some((m, evals));
        }
        if fm < 0.0 {
            lo = m;
            flo = fm;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = m;
            fhi = fm;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    if hi - lo <= 1e-12 * (1.0 + lo.abs()) {
        Some((0.5 * (lo + hi), evals))
    } else {
        None
    }
}

/// One implicit step `y = c + Δt f(y, z) + g(y) ΔR`.
pub(crate) fn gbsde_step(
    driver: &DriverSpec,
    t: f64,
    dt: f64,
    x: &[f64],
    c: f64,
    z: &[f64],
    dr: f64,
) -> Option<(f64, u32, f64)> {
    let map = |y: f64| c + dt * (driver.f)(t, x, y, z) + (driver.g)(t, x, y) * dr;
    let guess = map(c);
    let (y, it) = solve_increasing(|y| y - map(y), guess)?;
    Some((y, it, (y - map(y)).abs()))
}

/// Backward induction for the generalized BSDE with increments
/// `dr[k][i]` of the integrator `R`.
pub fn solve_gbsde<E: BackwardEngine + ?Sized>(
    engine: &E,
    driver: &DriverSpec,
    dr: &[Vec<f64>],
) -> Result<BSDESolution> {
    check_increments(engine, dr)?;
    let grid = engine.grid();
    let b = backward(
        engine,
        |_, x| (driver.phi)(x),
        |k, i, x, c, z| {
            let (y, it, res) = gbsde_step(driver, grid.time(k), grid.dt(k), x, c, z, dr[k][i])
                .ok_or(Error::NonContraction { module: "gbsde", step: k, state: i })?;
            Ok(StepOut::plain(y, it, res))
        },
    )?;
    Ok(BSDESolution {
        grid: grid.clone(),
        mode: engine.mode(),
        dim: engine.dim(),
        y: b.y,
        z: b.z,
        law: engine.law(),
        report: b.report,
        y0_samples: if engine.mode() == Mode::MonteCarlo { b.pathwise } else { Vec::new() },
    })
}

pub(crate) fn check_increments<E: BackwardEngine + ?Sized>(engine: &E, dr: &[Vec<f64>]) -> Result<()> {
    if dr.len() != engine.grid().n_steps() || dr.iter().any(|r| r.len() != engine.n_states()) {
        return Err(Error::Mismatch("measure increments do not match the engine shape".into()));
    }
    Ok(())
}

/// Lattice solve started at `x0` with measure density `mu`.
pub fn solve_gbsde_lattice(lat: &MarkovLattice, x0: &[f64], driver: &DriverSpec, mu: &MeasureData) -> Result<BSDESolution> {
    let eng = LatticeEngine::new(lat, x0)?;
    let dr = eng.measure_increments(mu)?;
    solve_gbsde(&eng, driver, &dr)
}

/// Regression Monte Carlo solve with polynomial basis of total degree `basis_order`.
pub fn solve_gbsde_lsmc(
    paths: &PathBundle,
    r: &FunctionalPath,
    driver: &DriverSpec,
    basis_order: usize,
) -> Result<BSDESolution> {
    let eng = RegressionEngine::new(paths, basis_order)?.with_functional(r)?;
    let dr = eng.measure_increments(&MeasureData::zero())?;
    solve_gbsde(&eng, driver, &dr)
}

/// Options for the minimal/maximal solution constructions.
#[derive(Debug, Clone)]
pub struct ScheduleOptions {
    pub schedule: Vec<u32>,
    /// Stop once successive iterates differ by less than this in sup norm.
    pub stop_gap: f64,
    /// `y` range of the inf-convolution grid; derived from growth bounds when `None`.
    pub y_box: Option<(f64, f64)>,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        ScheduleOptions { schedule: vec![1, 2, 4, 8, 16, 32], stop_gap: 1e-4, y_box: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelRecord {
    pub n: u32,
    pub y0: f64,
    /// Sup-norm change from the previous level (NaN on the first).
    pub sup_gap: f64,
}

#[derive(Debug, Clone)]
pub struct ScheduleResult {
    pub solution: BSDESolution,
    pub levels: Vec<LevelRecord>,
    /// Largest `Y^{prev} − Y^{next}` observed (≤ 1e−8 on success).
    pub monotone_excess: f64,
}

fn growth_box<E: BackwardEngine + ?Sized>(engine: &E, driver: &DriverSpec, dr: &[Vec<f64>]) -> (f64, f64) {
    let grid = engine.grid();
    let n = grid.n_steps();
    let phi_max = (0..engine.n_states()).map(|i| (driver.phi)(engine.state(n, i)).abs()).fold(0.0, f64::max);
    let mut gamma_max: f64 = 0.0;
    let mut rate_max: f64 = 0.0;
    for k in 0..n {
        for i in 0..engine.n_states() {
            gamma_max = gamma_max.max((driver.gamma)(grid.time(k), engine.state(k, i)).abs());
            rate_max = rate_max.max(dr[k][i] / grid.dt(k));
        }
    }
    let span = grid.horizon() - grid.t0();
    let b = (phi_max + span * (driver.const_k * gamma_max + driver.const_m * rate_max)) * (driver.const_k * span).exp();
    (-2.0 * b - 1.0, 2.0 * b + 1.0)
}

/// Minimal solution as the increasing limit of solutions with inf-convolved
/// coefficients and integrator density truncated at level `n`.
pub fn minimal_solution<E: BackwardEngine + ?Sized>(
    engine: &E,
    driver: &DriverSpec,
    dr: &[Vec<f64>],
    opts: &ScheduleOptions,
) -> Result<ScheduleResult> {
    check_increments(engine, dr)?;
    if opts.schedule.is_empty() || opts.schedule.windows(2).any(|w| w[1] <= w[0]) || opts.schedule[0] == 0 {
        return Err(Error::invalid("schedule must be a strictly increasing list of positive levels"));
    }
    let (lo, hi) = opts.y_box.unwrap_or_else(|| growth_box(engine, driver, dr));
    let n_max = *opts.schedule.last().unwrap() as f64;
    let line = LineGrid::with_spacing(1.0 / (INFCONV_REFINE * n_max * n_max), lo, hi)?;
    let grid = engine.grid();
    let mut prev: Option<(u32, BSDESolution)> = None;
    let mut levels = Vec::new();
    let mut excess_max: f64 = 0.0;
    for &n in &opts.schedule {
        let nf = f64::from(n);
        let dn = match driver.const_l {
            Some(l) if l <= nf => driver.clone(),
            // the inf-convolution of a K-linear-growth function is finite only for n > K
            _ if nf <= driver.const_k => continue,
            _ => inf_convolved_driver(driver, nf, line),
        };
        let dr_n: Vec<Vec<f64>> =
            dr.iter().enumerate().map(|(k, row)| row.iter().map(|v| v.min(nf * grid.dt(k))).collect()).collect();
        let sol = solve_gbsde(engine, &dn, &dr_n)?;
        let mut gap = f64::NAN;
        if let Some((n_prev, p)) = &prev {
            let (mut excess, mut sup): (f64, f64) = (0.0, 0.0);
            for (a, b) in p.y.iter().flatten().zip(sol.y.iter().flatten()) {
                excess = excess.max(a - b);
                sup = sup.max((a - b).abs());
            }
            excess_max = excess_max.max(excess);
            if excess > 1e-8 {
                return Err(Error::Monotonicity { module: "gbsde", n_prev: *n_prev, n_next: n, excess });
            }
            gap = sup;
        }
        levels.push(LevelRecord { n, y0: sol.y0(), sup_gap: gap });
        let stop = gap < opts.stop_gap;
        prev = Some((n, sol));
        if stop {
            break;
        }
    }
    let (_, solution) = prev.ok_or_else(|| Error::invalid("no schedule level exceeds the growth constant K"))?;
    Ok(ScheduleResult { solution, levels, monotone_excess: excess_max })
}

/// Maximal solution: the negative of the minimal solution of the flipped system.
pub fn maximal_solution<E: BackwardEngine + ?Sized>(
    engine: &E,
    driver: &DriverSpec,
    dr: &[Vec<f64>],
    opts: &ScheduleOptions,
) -> Result<ScheduleResult> {
    let flipped = driver.flipped();
    let opts = ScheduleOptions { y_box: opts.y_box.map(|(lo, hi)| (-hi, -lo)), ..opts.clone() };
    let mut r = minimal_solution(engine, &flipped, dr, &opts)?;
    r.solution = r.solution.negated();
    r.levels.iter_mut().for_each(|l| l.y0 = -l.y0);
    Ok(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    /// `max (Y¹ − Y²)⁺` over nodes with positive law.
    pub max_violation: f64,
    pub at: Option<(usize, usize)>,
    /// Largest violation of the ordering hypotheses along solution 2.
    pub hypothesis_excess: f64,
}

impl ComparisonReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }
}

/// Data of one comparison side: coefficients and integrator increments.
pub type ComparisonData<'a> = (&'a DriverSpec, &'a [Vec<f64>]);

pub fn check_comparison<E: BackwardEngine + ?Sized>(
    engine: &E,
    sol1: &BSDESolution,
    sol2: &BSDESolution,
    data1: ComparisonData<'_>,
    data2: ComparisonData<'_>,
) -> Result<ComparisonReport> {
    if sol1.y.len() != sol2.y.len() || sol1.n_states() != sol2.n_states() {
        return Err(Error::Mismatch("solutions live on different grids".into()));
    }
    let grid = engine.grid();
    let n = grid.n_steps();
    let mut hyp: f64 = 0.0;
    for i in 0..sol2.n_states() {
        let x = engine.state(n, i);
        hyp = hyp.max((data1.0.phi)(x) - (data2.0.phi)(x));
    }
    for k in 0..n {
        let t = grid.time(k);
        for i in 0..sol2.n_states() {
            let x = engine.state(k, i);
            let (y, z) = (sol2.y[k][i], sol2.z_at(k, i));
            hyp = hyp.max((data1.0.f)(t, x, y, z) - (data2.0.f)(t, x, y, z));
            hyp = hyp.max((data1.0.g)(t, x, y) * data1.1[k][i] - (data2.0.g)(t, x, y) * data2.1[k][i]);
        }
    }
    let mut worst = 0.0;
    let mut at = None;
    for k in 0..=n {
        for i in 0..sol1.n_states() {
            if sol1.law[k][i] <= 0.0 {
                continue;
            }
            let v = sol1.y[k][i] - sol2.y[k][i];
            if v > worst {
                worst = v;
                at = Some((k, i));
            }
        }
    }
    Ok(ComparisonReport { max_violation: worst, at, hypothesis_excess: hyp })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AprioriReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// `E sup|Y|² + E∫|Z|²` against `E|ξ|² + E|R_T|² + E∫|γ|²`, along sampled
/// lattice trajectories or the simulated paths.
pub fn check_apriori<E: BackwardEngine + ?Sized>(
    engine: &E,
    sol: &BSDESolution,
    driver: &DriverSpec,
    dr: &[Vec<f64>],
) -> Result<AprioriReport> {
    check_increments(engine, dr)?;
    let grid = engine.grid();
    let n = grid.n_steps();
    let tr = engine.trajectories(LATTICE_SAMPLES, LATTICE_SAMPLE_SEED);
    let parts: Vec<(f64, f64)> = tr
        .par_iter()
        .map(|path| {
            let mut sup: f64 = 0.0;
            let mut zint = 0.0;
            let mut r_t = 0.0;
            let mut gint = 0.0;
            for k in 0..=n {
                let i = path[k] as usize;
                sup = sup.max(sol.y[k][i] * sol.y[k][i]);
                if k < n {
                    let dt = grid.dt(k);
                    zint += sol.z_at(k, i).iter().map(|v| v * v).sum::<f64>() * dt;
                    r_t += dr[k][i];
                    gint += (driver.gamma)(grid.time(k), engine.state(k, i)).powi(2) * dt;
                }
            }
            let xi = sol.y[n][path[n] as usize];
            (sup + zint, xi * xi + r_t * r_t + gint)
        })
        .collect();
    let m = parts.len() as f64;
    let lhs = parts.iter().map(|p| p.0).sum::<f64>() / m;
    let rhs = parts.iter().map(|p| p.1).sum::<f64>() / m;
    let ratio = if rhs > 0.0 { lhs / rhs } else if lhs == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(AprioriReport { lhs, rhs, ratio })
}
