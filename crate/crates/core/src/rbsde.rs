//! Reflected BSDE `Y_t = ξ + ∫ f ds + K_T − K_t − ∫ Z dB`, `Y ≥ S = h(t, X_t)`,
//! by penalization, by the homographic approximation driven by the
//! barrier's decomposition measure, and by the discrete reflected scheme.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{BackwardEngine, Mode};
use crate::error::{Error, Result};
use crate::gbsde::{backward, solve_increasing, BSDESolution, StepOut, LATTICE_SAMPLES, LATTICE_SAMPLE_SEED};
use crate::grid::TimeGrid;
use crate::model::{DiffusionSpec, DriverSpec, FieldFn, ScalarFn};

/// Barrier `h(t, x)` with its residual `Φ = ∂_t h + L h + f(t, x, h, σᵀ∇h)`.
/// `C` has density `Φ⁺`, `R` has density `Φ⁻`.
#[derive(Clone)]
pub struct ObstacleSpec {
    pub h: ScalarFn,
    pub phi_residual: ScalarFn,
    pub ztilde: FieldFn,
    pub dim: usize,
}

impl std::fmt::Debug for ObstacleSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObstacleSpec").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl ObstacleSpec {
    pub fn residual(&self, t: f64, x: &[f64]) -> f64 {
        (self.phi_residual)(t, x)
    }
    pub fn c_density(&self, t: f64, x: &[f64]) -> f64 {
        self.residual(t, x).max(0.0)
    }
    pub fn r_density(&self, t: f64, x: &[f64]) -> f64 {
        (-self.residual(t, x)).max(0.0)
    }
    pub fn ztilde_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.ztilde)(t, x, &mut out);
        out
    }
}

fn fd_step(v: f64) -> f64 {
    1e-4 * (1.0 + v.abs())
}

/// Gradient and Hessian of `h(t, ·)` by central differences.
pub(crate) fn fd_derivatives(h: &dyn Fn(f64, &[f64]) -> f64, t: f64, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = x.len();
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let h0 = h(t, x);
    let mut xp = x.to_vec();
    for i in 0..d {
        let si = fd_step(x[i]);
        xp[i] = x[i] + si;
        let hp = h(t, &xp);
        xp[i] = x[i] - si;
        let hm = h(t, &xp);
        xp[i] = x[i];
        grad[i] = (hp - hm) / (2.0 * si);
        hess[i * d + i] = (hp - 2.0 * h0 + hm) / (si * si);
        for j in 0..i {
            let sj = fd_step(x[j]);
            let mut q = |a: f64, b: f64| {
                xp[i] = x[i] + a * si;
                xp[j] = x[j] + b * sj;
                let v = h(t, &xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (q(1.0, 1.0) - q(1.0, -1.0) - q(-1.0, 1.0) + q(-1.0, -1.0)) / (4.0 * si * sj);
            hess[i * d + j] = v;
            hess[j * d + i] = v;
        }
    }
    (grad, hess)
}

/// Builds `Φ`, `Z̃ = σᵀ∇h` by finite differences in `t` and `x`.
pub fn decompose_obstacle(h: ScalarFn, driver: &DriverSpec, spec: &DiffusionSpec, grid: &TimeGrid) -> Result<ObstacleSpec> {
    let d = spec.dim();
    let spec_z = spec.clone();
    let hz = h.clone();
    let ztilde: FieldFn = Arc::new(move |t, x, out: &mut [f64]| {
        let (grad, _) = fd_derivatives(&*hz, t, x);
        let mut sig = vec![0.0; d * d];
        if spec_z.sigma_into(t, x, &mut sig).is_err() {
            out.iter_mut().for_each(|v| *v = f64::NAN);
            return;
        }
        // (σᵀ∇h)_j = Σ_i σ_ij ∂_i h
        for j in 0..d {
            out[j] = (0..d).map(|i| sig[i * d + j] * grad[i]).sum();
        }
    });
    let spec_p = spec.clone();
    let hp = h.clone();
    let f = driver.f.clone();
    let zt = ztilde.clone();
    let phi: ScalarFn = Arc::new(move |t, x| {
        let st = 1e-5 * (1.0 + t.abs());
        let dt_h = (hp(t + st, x) - hp(t - st, x)) / (2.0 * st);
        let (grad, hess) = fd_derivatives(&*hp, t, x);
        let a = spec_p.a_at(t, x);
        let mut mu = vec![0.0; d];
        spec_p.ito_drift_into(t, x, &mut mu);
        let mut lh = 0.0;
        for i in 0..d {
            lh += mu[i] * grad[i];
            for j in 0..d {
                lh += 0.5 * a[i * d + j] * hess[i * d + j];
            }
        }
        let mut z = vec![0.0; d];
        zt(t, x, &mut z);
        dt_h + lh + f(t, x, hp(t, x), &z)
    });
    let ob = ObstacleSpec { h, phi_residual: phi, ztilde, dim: d };
    let mid = 0.5 * (grid.t0() + grid.horizon());
    for t in [grid.t0(), mid] {
        let x = vec![0.1; d];
        if !ob.residual(t, &x).is_finite() || ob.ztilde_at(t, &x).iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("obstacle derivatives are not evaluable at t={t}, x={x:?}")));
        }
    }
    Ok(ob)
}

/// Barrier values and decomposition increments on an engine: `s[k][i]`,
/// `phi_dt[k][i]` (the drift of `S` plus `f`, times `Δt`), `dr = (phi_dt)⁻`.
#[derive(Debug, Clone)]
pub struct ObstacleIncrements {
    pub s: Vec<Vec<f64>>,
    pub phi_dt: Vec<Vec<f64>>,
    pub dr: Vec<Vec<f64>>,
}

impl ObstacleIncrements {
    pub fn dc(&self, k: usize, i: usize) -> f64 {
        self.phi_dt[k][i].max(0.0)
    }
}

/// On the lattice the increments are the exact one-step Doob decomposition
/// `E_k[S_{k+1}] − S_k + Δt f(S_k, Z̃_k)` with `Z̃_k = E_k[S_{k+1}ΔB]/Δt`;
/// along paths the continuous `Φ(τ_k, X_k)Δt` is used.
pub fn obstacle_increments<E: BackwardEngine + ?Sized>(
    engine: &E,
    obstacle: &ObstacleSpec,
    driver: &DriverSpec,
) -> Result<ObstacleIncrements> {
    let grid = engine.grid();
    let n = grid.n_steps();
    let m = engine.n_states();
    let d = engine.dim();
    let s: Vec<Vec<f64>> = (0..=n)
        .map(|k| (0..m).into_par_iter().map(|i| (obstacle.h)(grid.time(k), engine.state(k, i))).collect())
        .collect();
    let mut phi_dt = Vec::with_capacity(n);
    for k in 0..n {
        let t = grid.time(k);
        let dt = grid.dt(k);
        let row: Vec<f64> = match engine.mode() {
            Mode::Lattice => {
                let c = engine.conditional(k, &s[k + 1])?;
                (0..m)
                    .into_par_iter()
                    .map(|i| {
                        let x = engine.state(k, i);
                        c.mean[i] - s[k][i] + dt * (driver.f)(t, x, s[k][i], &c.z[i * d..(i + 1) * d])
                    })
                    .collect()
            }
            Mode::MonteCarlo => (0..m).into_par_iter().map(|i| obstacle.residual(t, engine.state(k, i)) * dt).collect(),
        };
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("obstacle residual not finite at step {k}, state {i}")));
        }
        phi_dt.push(row);
    }
    let dr = phi_dt.iter().map(|r| r.iter().map(|v| (-v).max(0.0)).collect()).collect();
    Ok(ObstacleIncrements { s, phi_dt, dr })
}

/// Solution with its increasing process: `dk[k][i]` is `K_{k+1} − K_k`
/// from state `i` at node `k`.
#[derive(Debug, Clone)]
pub struct RBSDESolution {
    pub bsde: BSDESolution,
    pub dk: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
}

impl RBSDESolution {
    pub fn y(&self) -> &Vec<Vec<f64>> {
        &self.bsde.y
    }
    pub fn y0(&self) -> f64 {
        self.bsde.y0()
    }
    pub fn grid(&self) -> &TimeGrid {
        &self.bsde.grid
    }
    pub fn law(&self) -> &Vec<Vec<f64>> {
        &self.bsde.law
    }
    /// `E[K_T]`.
    pub fn expected_k_total(&self) -> f64 {
        self.dk.iter().zip(&self.bsde.law).map(|(dk, p)| dk.iter().zip(p).map(|(a, b)| a * b).sum::<f64>()).sum()
    }
    /// Largest `Y` over states with positive law.
    pub fn y_sup(&self) -> f64 {
        let mut m: f64 = 0.0;
        for (yk, pk) in self.bsde.y.iter().zip(&self.bsde.law) {
            for (y, p) in yk.iter().zip(pk) {
                if *p > 0.0 {
                    m = m.max(y.abs());
                }
            }
        }
        m
    }
    /// Smallest `Y − S` over states with positive law.
    pub fn min_excess(&self) -> f64 {
        let mut m = f64::INFINITY;
        for k in 0..self.bsde.y.len() {
            for i in 0..self.bsde.n_states() {
                if self.bsde.law[k][i] > 0.0 {
                    m = m.min(self.bsde.y[k][i] - self.s[k][i]);
                }
            }
        }
        m
    }
}

fn wrap<E: BackwardEngine + ?Sized>(engine: &E, b: crate::gbsde::Backward, s: &[Vec<f64>]) -> RBSDESolution {
    let y0_samples = if engine.mode() == Mode::MonteCarlo { b.pathwise.clone() } else { Vec::new() };
    RBSDESolution {
        bsde: BSDESolution {
            grid: engine.grid().clone(),
            mode: engine.mode(),
            dim: engine.dim(),
            y: b.y,
            z: b.z,
            law: engine.law(),
            report: b.report,
            y0_samples,
        },
        dk: b.dk,
        s: s.to_vec(),
    }
}

fn check_shapes<E: BackwardEngine + ?Sized>(engine: &E, inc: &ObstacleIncrements) -> Result<()> {
    let n = engine.grid().n_steps();
    let m = engine.n_states();
    if inc.s.len() != n + 1 || inc.dr.len() != n || inc.s.iter().chain(&inc.dr).any(|r| r.len() != m) {
        return Err(Error::Mismatch("obstacle increments do not match the engine shape".into()));
    }
    Ok(())
}

fn terminal_dominates(driver: &DriverSpec, s_t: &[f64], xs: impl Fn(usize) -> Vec<f64>) -> Result<()> {
    for (i, s) in s_t.iter().enumerate() {
        let x = xs(i);
        let phi = (driver.phi)(&x);
        if phi < s - 1e-12 * (1.0 + s.abs()) {
            return Err(Error::invalid(format!("terminal value {phi} below the barrier {s} at x={x:?}")));
        }
    }
    Ok(())
}

/// Discrete reflected scheme: the unconstrained implicit step, replaced by
/// `S` with `ΔK = S − c − Δt f(S, z)` whenever it falls below the barrier.
pub fn solve_rbsde_projected<E: BackwardEngine + ?Sized>(
    engine: &E,
    driver: &DriverSpec,
    inc: &ObstacleIncrements,
) -> Result<RBSDESolution> {
    check_shapes(engine, inc)?;
    let grid = engine.grid();
    let n = grid.n_steps();
    terminal_dominates(driver, &inc.s[n], |i| engine.state(n, i).to_vec())?;
    let b = backward(
        engine,
        |_, x| (driver.phi)(x),
        |k, i, x, c, z| {
            let t = grid.time(k);
            let dt = grid.dt(k);
            let base = |y: f64| c + dt * (driver.f)(t, x, y, z);
            let (y, it) = solve_increasing(|y| y - base(y), base(c))
                .ok_or(Error::NonContraction { module: "rbsde", step: k, state: i })?;
            let s = inc.s[k][i];
            if y >= s {
                Ok(StepOut { y, dk: 0.0, alpha: 0.0, iters: it, residual: (y - base(y)).abs() })
            } else {
                Ok(StepOut { y: s, dk: s - base(s), alpha: 1.0, iters: it, residual: 0.0 })
            }
        },
    )?;
    Ok(wrap(engine, b, &inc.s))
}

#[derive(Debug, Clone, Serialize)]
pub struct PenaltyLevel {
    pub n: u32,
    pub y0: f64,
    pub k_total: f64,
}

#[derive(Debug, Clone)]
pub struct PenalizationResult {
    /// Solution at the last level of the schedule.
    pub solution: RBSDESolution,
    /// `(n₂Y^{n₂} − n₁Y^{n₁})/(n₂ − n₁)` from the last two levels.
    pub extrapolated: Vec<Vec<f64>>,
    pub levels: Vec<PenaltyLevel>,
    /// Largest `Y^{prev} − Y^{next}` observed.
    pub monotone_excess: f64,
}

impl PenalizationResult {
    pub fn extrapolated_y0(&self) -> f64 {
        crate::engine::expect(&self.solution.bsde.law[0], &self.extrapolated[0])
    }
}

/// One penalized solve `y = c + Δt f(y, z) + nΔt (S − y)⁺`.
pub fn solve_rbsde_penalized<E: BackwardEngine + ?Sized>(
    engine: &E,
    driver: &DriverSpec,
    inc: &ObstacleIncrements,
    n: f64,
) -> Result<RBSDESolution> {
    check_shapes(engine, inc)?;
    let grid = engine.grid();
    let b = backward(
        engine,
        |_, x| (driver.phi)(x),
        |k, i, x, c, z| {
            let t = grid.time(k);
            let dt = grid.dt(k);
            let s = inc.s[k][i];
            let map = |y: f64| c + dt * (driver.f)(t, x, y, z) + n * dt * (s - y).max(0.0);
            let (y, it) = solve_increasing(|y| y - map(y), map(c))
                .ok_or(Error::NonContraction { module: "rbsde", step: k, state: i })?;
            Ok(StepOut { y, dk: n * dt * (s - y).max(0.0), alpha: 0.0, iters: it, residual: (y - map(y)).abs() })
        },
    )?;
    Ok(wrap(engine, b, &inc.s))
}

/// Penalization over an increasing schedule with the monotone-increase
/// certificate `Y^n ≤ Y^{n'}` (within 1e−8).
pub fn solve_rbsde_penalization<E: BackwardEngine + ?Sized>(
    engine: &E,
    driver: &DriverSpec,
    inc: &ObstacleIncrements,
    schedule: &[u32],
) -> Result<PenalizationResult> {
    if schedule.is_empty() || schedule.windows(2).any(|w| w[1] <= w[0]) || schedule[0] == 0 {
        return Err(Error::invalid("schedule must be a strictly increasing list of positive levels"));
    }
    let n = engine.grid().n_steps();
    terminal_dominates(driver, &inc.s[n], |i| engine.state(n, i).to_vec())?;
    let mut levels = Vec::new();
    let mut prev: Option<(u32, RBSDESolution)> = None;
    let mut excess_max: f64 = 0.0;
    let mut extrapolated = Vec::new();
    for &lvl in schedule {
        let sol = solve_rbsde_penalized(engine, driver, inc, f64::from(lvl))?;
        if let Some((lp, p)) = &prev {
            let mut excess: f64 = 0.0;
            for (a, b) in p.bsde.y.iter().flatten().zip(sol.bsde.y.iter().flatten()) {
                excess = excess.max(a - b);
            }
            excess_max = excess_max.max(excess);
            if excess > 1e-8 {
                return Err(Error::Monotonicity { module: "rbsde", n_prev: *lp, n_next: lvl, excess });
            }
            let (n1, n2) = (f64::from(*lp), f64::from(lvl));
            extrapolated = p
                .bsde
                .y
                .iter()
                .zip(&sol.bsde.y)
                .map(|(a, b)| a.iter().zip(b).map(|(y1, y2)| (n2 * y2 - n1 * y1) / (n2 - n1)).collect())
                .collect();
        } else {
            extrapolated = sol.bsde.y.clone();
        }
        levels.push(PenaltyLevel { n: lvl, y0: sol.y0(), k_total: sol.expected_k_total() });
        prev = Some((lvl, sol));
    }
    Ok(PenalizationResult { solution: prev.unwrap().1, extrapolated, levels, monotone_excess: excess_max })
}

/// Homographic iterate: `K^n` increments are `α^n ΔR` with
/// `α^n = 1/(1 + n|Y^n − S|)`.
#[derive(Debug, Clone)]
pub struct HomographicIterate {
    pub n: f64,
    pub solution: RBSDESolution,
    pub alpha: Vec<Vec<f64>>,
}

/// Largest root of `y = base(y) + ΔR/(1 + n|y − S|)`. On `[S, ∞)` the
/// equation is monotone; below `S` the roots are searched downward from `S`.
fn homographic_root(base: impl Fn(f64) -> f64, s: f64, dr: f64, n: f64) -> Option<(f64, u32)> {
    let b_s = base(s);
    let g_at_s = s - b_s - dr;
    // roundoff-sized positive values are treated as contact
    let round = 1e-12 * (1.0 + s.abs() + b_s.abs());
    if g_at_s <= round {
        if g_at_s >= -round {
            return Some((s, 1));
        }
        // increasing on [S, ∞); extended linearly below S
        let g = |y: f64| if y >= s { y - base(y) - dr / (1.0 + n * (y - s)) } else { g_at_s + (y - s) };
        return solve_increasing(g, (b_s + dr).max(s)).map(|(y, it)| (y.max(s), it));
    }
    let h = |y: f64| y - base(y) - dr / (1.0 + n * (s - y));
    let mut step = (dr.max(1e-300) / 16.0).min(1.0 / (16.0 * n)).max(1e-14 * (1.0 + s.abs()));
    let mut hi = s;
    let mut evals = 1u32;
    for _ in 0..20_000 {
        let lo = hi - step;
        let v = h(lo);
        evals += 1;
        if v <= 0.0 {
            // bisection on [lo, hi] with h(lo) ≤ 0 < h(hi)
            let (mut a, mut b) = (lo, hi);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                evals += 1;
                if h(m) <= 0.0 {
                    a = m;
                } else {
                    b = m;
                }
                if b - a <= 4.0 * f64::EPSILON * (1.0 + a.abs()) {
                    break;
                }
            }
            return Some((a, evals));
        }
        hi = lo;
        if s - hi > 4.0 * dr.max(1.0 / n) {
            step *= 1.5;
        }
    }
    None
}

pub fn solve_rbsde_homographic<E: BackwardEngine + ?Sized>(
    engine: &E,
    driver: &DriverSpec,
    inc: &ObstacleIncrements,
    n: f64,
) -> Result<HomographicIterate> {
    check_shapes(engine, inc)?;
    if !(n > 0.0) {
        return Err(Error::invalid(format!("homographic level must be positive, got {n}")));
    }
    let grid = engine.grid();
    let nn = grid.n_steps();
    terminal_dominates(driver, &inc.s[nn], |i| engine.state(nn, i).to_vec())?;
    let b = backward(
        engine,
        |_, x| (driver.phi)(x),
        |k, i, x, c, z| {
            let t = grid.time(k);
            let dt = grid.dt(k);
            let s = inc.s[k][i];
            let dr = inc.dr[k][i];
            let base = |y: f64| c + dt * (driver.f)(t, x, y, z);
            let (y, it) = if dr == 0.0 {
                solve_increasing(|y| y - base(y), base(c))
            } else {
                homographic_root(&base, s, dr, n)
            }
            .ok_or(Error::RootFinder { module: "rbsde", step: k, state: i })?;
            let alpha = 1.0 / (1.0 + n * (y - s).abs());
            let dk = alpha * dr;
            Ok(StepOut { y, dk, alpha, iters: it, residual: (y - base(y) - dk).abs() })
        },
    )?;
    let alpha = b.alpha.clone();
    Ok(HomographicIterate { n, solution: wrap(engine, b, &inc.s), alpha })
}

/// `E Σ_k (Y_k − S_k) ΔK_k`.
pub fn check_skorokhod(sol: &RBSDESolution) -> f64 {
    let mut total = 0.0;
    for k in 0..sol.dk.len() {
        for i in 0..sol.bsde.n_states() {
            let p = sol.bsde.law[k][i];
            if p > 0.0 {
                total += p * (sol.bsde.y[k][i] - sol.s[k][i]) * sol.dk[k][i];
            }
        }
    }
    total
}

#[derive(Debug, Clone, Serialize)]
pub struct LewyStampacchiaReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest `−ΔK`.
    pub lower_excess: f64,
    /// Largest `ΔK − 1{contact}ΔR`.
    pub upper_excess: f64,
    pub first_violation: Option<(usize, usize)>,
}

/// `0 ≤ ΔK ≤ 1{|Y − S| ≤ eps_contact} ΔR + tol` at every node with positive law.
pub fn check_lewy_stampacchia(sol: &RBSDESolution, dr: &[Vec<f64>], eps_contact: f64, tol: f64) -> LewyStampacchiaReport {
    let mut rep = LewyStampacchiaReport {
        checked: 0,
        violations: 0,
        lower_excess: f64::NEG_INFINITY,
        upper_excess: f64::NEG_INFINITY,
        first_violation: None,
    };
    for k in 0..sol.dk.len() {
        for i in 0..sol.bsde.n_states() {
            if sol.bsde.law[k][i] <= 0.0 {
                continue;
            }
            rep.checked += 1;
            let dk = sol.dk[k][i];
            let contact = (sol.bsde.y[k][i] - sol.s[k][i]).abs() <= eps_contact;
            let cap = if contact { dr[k][i] } else { 0.0 };
            rep.lower_excess = rep.lower_excess.max(-dk);
            rep.upper_excess = rep.upper_excess.max(dk - cap);
            if dk < -tol || dk > cap + tol {
                rep.violations += 1;
                rep.first_violation.get_or_insert((k, i));
            }
        }
    }
    rep
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlDensityReport {
    pub defined: usize,
    pub undefined: usize,
    pub min_alpha: f64,
    pub max_alpha: f64,
    /// Nodes with `α̂ > tol` outside the contact band.
    pub off_contact: usize,
}

impl ControlDensityReport {
    pub fn in_range(&self, tol: f64) -> bool {
        self.defined == 0 || (self.min_alpha >= -tol && self.max_alpha <= 1.0 + tol)
    }
}

/// `α̂_k = ΔK_k / ((f + U)⁻ Δt)` where the denominator exceeds `tol`,
/// flagged undefined elsewhere. The denominator is the `ΔR` of the barrier.
pub fn control_density(sol: &RBSDESolution, dr: &[Vec<f64>], eps_contact: f64, tol: f64) -> (Vec<Vec<Option<f64>>>, ControlDensityReport) {
    let mut rep = ControlDensityReport {
        defined: 0,
        undefined: 0,
        min_alpha: f64::INFINITY,
        max_alpha: f64::NEG_INFINITY,
        off_contact: 0,
    };
    let mut field = Vec::with_capacity(sol.dk.len());
    for k in 0..sol.dk.len() {
        let mut row = Vec::with_capacity(sol.bsde.n_states());
        for i in 0..sol.bsde.n_states() {
            if sol.bsde.law[k][i] <= 0.0 || dr[k][i] <= tol {
                rep.undefined += usize::from(sol.bsde.law[k][i] > 0.0);
                row.push(None);
                continue;
            }
            let a = sol.dk[k][i] / dr[k][i];
            rep.defined += 1;
            rep.min_alpha = rep.min_alpha.min(a);
            rep.max_alpha = rep.max_alpha.max(a);
            if a > tol && (sol.bsde.y[k][i] - sol.s[k][i]).abs() > eps_contact {
                rep.off_contact += 1;
            }
            row.push(Some(a));
        }
        field.push(row);
    }
    (field, rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub n: f64,
    pub sup_gap_y: f64,
    pub int_gap_z: f64,
    pub sup_gap_k: f64,
    pub skorokhod: f64,
    pub ls_violations: usize,
    pub y0: f64,
    pub k_total: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Largest `Y^{n'} − Y^n` for consecutive levels `n < n'`.
    pub monotone_excess: f64,
    /// Smallest `Y^n − S` over all levels.
    pub min_excess: f64,
}

impl ConvergenceReport {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "n,sup_gap_Y,int_gap_Z,sup_gap_K,skorokhod,ls_violations,y0,k_total")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.10e},{:.10e},{:.10e},{:.10e},{},{:.10e},{:.10e}",
                r.n, r.sup_gap_y, r.int_gap_z, r.sup_gap_k, r.skorokhod, r.ls_violations, r.y0, r.k_total
            )?;
        }
        Ok(())
    }
}

/// Gap metrics of an approximation against a reference: sup over reachable
/// nodes of `|ΔY|` on the lattice (root-mean-square pathwise sup along
/// paths), `(E∫|ΔZ|²)^{1/2}` and `(E sup|ΔK|²)^{1/2}`.
pub fn gap_metrics<E: BackwardEngine + ?Sized>(engine: &E, approx: &RBSDESolution, reference: &RBSDESolution) -> (f64, f64, f64) {
    let grid = engine.grid();
    let n = grid.n_steps();
    let d = engine.dim();
    let law = &approx.bsde.law;
    let ay = &approx.bsde.y;
    let ry = &reference.bsde.y;
    let mut zgap = 0.0;
    for k in 0..n {
        let dt = grid.dt(k);
        for i in 0..approx.bsde.n_states() {
            if law[k][i] > 0.0 {
                let dz: f64 = (0..d).map(|j| (approx.bsde.z_at(k, i)[j] - reference.bsde.z_at(k, i)[j]).powi(2)).sum();
                zgap += law[k][i] * dz * dt;
            }
        }
    }
    let tr = engine.trajectories(LATTICE_SAMPLES, LATTICE_SAMPLE_SEED);
    let per_path: Vec<(f64, f64)> = tr
        .par_iter()
        .map(|path| {
            let mut ysup: f64 = 0.0;
            let mut ksup: f64 = 0.0;
            let mut kdiff: f64 = 0.0;
            for k in 0..=n {
                let i = path[k] as usize;
                ysup = ysup.max((ay[k][i] - ry[k][i]).abs());
                ksup = ksup.max(kdiff.abs());
                if k < n {
                    kdiff += approx.dk[k][i] - reference.dk[k][i];
                }
            }
            (ysup * ysup, ksup * ksup)
        })
        .collect();
    let m = per_path.len() as f64;
    let kgap = (per_path.iter().map(|p| p.1).sum::<f64>() / m).sqrt();
    let ygap = match engine.mode() {
        Mode::Lattice => {
            let mut s: f64 = 0.0;
            for k in 0..=n {
                for i in 0..approx.bsde.n_states() {
                    if law[k][i] > 0.0 {
                        s = s.max((ay[k][i] - ry[k][i]).abs());
                    }
                }
            }
            s
        }
        Mode::MonteCarlo => (per_path.iter().map(|p| p.0).sum::<f64>() / m).sqrt(),
    };
    (ygap, zgap.sqrt(), kgap)
}

/// Runs the homographic scheme for each `n` (increasing) and tabulates the
/// gaps to `reference`, with the certificate `Y^n ≥ Y^{n'} ≥ S − tol`.
pub fn homographic_sequence<E: BackwardEngine + ?Sized>(
    engine: &E,
    driver: &DriverSpec,
    inc: &ObstacleIncrements,
    n_list: &[f64],
    reference: &RBSDESolution,
    eps_contact: f64,
) -> Result<(ConvergenceReport, Vec<HomographicIterate>)> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("n_list must be strictly increasing"));
    }
    let mut rows = Vec::new();
    let mut iterates: Vec<HomographicIterate> = Vec::new();
    let mut monotone_excess: f64 = 0.0;
    let mut min_excess = f64::INFINITY;
    for &n in n_list {
        let it = solve_rbsde_homographic(engine, driver, inc, n)?;
        if let Some(prev) = iterates.last() {
            let mut excess: f64 = 0.0;
            for (a, b) in prev.solution.bsde.y.iter().flatten().zip(it.solution.bsde.y.iter().flatten()) {
                excess = excess.max(b - a);
            }
            monotone_excess = monotone_excess.max(excess);
            if excess > 1e-6 {
                return Err(Error::Monotonicity { module: "rbsde", n_prev: prev.n as u32, n_next: n as u32, excess });
            }
        }
        min_excess = min_excess.min(it.solution.min_excess());
        let (gy, gz, gk) = gap_metrics(engine, &it.solution, reference);
        let ls = check_lewy_stampacchia(&it.solution, &inc.dr, eps_contact, 1e-8);
        rows.push(ConvergenceRow {
            n,
            sup_gap_y: gy,
            int_gap_z: gz,
            sup_gap_k: gk,
            skorokhod: check_skorokhod(&it.solution),
            ls_violations: ls.violations,
            y0: it.solution.y0(),
            k_total: it.solution.expected_k_total(),
        });
        iterates.push(it);
    }
    Ok((ConvergenceReport { rows, monotone_excess, min_excess }, iterates))
}
