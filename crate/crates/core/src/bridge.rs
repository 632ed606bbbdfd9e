//! Cross-checks between the analytic and probabilistic sides: `u(s, x)`
//! against `Y^{s,x}_s`, `σᵀ∇u` against `Z`, and `E ∫ ξ dR` against
//! `∫∫ ξ p q`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{expect, BackwardEngine, LatticeEngine, Mode, RegressionEngine};
use crate::error::{Error, Result};
use crate::forward::{accumulate_functional, build_lattice, gaussian_density, simulate_paths, LatticeBox};
use crate::gbsde::{solve_gbsde, BSDESolution};
use crate::model::{simpson, DiffusionSpec, DriverSpec, MeasureData, ScalarFn};
use crate::pde::PDESolution;
use crate::rbsde::{decompose_obstacle, obstacle_increments, solve_rbsde_projected, RBSDESolution};

/// Which probabilistic solver supplies `Y^{s,x}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BridgeMethod {
    MonteCarlo { n_paths: usize, basis_order: usize, seed: u64 },
    /// Lattice with spacing `dx` and half-width `half_width` around each probe.
    Lattice { dx: f64, half_width: f64 },
}

/// Per-point tolerance `3·SE + abs + rel·|u|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Allowance {
    pub abs: f64,
    pub rel: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BridgePoint {
    pub s: f64,
    pub x: Vec<f64>,
    pub pde_value: f64,
    pub mc_value: f64,
    pub mc_stderr: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BridgeReport {
    pub points: Vec<BridgePoint>,
    /// `‖Z − σᵀ∇u‖ / ‖σᵀ∇u‖` along the first probe's run, path- or law-averaged.
    pub z_gap: Option<f64>,
    /// Largest per-test-function gap of the measure pairing, when computed.
    pub k_mu_gap: Option<f64>,
    pub pass: bool,
}

impl BridgeReport {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "s,x,pde_value,mc_value,mc_stderr,bound,pass")?;
        for p in &self.points {
            let x: Vec<String> = p.x.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(
                w,
                "{:.6},{},{:.10e},{:.10e},{:.10e},{:.10e},{}",
                p.s,
                x.join(" "),
                p.pde_value,
                p.mc_value,
                p.mc_stderr,
                p.bound,
                p.pass
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{:>8} {:>18} {:>12} {:>12} {:>10} {:>10}  ok\n", "s", "x", "pde", "mc", "se", "|gap|");
        for p in &self.points {
            s.push_str(&format!(
                "{:>8.4} {:>18} {:>12.6} {:>12.6} {:>10.2e} {:>10.2e}  {}\n",
                p.s,
                format!("{:?}", p.x),
                p.pde_value,
                p.mc_value,
                p.mc_stderr,
                (p.pde_value - p.mc_value).abs(),
                if p.pass { "yes" } else { "NO" }
            ));
        }
        if let Some(z) = self.z_gap {
            s.push_str(&format!("relative Z gap {z:.4e}\n"));
        }
        if let Some(k) = self.k_mu_gap {
            s.push_str(&format!("K/μ pairing gap {k:.4e}\n"));
        }
        s
    }
}

/// Runs one probabilistic solve from `(s, x)` and returns the solution with
/// the states it lives on, so Z can be compared against the PDE gradient.
struct ProbeRun {
    sol: BSDESolution,
    states: Vec<Vec<Vec<f64>>>,
}

fn probe<E: BackwardEngine + ?Sized>(
    eng: &E,
    driver: &DriverSpec,
    mu: &MeasureData,
    obstacle: Option<&ScalarFn>,
    spec: &DiffusionSpec,
) -> Result<ProbeRun> {
    let sol = match obstacle {
        None => {
            let dr = eng.measure_increments(mu)?;
            solve_gbsde(eng, driver, &dr)?
        }
        Some(h) => {
            let ob = decompose_obstacle(h.clone(), driver, spec, eng.grid())?;
            let inc = obstacle_increments(eng, &ob, driver)?;
            solve_rbsde_projected(eng, driver, &inc)?.bsde
        }
    };
    let n = eng.grid().n_steps();
    let states = (0..=n).map(|k| (0..eng.n_states()).map(|i| eng.state(k, i).to_vec()).collect()).collect();
    Ok(ProbeRun { sol, states })
}

fn z_gap(run: &ProbeRun, pde: &PDESolution, spec: &DiffusionSpec) -> Result<(f64, f64)> {
    let grid = &run.sol.grid;
    let d = run.sol.dim;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut sig = vec![0.0; d * d];
    for k in 0..grid.n_steps() {
        let t = grid.time(k);
        let dt = grid.dt(k);
        for i in 0..run.sol.n_states() {
            let p = run.sol.law[k][i];
            if p <= 0.0 {
                continue;
            }
            let x = &run.states[k][i];
            if !pde.grid.contains(x) {
                continue;
            }
            let g = pde.grad_at(t, x)?;
            spec.sigma_into(t, x, &mut sig)?;
            let z = run.sol.z_at(k, i);
            for j in 0..d {
                let target: f64 = (0..d).map(|l| sig[l * d + j] * g[l]).sum();
                num += p * dt * (z[j] - target).powi(2);
                den += p * dt * target * target;
            }
        }
    }
    Ok((num.sqrt(), den.sqrt()))
}

/// `u(s, x)` from the PDE against `Y^{s,x}_s` at each probe. With
/// `obstacle`, the reflected solution is used on the probabilistic side.
#[allow(clippy::too_many_arguments)]
pub fn compare_representation(
    pde: &PDESolution,
    spec: &DiffusionSpec,
    driver: &DriverSpec,
    mu: &MeasureData,
    obstacle: Option<&ScalarFn>,
    points: &[(f64, Vec<f64>)],
    method: BridgeMethod,
    allowance: Allowance,
) -> Result<BridgeReport> {
    if spec.dim() != pde.grid.dim() {
        return Err(Error::Mismatch(format!("diffusion dimension {} vs PDE grid dimension {}", spec.dim(), pde.grid.dim())));
    }
    if obstacle.is_some() != pde.obstacle.is_some() {
        return Err(Error::Mismatch("obstacle given on one side only".into()));
    }
    let tg = &pde.grid.time;
    let mut starts = Vec::with_capacity(points.len());
    for (s, x) in points {
        let k0 = tg.index_at_or_before(*s);
        if (tg.time(k0) - s).abs() > 1e-9 || k0 >= tg.n_steps() {
            return Err(Error::Mismatch(format!("probe time {s} is not an interior node of the PDE grid")));
        }
        if x.len() != spec.dim() || !pde.grid.contains(x) {
            return Err(Error::Mismatch(format!("probe point {x:?} outside the PDE box")));
        }
        starts.push(k0);
    }
    let mut out = Vec::with_capacity(points.len());
    let mut zg = None;
    for (idx, ((s, x), k0)) in points.iter().zip(&starts).enumerate() {
        let tail = tg.tail(*k0);
        let run = match method {
            BridgeMethod::MonteCarlo { n_paths, basis_order, seed } => {
                let paths = simulate_paths(spec, &tail, (*s, x), n_paths, seed.wrapping_add(idx as u64))?;
                let r = accumulate_functional(&paths, mu)?;
                let eng = RegressionEngine::new(&paths, basis_order)?.with_functional(&r)?;
                probe(&eng, driver, mu, obstacle, spec)?
            }
            BridgeMethod::Lattice { dx, half_width } => {
                let bx = LatticeBox::centered(x, &vec![half_width; x.len()], &vec![dx; x.len()])?;
                let lat = build_lattice(spec, &tail, &bx)?;
                let eng = LatticeEngine::new(&lat, x)?;
                probe(&eng, driver, mu, obstacle, spec)?
            }
        };
        let pde_value = pde.value_at(*s, x)?;
        let mc_value = run.sol.y0();
        let mc_stderr = run.sol.y0_stderr();
        let bound = 3.0 * mc_stderr + allowance.abs + allowance.rel * pde_value.abs();
        out.push(BridgePoint {
            s: *s,
            x: x.clone(),
            pde_value,
            mc_value,
            mc_stderr,
            bound,
            pass: (pde_value - mc_value).abs() <= bound,
        });
        if idx == 0 {
            let (num, den) = z_gap(&run, pde, spec)?;
            zg = Some(if den > 0.0 { num / den } else { num });
        }
    }
    let pass = out.iter().all(|p| p.pass);
    Ok(BridgeReport { points: out, z_gap: zg, k_mu_gap: None, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrespondenceReport {
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub gap: f64,
}

impl CorrespondenceReport {
    pub fn within(&self, n_se: f64, abs: f64) -> bool {
        self.gap <= n_se * self.lhs_stderr + abs
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// `∫_s^T ∫ ξ(t, y) p(s, x, t, y) w(t, y) dy dt` for constant coefficients;
/// the inner integral spans ten standard deviations.
fn gaussian_pairing(spec: &DiffusionSpec, s: f64, x: &[f64], horizon: f64, w: &(dyn Fn(f64, &[f64]) -> f64 + Sync), n_t: usize, n_y: usize) -> Result<f64> {
    let d = spec.dim();
    if d > 2 {
        return Err(Error::invalid("quadrature pairing supports d ≤ 2"));
    }
    let a = spec.a_at(s, x);
    let b = spec.b_at(s, x);
    let inner = |t: f64| -> f64 {
        let tau = t - s;
        if tau <= 0.0 {
            return w(s, x);
        }
        let m: Vec<f64> = (0..d).map(|j| x[j] + b[j] * tau).collect();
        let sd: Vec<f64> = (0..d).map(|j| (a[j * d + j] * tau).sqrt()).collect();
        let dens = |y: &[f64]| gaussian_density(s, x, t, y, spec).unwrap_or(0.0);
        if d == 1 {
            simpson(|y| w(t, &[y]) * dens(&[y]), m[0] - 10.0 * sd[0], m[0] + 10.0 * sd[0], n_y)
        } else {
            simpson(
                |y0| simpson(|y1| w(t, &[y0, y1]) * dens(&[y0, y1]), m[1] - 10.0 * sd[1], m[1] + 10.0 * sd[1], n_y),
                m[0] - 10.0 * sd[0],
                m[0] + 10.0 * sd[0],
                n_y,
            )
        }
    };
    // Simpson in √(t − s) absorbs the square-root behaviour near t = s
    let span = (horizon - s).sqrt();
    let pts: Vec<f64> = (0..=n_t).map(|i| span * i as f64 / n_t as f64).collect();
    let vals: Vec<f64> = pts.par_iter().map(|r| inner(s + r * r) * 2.0 * r).collect();
    let h = span / n_t as f64;
    let mut acc = vals[0] + vals[n_t];
    for (i, v) in vals.iter().enumerate().take(n_t).skip(1) {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * v;
    }
    Ok(acc * h / 3.0)
}

/// `E_{s,x} ∫ ξ dR` along simulated paths against the space–time
/// quadrature of `ξ p q` with the closed-form kernel.
pub fn verify_measure_correspondence(
    spec: &DiffusionSpec,
    mu: &MeasureData,
    xi: &ScalarFn,
    (s, x): (f64, &[f64]),
    grid: &crate::grid::TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<CorrespondenceReport> {
    let paths = simulate_paths(spec, grid, (s, x), n_paths, seed)?;
    let vals: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|p| (0..grid.n_steps()).map(|k| xi(grid.time(k), paths.x(p, k)) * mu.density_at(grid.time(k), paths.x(p, k)) * grid.dt(k)).sum())
        .collect();
    let (lhs, lhs_stderr) = mean_se(&vals);
    let w = |t: f64, y: &[f64]| xi(t, y) * mu.density_at(t, y);
    let rhs = gaussian_pairing(spec, s, x, grid.horizon(), &w, 200, 400)?;
    Ok(CorrespondenceReport { lhs, lhs_stderr, rhs, gap: (lhs - rhs).abs() })
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlMeasureGap {
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// `E Σ_k ξ(τ_k, X_k) ΔK_k` from a reflected solution against
/// `Σ_k Δt Σ_i ξ p r Δx^d` with the PDE reaction `r` and the closed-form
/// kernel from the engine's start point.
pub fn verify_control_measure<E: BackwardEngine + ?Sized>(
    engine: &E,
    rb: &RBSDESolution,
    pde: &PDESolution,
    spec: &DiffusionSpec,
    xis: &[ScalarFn],
) -> Result<Vec<ControlMeasureGap>> {
    let r = pde.reaction.as_ref().ok_or_else(|| Error::invalid("control measure check needs an obstacle PDE solution"))?;
    let grid = engine.grid();
    let s = grid.t0();
    let x0 = engine.state(0, 0).to_vec();
    if pde.grid.dim() != x0.len() {
        return Err(Error::Mismatch("PDE and engine dimensions differ".into()));
    }
    let pg = &pde.grid;
    let k_start = pg.time.index_at_or_before(s);
    let cell = pg.cell();
    let nodes: Vec<Vec<f64>> = (0..pg.n_nodes()).map(|i| pg.node(i)).collect();
    let mut out = Vec::with_capacity(xis.len());
    for xi in xis {
        let (lhs, lhs_stderr) = match engine.mode() {
            Mode::Lattice => {
                let v: f64 = (0..rb.dk.len())
                    .map(|k| {
                        let vals: Vec<f64> = (0..engine.n_states()).map(|i| xi(grid.time(k), engine.state(k, i)) * rb.dk[k][i]).collect();
                        expect(&rb.bsde.law[k], &vals)
                    })
                    .sum();
                (v, 0.0)
            }
            Mode::MonteCarlo => {
                let vals: Vec<f64> = (0..engine.n_states())
                    .into_par_iter()
                    .map(|i| (0..rb.dk.len()).map(|k| xi(grid.time(k), engine.state(k, i)) * rb.dk[k][i]).sum())
                    .collect();
                mean_se(&vals)
            }
        };
        let layers: Vec<f64> = (k_start..pg.time.n_steps())
            .into_par_iter()
            .map(|k| {
                let t = pg.time.time(k);
                let dt = pg.time.dt(k);
                if t - s <= 1e-12 {
                    // the kernel is a point mass at the start
                    let row = crate::pde::interpolate_layer(pde, &r[k], &x0).unwrap_or(0.0);
                    return xi(t, &x0) * row * dt;
                }
                let mut acc = 0.0;
                for (i, y) in nodes.iter().enumerate() {
                    if r[k][i] != 0.0 {
                        acc += xi(t, y) * gaussian_density(s, &x0, t, y, spec).unwrap_or(0.0) * r[k][i] * cell;
                    }
                }
                acc * dt
            })
            .collect();
        let rhs: f64 = layers.iter().sum();
        out.push(ControlMeasureGap { lhs, lhs_stderr, rhs, gap: (lhs - rhs).abs() });
    }
    Ok(out)
}
