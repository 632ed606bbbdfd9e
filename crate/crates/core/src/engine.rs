//! Conditional-expectation engines for backward recursions: the Markov
//! lattice (deterministic) and least-squares regression on simulated paths.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{FunctionalPath, MarkovLattice, PathBundle};
use crate::grid::TimeGrid;
use crate::model::MeasureData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Lattice,
    MonteCarlo,
}

/// `E[v_{k+1} | state]` per state and the `Z` estimate `E[v_{k+1} ΔB | state]/Δt`
/// (flattened, `dim` entries per state).
#[derive(Debug, Clone)]
pub struct Conditional {
    pub mean: Vec<f64>,
    pub z: Vec<f64>,
}

pub trait BackwardEngine: Sync {
    fn grid(&self) -> &TimeGrid;
    fn dim(&self) -> usize;
    fn mode(&self) -> Mode;
    /// Number of states per time node (lattice nodes or paths).
    fn n_states(&self) -> usize;
    fn state(&self, k: usize, i: usize) -> &[f64];
    fn conditional(&self, k: usize, next: &[f64]) -> Result<Conditional>;
    /// Law of the state at each time node under the start point, `[k][i]`.
    fn law(&self) -> Vec<Vec<f64>>;
    /// Sampled trajectories as state indices `[path][k]`; for paths this is
    /// the identity.
    fn trajectories(&self, n_paths: usize, seed: u64) -> Vec<Vec<u32>>;
    /// `q(τ_k, x)Δt_k` on the lattice, `R_{k+1} − R_k` along paths.
    fn measure_increments(&self, mu: &MeasureData) -> Result<Vec<Vec<f64>>>;
}

/// Lattice engine with a fixed start node.
#[derive(Debug, Clone)]
pub struct LatticeEngine<'a> {
    lat: &'a MarkovLattice,
    start: usize,
}

impl<'a> LatticeEngine<'a> {
    /// `x0` must coincide with a lattice node.
    pub fn new(lat: &'a MarkovLattice, x0: &[f64]) -> Result<Self> {
        let start = lat.nearest_node(x0);
        let node = lat.node(start);
        let off = node.iter().zip(x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if off > 1e-9 * (1.0 + x0.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            return Err(Error::invalid(format!("start point {x0:?} is not a lattice node (nearest {node:?})")));
        }
        Ok(LatticeEngine { lat, start })
    }

    pub fn lattice(&self) -> &MarkovLattice {
        self.lat
    }

    pub fn start(&self) -> usize {
        self.start
    }
}

impl BackwardEngine for LatticeEngine<'_> {
    fn grid(&self) -> &TimeGrid {
        self.lat.grid()
    }
    fn dim(&self) -> usize {
        self.lat.dim()
    }
    fn mode(&self) -> Mode {
        Mode::Lattice
    }
    fn n_states(&self) -> usize {
        self.lat.n_nodes()
    }
    fn state(&self, _k: usize, i: usize) -> &[f64] {
        self.lat.node(i)
    }
    fn conditional(&self, k: usize, next: &[f64]) -> Result<Conditional> {
        let (mean, z) = self.lat.conditional(k, next);
        Ok(Conditional { mean, z })
    }
    fn law(&self) -> Vec<Vec<f64>> {
        self.lat.marginals(self.start)
    }
    fn trajectories(&self, n_paths: usize, seed: u64) -> Vec<Vec<u32>> {
        let n = self.lat.grid().n_steps();
        (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                rng.set_stream(p as u64);
                let mut cur = self.start;
                let mut out = Vec::with_capacity(n + 1);
                out.push(cur as u32);
                for k in 0..n {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut next = cur;
                    for (c, w, _) in self.lat.kernel(k).row(cur) {
                        acc += w;
                        next = c;
                        if u < acc {
                            break;
                        }
                    }
                    cur = next;
                    out.push(cur as u32);
                }
                out
            })
            .collect()
    }
    fn measure_increments(&self, mu: &MeasureData) -> Result<Vec<Vec<f64>>> {
        let grid = self.lat.grid();
        (0..grid.n_steps())
            .map(|k| {
                let t = grid.time(k);
                (0..self.lat.n_nodes())
                    .map(|i| {
                        let x = self.lat.node(i);
                        let q = mu.density_at(t, x);
                        if !(q >= 0.0) {
                            return Err(Error::NegativeDensity { t, x: x.to_vec(), value: q });
                        }
                        Ok(q * grid.dt(k))
                    })
                    .collect()
            })
            .collect()
    }
}

/// Least-squares Monte Carlo engine: conditional expectations are
/// projections on polynomials of total degree `≤ order` in `X_k`.
#[derive(Debug, Clone)]
pub struct RegressionEngine<'a> {
    paths: &'a PathBundle,
    order: usize,
    functional: Option<&'a FunctionalPath>,
}

impl<'a> RegressionEngine<'a> {
    pub fn new(paths: &'a PathBundle, order: usize) -> Result<Self> {
        let p = basis_size(paths.dim(), order);
        if paths.n_paths() < 10 * p {
            return Err(Error::invalid(format!(
                "regression needs at least {} paths for {p} basis functions, got {}",
                10 * p,
                paths.n_paths()
            )));
        }
        Ok(RegressionEngine { paths, order, functional: None })
    }

    /// Uses a precomputed additive functional for measure increments.
    pub fn with_functional(mut self, r: &'a FunctionalPath) -> Result<Self> {
        if r.n_paths() != self.paths.n_paths() || r.n_nodes() != self.paths.grid().n_steps() + 1 {
            return Err(Error::Mismatch("functional shape differs from the path bundle".into()));
        }
        self.functional = Some(r);
        Ok(self)
    }

    pub fn paths(&self) -> &PathBundle {
        self.paths
    }
}

pub(crate) fn basis_size(dim: usize, order: usize) -> usize {
    exponents(dim, order).len()
}

/// Multi-indices of total degree `≤ order`, graded.
fn exponents(dim: usize, order: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; dim]];
    for deg in 1..=order as u32 {
        let mut cur = vec![0u32; dim];
        fill(&mut out, &mut cur, 0, deg);
    }
    out
}

fn fill(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, left: u32) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(cur.clone());
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        fill(out, cur, pos + 1, left - e);
    }
}

impl BackwardEngine for RegressionEngine<'_> {
    fn grid(&self) -> &TimeGrid {
        self.paths.grid()
    }
    fn dim(&self) -> usize {
        self.paths.dim()
    }
    fn mode(&self) -> Mode {
        Mode::MonteCarlo
    }
    fn n_states(&self) -> usize {
        self.paths.n_paths()
    }
    fn state(&self, k: usize, i: usize) -> &[f64] {
        self.paths.x(i, k)
    }

    fn conditional(&self, k: usize, next: &[f64]) -> Result<Conditional> {
        let n = self.paths.n_paths();
        let d = self.paths.dim();
        let dt = self.paths.grid().dt(k);
        // standardize the regressors
        let mut mean_x = vec![0.0; d];
        let mut sd_x = vec![0.0; d];
        for p in 0..n {
            for (m, v) in mean_x.iter_mut().zip(self.paths.x(p, k)) {
                *m += v;
            }
        }
        mean_x.iter_mut().for_each(|m| *m /= n as f64);
        for p in 0..n {
            for ((s, m), v) in sd_x.iter_mut().zip(&mean_x).zip(self.paths.x(p, k)) {
                *s += (v - m) * (v - m);
            }
        }
        sd_x.iter_mut().for_each(|s| *s = (*s / n as f64).sqrt());
        let spread = sd_x.iter().cloned().fold(0.0, f64::max);
        let scale = 1.0 + mean_x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let exps = if spread <= 1e-12 * scale { exponents(d, 0) } else { exponents(d, self.order) };
        let nb = exps.len();
        let design = |p: usize, row: &mut [f64]| {
            let x = self.paths.x(p, k);
            for (b, e) in exps.iter().enumerate() {
                let mut v = 1.0;
                for ax in 0..d {
                    if e[ax] > 0 {
                        v *= ((x[ax] - mean_x[ax]) / sd_x[ax]).powi(e[ax] as i32);
                    }
                }
                row[b] = v;
            }
        };
        let mut gram = DMatrix::<f64>::zeros(nb, nb);
        let mut rhs_y = DVector::<f64>::zeros(nb);
        let mut row = vec![0.0; nb];
        for p in 0..n {
            design(p, &mut row);
            for a in 0..nb {
                rhs_y[a] += row[a] * next[p];
                for b in 0..=a {
                    gram[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..nb {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        let diag_max = (0..nb).map(|a| gram[(a, a)]).fold(0.0, f64::max);
        let chol = gram.clone().cholesky().ok_or(Error::RankDeficient { step: k })?;
        let l = chol.l();
        let diag_min = (0..nb).map(|a| l[(a, a)] * l[(a, a)]).fold(f64::INFINITY, f64::min);
        if diag_min <= 1e-12 * diag_max {
            return Err(Error::RankDeficient { step: k });
        }
        let beta_y = chol.solve(&rhs_y);
        let mut mean = vec![0.0; n];
        let mut resid = vec![0.0; n];
        for p in 0..n {
            design(p, &mut row);
            let fit: f64 = row.iter().zip(beta_y.iter()).map(|(a, b)| a * b).sum();
            mean[p] = fit;
            resid[p] = next[p] - fit;
        }
        // Z by projecting the centred target times ΔB
        let mut z = vec![0.0; n * d];
        for ax in 0..d {
            let mut rhs = DVector::<f64>::zeros(nb);
            for p in 0..n {
                design(p, &mut row);
                let target = resid[p] * self.paths.db(p, k)[ax];
                for a in 0..nb {
                    rhs[a] += row[a] * target;
                }
            }
            let beta = chol.solve(&rhs);
            for p in 0..n {
                design(p, &mut row);
                let fit: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
                z[p * d + ax] = fit / dt;
            }
        }
        Ok(Conditional { mean, z })
    }

    fn law(&self) -> Vec<Vec<f64>> {
        let n = self.paths.n_paths();
        vec![vec![1.0 / n as f64; n]; self.paths.grid().n_steps() + 1]
    }

    fn trajectories(&self, _n_paths: usize, _seed: u64) -> Vec<Vec<u32>> {
        let nodes = self.paths.grid().n_steps() + 1;
        (0..self.paths.n_paths()).map(|p| vec![p as u32; nodes]).collect()
    }

    fn measure_increments(&self, mu: &MeasureData) -> Result<Vec<Vec<f64>>> {
        let owned;
        let r = match self.functional {
            Some(r) => r,
            None => {
                owned = crate::forward::accumulate_functional(self.paths, mu)?;
                &owned
            }
        };
        Ok((0..self.paths.grid().n_steps())
            .map(|k| (0..self.paths.n_paths()).map(|p| r.increment(p, k)).collect())
            .collect())
    }
}

/// Expectation of a per-state quantity at node `k` under the engine law.
pub(crate) fn expect(law: &[f64], v: &[f64]) -> f64 {
    law.iter().zip(v).map(|(p, x)| p * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{build_lattice, simulate_paths, LatticeBox};
    use crate::model::DiffusionSpec;

    #[test]
    fn exponent_sets() {
        assert_eq!(exponents(1, 3).len(), 4);
        assert_eq!(exponents(2, 2).len(), 6);
        assert_eq!(exponents(2, 3).len(), 10);
    }

    #[test]
    fn regression_reproduces_polynomials() {
        let spec = DiffusionSpec::brownian(1).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let paths = simulate_paths(&spec, &grid, (0.0, &[0.0]), 8000, 4).unwrap();
        let eng = RegressionEngine::new(&paths, 3).unwrap();
        // E[X_{k+1}^2 | X_k] = X_k^2 + Δt
        let next: Vec<f64> = (0..8000).map(|p| paths.x(p, 2)[0].powi(2)).collect();
        let c = eng.conditional(1, &next).unwrap();
        let mut worst: f64 = 0.0;
        for p in 0..8000 {
            let x = paths.x(p, 1)[0];
            if x.abs() < 1.0 {
                worst = worst.max((c.mean[p] - (x * x + 0.25)).abs());
            }
        }
        assert!(worst < 0.1, "{worst}");
        // node 0 falls back to the sample mean
        let c0 = eng.conditional(0, &next).unwrap();
        let m = next.iter().sum::<f64>() / 8000.0;
        assert!((c0.mean[17] - m).abs() < 1e-12);
    }

    #[test]
    fn too_few_paths_rejected() {
        let spec = DiffusionSpec::brownian(1).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let paths = simulate_paths(&spec, &grid, (0.0, &[0.0]), 30, 4).unwrap();
        assert!(RegressionEngine::new(&paths, 3).is_err());
    }

    #[test]
    fn lattice_trajectories_follow_law() {
        let spec = DiffusionSpec::brownian(1).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 50).unwrap();
        let bx = LatticeBox::default_for(&spec, &grid, &[0.0], 0.5).unwrap();
        let lat = build_lattice(&spec, &grid, &bx).unwrap();
        let eng = LatticeEngine::new(&lat, &[0.0]).unwrap();
        let tr = eng.trajectories(4000, 11);
        let m2: f64 = tr.iter().map(|t| lat.node(t[50] as usize)[0].powi(2)).sum::<f64>() / 4000.0;
        assert!((m2 - 1.0).abs() < 0.1, "{m2}");
        assert!(LatticeEngine::new(&lat, &[0.013]).is_err());
    }
}
