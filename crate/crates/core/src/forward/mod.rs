//! The Markov family of the divergence-form operator: Monte Carlo paths, a
//! lattice surrogate for the transition density, the additive functional
//! driven by a measure density, and the closed-form Gaussian kernel.

mod lattice;
mod paths;

pub use lattice::{build_lattice, LatticeBox, MarkovLattice, StepKernel};
pub use paths::{simulate_paths, PathBundle, PATH_BLOCK};

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{cholesky_in_place, DiffusionSpec, MeasureData};

/// Additive functional `R[path][node]`, `R[·][0] = 0`, accumulated with
/// left-point quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalPath {
    n_paths: usize,
    n_nodes: usize,
    r: Vec<f64>,
}

impl FunctionalPath {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }
    pub fn value(&self, path: usize, node: usize) -> f64 {
        self.r[path * self.n_nodes + node]
    }
    pub fn path(&self, path: usize) -> &[f64] {
        &self.r[path * self.n_nodes..(path + 1) * self.n_nodes]
    }
    /// Increment over step `k`, i.e. `R_{τ_{k+1}} − R_{τ_k}`.
    pub fn increment(&self, path: usize, k: usize) -> f64 {
        self.value(path, k + 1) - self.value(path, k)
    }
    /// `R_{τ_j, τ_k} = R_{τ_k} − R_{τ_j}` along one path.
    pub fn between(&self, path: usize, j: usize, k: usize) -> f64 {
        self.value(path, k) - self.value(path, j)
    }
}

/// `R[p][k] = Σ_{j<k} q(τ_j, X[p][j]) Δt_j`.
pub fn accumulate_functional(paths: &PathBundle, mu: &MeasureData) -> Result<FunctionalPath> {
    let grid = paths.grid();
    let n_nodes = grid.n_steps() + 1;
    let rows: Vec<Result<Vec<f64>>> = (0..paths.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut row = Vec::with_capacity(n_nodes);
            let mut acc = 0.0;
            row.push(0.0);
            for k in 0..grid.n_steps() {
                let t = grid.time(k);
                let x = paths.x(p, k);
                let q = mu.density_at(t, x);
                if !(q >= 0.0) {
                    return Err(Error::NegativeDensity { t, x: x.to_vec(), value: q });
                }
                acc += q * grid.dt(k);
                row.push(acc);
            }
            Ok(row)
        })
        .collect();
    let mut r = Vec::with_capacity(paths.n_paths() * n_nodes);
    for row in rows {
        r.extend(row?);
    }
    Ok(FunctionalPath { n_paths: paths.n_paths(), n_nodes, r })
}

/// Transition density of the constant-coefficient diffusion: normal with
/// mean `x + b(t−s)` and covariance `a(t−s)`.
pub fn gaussian_density(s: f64, x: &[f64], t: f64, y: &[f64], spec: &DiffusionSpec) -> Result<f64> {
    if !spec.is_constant() {
        return Err(Error::invalid("closed-form transition density needs constant coefficients"));
    }
    if !(t > s) {
        return Err(Error::invalid(format!("transition density needs t > s, got s={s}, t={t}")));
    }
    let d = spec.dim();
    let tau = t - s;
    let mut cov = spec.a_at(s, x);
    cov.iter_mut().for_each(|v| *v *= tau);
    let b = spec.b_at(s, x);
    if !cholesky_in_place(&mut cov, d) {
        return Err(Error::Decomposition { t: s, x: x.to_vec() });
    }
    // solve L w = y - mean
    let mut w = vec![0.0; d];
    let mut log_det = 0.0;
    for i in 0..d {
        let mut v = y[i] - x[i] - b[i] * tau;
        for j in 0..i {
            v -= cov[i * d + j] * w[j];
        }
        w[i] = v / cov[i * d + i];
        log_det += cov[i * d + i].ln();
    }
    let q: f64 = w.iter().map(|v| v * v).sum();
    Ok((-0.5 * q - log_det - 0.5 * d as f64 * (2.0 * PI).ln()).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::model::simpson;
    use std::sync::Arc;

    #[test]
    fn standard_normal_peak() {
        let spec = DiffusionSpec::brownian(1).unwrap();
        let p = gaussian_density(0.0, &[0.4], 1.0, &[0.4], &spec).unwrap();
        assert!((p - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!(gaussian_density(1.0, &[0.0], 1.0, &[0.0], &spec).is_err());
    }

    #[test]
    fn density_normalizes() {
        let spec = DiffusionSpec::brownian(1).unwrap();
        let mass = simpson(|y| gaussian_density(0.0, &[0.0], 1.0, &[y], &spec).unwrap(), -12.0, 12.0, 2000);
        assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn two_dimensional_covariance_by_quadrature() {
        let spec = DiffusionSpec::constant(vec![1.0, 0.0, 0.0, 4.0], vec![0.0, 0.0]).unwrap();
        let p = |y0: f64, y1: f64| gaussian_density(0.0, &[0.0, 0.0], 0.5, &[y0, y1], &spec).unwrap();
        let n = 400;
        let m00 = simpson(|u| simpson(|v| u * u * p(u, v), -10.0, 10.0, n), -6.0, 6.0, n);
        let m11 = simpson(|u| simpson(|v| v * v * p(u, v), -10.0, 10.0, n), -6.0, 6.0, n);
        let m01 = simpson(|u| simpson(|v| u * v * p(u, v), -10.0, 10.0, n), -6.0, 6.0, n);
        assert!((m00 - 0.5).abs() < 1e-6);
        assert!((m11 - 2.0).abs() < 1e-6);
        assert!(m01.abs() < 1e-6);
    }

    #[test]
    fn functional_clock_and_zero() {
        let spec = DiffusionSpec::brownian(1).unwrap();
        let grid = TimeGrid::uniform(0.25, 1.0, 30).unwrap();
        let paths = simulate_paths(&spec, &grid, (0.25, &[0.0]), 50, 5).unwrap();
        let zero = accumulate_functional(&paths, &MeasureData::zero()).unwrap();
        assert!((0..50).all(|p| zero.path(p).iter().all(|v| *v == 0.0)));
        let clock = accumulate_functional(&paths, &MeasureData::constant(1.0)).unwrap();
        for p in 0..50 {
            for k in 0..=30 {
                assert!((clock.value(p, k) - (grid.time(k) - 0.25)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn functional_is_additive_and_nondecreasing() {
        let spec = DiffusionSpec::brownian(1).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 40).unwrap();
        let paths = simulate_paths(&spec, &grid, (0.0, &[0.0]), 100, 9).unwrap();
        let r = accumulate_functional(&paths, &MeasureData::from_density(Arc::new(|_, x| x[0] * x[0]))).unwrap();
        for p in 0..100 {
            assert!(r.path(p).windows(2).all(|w| w[1] >= w[0]));
            let total = r.between(p, 0, 40);
            let split = r.between(p, 0, 17) + r.between(p, 17, 40);
            assert!((total - split).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_density_expectation() {
        // E R_T = Σ_j Δt E[X_{τ_j}²] = Σ_j Δt (x² + τ_j − s): left-point Gaussian moments.
        let spec = DiffusionSpec::brownian(1).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 50).unwrap();
        let x0 = 0.5;
        let paths = simulate_paths(&spec, &grid, (0.0, &[x0]), 40_000, 21).unwrap();
        let r = accumulate_functional(&paths, &MeasureData::from_density(Arc::new(|_, x| x[0] * x[0]))).unwrap();
        let vals: Vec<f64> = (0..paths.n_paths()).map(|p| r.value(p, 50)).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let se = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() as f64 - 1.0)
            / vals.len() as f64)
            .sqrt();
        let oracle: f64 = (0..50).map(|j| grid.dt(j) * (x0 * x0 + grid.time(j))).sum();
        assert!((m - oracle).abs() <= 3.0 * se, "{m} vs {oracle} (se {se})");
    }

    #[test]
    fn negative_density_is_rejected() {
        let spec = DiffusionSpec::brownian(1).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let paths = simulate_paths(&spec, &grid, (0.0, &[0.0]), 10, 1).unwrap();
        let bad = MeasureData::from_density(Arc::new(|_, _| -1.0));
        assert!(matches!(accumulate_functional(&paths, &bad), Err(Error::NegativeDensity { .. })));
    }
}
