//! Inf-convolution `f_n(x) = inf_y { f(y) + n|x − y| }` over a finite point set.
//!
//! For linear-growth `f` the approximants are n-Lipschitz and increase to `f`
//! as `n → ∞`; they drive the minimal/maximal solution constructions in
//! [`crate::gbsde`].

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::DriverSpec;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Exhaustive minimum of `f(y) + n|query − y|` over `grid`.
pub fn inf_convolution(f: &dyn Fn(&[f64]) -> f64, n: f64, grid: &[Vec<f64>], query: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    Ok(grid.iter().map(|y| f(y) + n * dist(query, y)).fold(f64::INFINITY, f64::min))
}

/// Uniform 1D grid of integer multiples of `spacing = 1/n²` covering `[lo, hi]`.
/// Anchoring at 0 makes grids for different boxes share points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineGrid {
    pub lo: f64,
    pub hi: f64,
    pub spacing: f64,
    pub len: usize,
    first: i64,
}

impl LineGrid {
    pub fn for_level(n: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(n > 0.0) {
            return Err(Error::invalid(format!("inf-convolution level n={n}")));
        }
        Self::with_spacing(1.0 / (n * n), lo, hi)
    }

    pub fn with_spacing(spacing: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) || !(spacing > 0.0) {
            return Err(Error::invalid(format!("inf-convolution box [{lo}, {hi}] with spacing {spacing}")));
        }
        let first = (lo / spacing).floor() as i64;
        let last = (hi / spacing).ceil() as i64;
        Ok(LineGrid {
            lo: first as f64 * spacing,
            hi: last as f64 * spacing,
            spacing,
            len: (last - first) as usize + 1,
            first,
        })
    }

    pub fn point(&self, j: usize) -> f64 {
        (self.first + j as i64) as f64 * self.spacing
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len).map(|j| vec![self.point(j)]).collect()
    }

    /// Same value as the exhaustive minimum, searching outward from the
    /// query and stopping once no farther point can win. `growth = (k, c)`
    /// is a lower bound `f(y) ≥ −k|y| − c`; the search is exhaustive when
    /// `n ≤ k`.
    pub fn inf_convolve(&self, f: impl Fn(f64) -> f64, n: f64, query: f64, growth: (f64, f64)) -> f64 {
        let (k, c) = growth;
        let j0 = (((query - self.lo) / self.spacing).round().max(0.0) as usize).min(self.len - 1);
        let mut best = f(self.point(j0)) + n * (query - self.point(j0)).abs();
        let mut below = j0;
        let mut above = j0;
        loop {
            let mut moved = false;
            if below > 0 {
                below -= 1;
                let y = self.point(below);
                best = best.min(f(y) + n * (query - y).abs());
                moved = true;
            }
            if above + 1 < self.len {
                above += 1;
                let y = self.point(above);
                best = best.min(f(y) + n * (query - y).abs());
                moved = true;
            }
            if !moved {
                break;
            }
            if n > k {
                let reach_below = if below == 0 { f64::INFINITY } else { (query - self.point(below)).abs() };
                let reach_above =
                    if above + 1 == self.len { f64::INFINITY } else { (self.point(above) - query).abs() };
                let reach = reach_below.min(reach_above);
                let floor = n * reach - k * (query.abs() + reach) - c;
                if floor > best {
                    break;
                }
            }
        }
        best
    }
}

/// Driver whose `f` and `g` are replaced by their inf-convolutions in `y`
/// over `grid` at level `n`. The growth constants of `driver` bound the
/// search window. Sharing one grid across levels keeps the approximants
/// ordered in `n`.
pub fn inf_convolved_driver(driver: &DriverSpec, n: f64, grid: LineGrid) -> DriverSpec {
    let f = driver.f.clone();
    let g = driver.g.clone();
    let gamma = driver.gamma.clone();
    let k = driver.const_k;
    let m = driver.const_m;
    let fg = grid;
    let f_n = Arc::new(move |t: f64, x: &[f64], y: f64, z: &[f64]| {
        let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let c = k * (gamma(t, x).abs() + zn);
        fg.inf_convolve(|yy| f(t, x, yy, z), n, y, (k, c))
    });
    let g_n = Arc::new(move |t: f64, x: &[f64], y: f64| grid.inf_convolve(|yy| g(t, x, yy), n, y, (0.0, m)));
    DriverSpec { f: f_n, g: g_n, const_l: None, ..driver.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_function_is_fixed() {
        let grid: Vec<Vec<f64>> = (0..=100).map(|i| vec![-1.0 + 0.02 * i as f64]).collect();
        for n in [1.0, 5.0, 40.0] {
            let v = inf_convolution(&|_| 2.5, n, &grid, &grid[68]).unwrap();
            assert!((v - 2.5).abs() < 1e-15);
        }
    }

    #[test]
    fn lipschitz_function_reproduced() {
        let g = LineGrid::for_level(3.0, -1.0, 1.0).unwrap();
        let pts = g.points();
        for q in pts.iter().step_by(5) {
            let v = inf_convolution(&|y| y[0].abs(), 3.0, &pts, q).unwrap();
            assert!((v - q[0].abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_grid_is_an_error() {
        assert!(matches!(inf_convolution(&|_| 0.0, 1.0, &[], &[0.0]), Err(Error::EmptyGrid)));
    }

    #[test]
    fn sqrt_at_origin_matches_dense_brute_force() {
        // Independent oracle: dense 10^4-panel grid on [-1, 1].
        let f = |y: f64| y.abs().sqrt();
        let dense = (0..=10_000).map(|i| -1.0 + 2.0 * i as f64 / 10_000.0);
        let oracle = dense.map(|y| f(y) + 2.0 * y.abs()).fold(f64::INFINITY, f64::min);
        let g = LineGrid::for_level(2.0, -1.0, 1.0).unwrap();
        let v = inf_convolution(&|y| f(y[0]), 2.0, &g.points(), &[0.0]).unwrap();
        // Both grids contain 0, where the infimum 0 is attained.
        assert_eq!(oracle, 0.0);
        assert_eq!(v, 0.0);
        // Away from the origin the coarse (spacing 1/n²) grid is within C/n.
        let q = 0.4;
        let oracle_q = (0..=10_000)
            .map(|i| -1.0 + 2.0 * i as f64 / 10_000.0)
            .map(|y| f(y) + 2.0 * (q - y).abs())
            .fold(f64::INFINITY, f64::min);
        let vq = inf_convolution(&|y| f(y[0]), 2.0, &g.points(), &[q]).unwrap();
        assert!(vq >= oracle_q - 1e-3 && vq - oracle_q < 0.5, "{vq} vs {oracle_q}");
    }

    #[test]
    fn windowed_search_matches_exhaustive() {
        let f = |y: f64| (y.max(0.0)).sqrt().min(1.0) + 0.3 * (3.0 * y).sin();
        for n in [1.0, 4.0, 16.0] {
            let g = LineGrid::for_level(n, -3.0, 3.0).unwrap();
            let pts = g.points();
            for q in [-2.9, -0.5, 0.0, 0.01, 0.77, 2.5, 3.4] {
                let ex = inf_convolution(&|y| f(y[0]), n, &pts, &[q]).unwrap();
                let w = g.inf_convolve(f, n, q, (0.0, 1.3));
                assert!((ex - w).abs() < 1e-14, "n={n} q={q}: {ex} vs {w}");
            }
        }
    }

    proptest! {
        #[test]
        fn monotone_in_n_and_below_f(q in -0.95f64..0.95, n in 1u32..12) {
            let f = |y: &[f64]| y[0].abs().sqrt() - 0.5 * y[0];
            let grid = LineGrid::for_level(f64::from(n + 1), -1.0, 1.0).unwrap().points();
            let a = inf_convolution(&f, f64::from(n), &grid, &[q]).unwrap();
            let b = inf_convolution(&f, f64::from(n + 1), &grid, &[q]).unwrap();
            prop_assert!(a <= b + 1e-14);
            // f itself evaluated at grid points bounds from above
            for y in grid.iter().step_by(97) {
                let fy = f(y);
                let at = inf_convolution(&f, f64::from(n + 1), &grid, y).unwrap();
                prop_assert!(at <= fy + 1e-14);
            }
        }

        #[test]
        fn output_is_n_lipschitz(q1 in -1.0f64..1.0, q2 in -1.0f64..1.0, n in 1u32..20) {
            let f = |y: &[f64]| (3.0 * y[0]).cos() + y[0].abs().sqrt();
            let nf = f64::from(n);
            let grid = LineGrid::for_level(nf, -1.0, 1.0).unwrap().points();
            let a = inf_convolution(&f, nf, &grid, &[q1]).unwrap();
            let b = inf_convolution(&f, nf, &grid, &[q2]).unwrap();
            prop_assert!((a - b).abs() <= nf * (q1 - q2).abs() + 1e-12);
        }
    }
}
