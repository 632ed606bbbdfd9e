//! Time partitions and polynomial weights.

use crate::error::{Error, Result};

/// Partition `t0 = τ_0 < … < τ_N = T` of the time horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    uniform: bool,
}

impl TimeGrid {
    pub fn uniform(t0: f64, horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        if !(horizon > t0) || !t0.is_finite() || !horizon.is_finite() {
            return Err(Error::invalid(format!("time grid needs t0 < T, got [{t0}, {horizon}]")));
        }
        let dt = (horizon - t0) / n_steps as f64;
        let mut nodes: Vec<f64> = (0..=n_steps).map(|k| t0 + k as f64 * dt).collect();
        nodes[n_steps] = horizon;
        Ok(TimeGrid { nodes, uniform: true })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid("time grid needs at least two nodes"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("time grid nodes must be strictly increasing"));
        }
        let h = (nodes[nodes.len() - 1] - nodes[0]) / (nodes.len() - 1) as f64;
        let uniform = nodes.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * h.max(1.0));
        Ok(TimeGrid { nodes, uniform })
    }

    pub fn t0(&self) -> f64 {
        self.nodes[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn time(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Length of step `k`, i.e. `τ_{k+1} − τ_k`.
    pub fn dt(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn max_dt(&self) -> f64 {
        (0..self.n_steps()).map(|k| self.dt(k)).fold(0.0, f64::max)
    }

    /// Index of the last node with `τ_k ≤ t` (clamped to the grid).
    pub fn index_at_or_before(&self, t: f64) -> usize {
        match self.nodes.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(k) => k,
            Err(0) => 0,
            Err(k) => (k - 1).min(self.n_steps()),
        }
    }

    /// The grid restricted to `[τ_k0, T]`.
    pub fn tail(&self, k0: usize) -> TimeGrid {
        TimeGrid { nodes: self.nodes[k0..].to_vec(), uniform: self.uniform }
    }
}

/// Polynomial weight `ρ(x) = (1+|x|²)^(−α)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSpec {
    pub alpha: f64,
}

impl WeightSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!("weight exponent must be nonnegative, got {alpha}")));
        }
        Ok(WeightSpec { alpha })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        weight_eval(self, x)
    }
}

pub fn weight_eval(w: &WeightSpec, x: &[f64]) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    (1.0 + r2).powf(-w.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weight_examples() {
        let w1 = WeightSpec::new(1.0).unwrap();
        assert_eq!(w1.eval(&[0.0]), 1.0);
        assert_eq!(w1.eval(&[1.0, 0.0]), 0.5);
        let w0 = WeightSpec::new(0.0).unwrap();
        assert_eq!(w0.eval(&[3.0, -7.0]), 1.0);
        assert!(WeightSpec::new(-0.5).is_err());
    }

    #[test]
    fn uniform_grid_ends_at_horizon() {
        let g = TimeGrid::uniform(0.2, 1.3, 7).unwrap();
        assert_eq!(g.n_steps(), 7);
        assert_eq!(g.horizon(), 1.3);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        assert!((g.dt(3) - 1.1 / 7.0).abs() < 1e-14);
        assert_eq!(g.index_at_or_before(0.2), 0);
        assert_eq!(g.index_at_or_before(5.0), 7);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TimeGrid::uniform(0.0, 1.0, 0).is_err());
        assert!(TimeGrid::uniform(1.0, 1.0, 3).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5]).is_err());
    }

    proptest! {
        #[test]
        fn weight_is_radially_decreasing(alpha in 0.0f64..4.0, r1 in 0.0f64..50.0, r2 in 0.0f64..50.0) {
            let w = WeightSpec::new(alpha).unwrap();
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let a = w.eval(&[lo, 0.0]);
            let b = w.eval(&[0.0, hi]);
            prop_assert!(a >= b);
            prop_assert!(a <= 1.0 && b > 0.0);
        }
    }
}
