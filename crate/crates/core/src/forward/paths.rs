use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::DiffusionSpec;

/// Paths per RNG stream. Each block draws from its own ChaCha stream keyed by
/// `(seed, block index)`, so output does not depend on the thread count.
pub const PATH_BLOCK: usize = 256;

const MAGIC: &[u8; 4] = b"OBPB";
const FORMAT_VERSION: u32 = 1;

/// Euler–Maruyama paths `X[path][node]` with their Brownian increments `dB[path][step]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    grid: TimeGrid,
    dim: usize,
    n_paths: usize,
    start: Vec<f64>,
    seed: u64,
    x: Vec<f64>,
    db: Vec<f64>,
}

impl PathBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn start(&self) -> (f64, &[f64]) {
        (self.grid.t0(), &self.start)
    }

    pub fn x(&self, path: usize, node: usize) -> &[f64] {
        let n = self.grid.n_steps() + 1;
        let o = (path * n + node) * self.dim;
        &self.x[o..o + self.dim]
    }

    pub fn db(&self, path: usize, step: usize) -> &[f64] {
        let n = self.grid.n_steps();
        let o = (path * n + step) * self.dim;
        &self.db[o..o + self.dim]
    }

    /// Largest `|mean| / standard error` of the increments over steps and components.
    pub fn increment_mean_score(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let np = self.n_paths as f64;
        for k in 0..self.grid.n_steps() {
            for c in 0..self.dim {
                let (s, s2) = (0..self.n_paths)
                    .map(|p| self.db(p, k)[c])
                    .fold((0.0, 0.0), |(a, b), v| (a + v, b + v * v));
                let mean = s / np;
                let var = (s2 / np - mean * mean).max(1e-300);
                worst = worst.max(mean.abs() / (var / np).sqrt());
            }
        }
        worst
    }

    /// Little-endian binary layout:
    /// `"OBPB" | version u32 | dim u32 | n_paths u64 | n_nodes u64 | seed u64 |
    /// nodes[n_nodes] f64 | start[dim] f64 | X[path][node][dim] f64 | dB[path][step][dim] f64`.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.n_paths as u64).to_le_bytes())?;
        w.write_all(&(self.grid.nodes().len() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in self.grid.nodes().iter().chain(&self.start).chain(&self.x).chain(&self.db) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::invalid("not a path bundle (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported path bundle version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        let n_paths = read_u64(&mut r)? as usize;
        let n_nodes = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let read_vec = |r: &mut dyn Read, n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let nodes = read_vec(&mut r, n_nodes)?;
        let start = read_vec(&mut r, dim)?;
        let x = read_vec(&mut r, n_paths * n_nodes * dim)?;
        let db = read_vec(&mut r, n_paths * (n_nodes - 1) * dim)?;
        let grid = TimeGrid::from_nodes(nodes)?;
        Ok(PathBundle { grid, dim, n_paths, start, seed, x, db })
    }

    /// `path,node,time,x0..,db0..` rows; `db` is empty on the terminal node.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let d = self.dim;
        let xs: Vec<String> = (0..d).map(|c| format!("x{c}")).collect();
        let dbs: Vec<String> = (0..d).map(|c| format!("db{c}")).collect();
        writeln!(w, "path,node,time,{},{}", xs.join(","), dbs.join(","))?;
        let n = self.grid.n_steps();
        for p in 0..self.n_paths {
            for k in 0..=n {
                let xv: Vec<String> = self.x(p, k).iter().map(|v| format!("{v:.17e}")).collect();
                let dv: Vec<String> = if k < n {
                    self.db(p, k).iter().map(|v| format!("{v:.17e}")).collect()
                } else {
                    vec![String::new(); d]
                };
                writeln!(w, "{p},{k},{:.17e},{},{}", self.grid.time(k), xv.join(","), dv.join(","))?;
            }
        }
        Ok(())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Simulates `X_{k+1} = X_k + (b + ½ div a)(τ_k, X_k) Δt + σ(τ_k, X_k) ΔB_k` from `(s, x)`.
pub fn simulate_paths(
    spec: &DiffusionSpec,
    grid: &TimeGrid,
    (s, x0): (f64, &[f64]),
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    let d = spec.dim();
    if x0.len() != d {
        return Err(Error::invalid(format!("start point has dimension {}, spec has {d}", x0.len())));
    }
    if (s - grid.t0()).abs() > 1e-12 * (1.0 + s.abs()) {
        return Err(Error::invalid(format!("start time {s} differs from grid origin {}", grid.t0())));
    }
    if n_paths == 0 {
        return Err(Error::invalid("n_paths must be positive"));
    }
    let n = grid.n_steps();
    let n_blocks = n_paths.div_ceil(PATH_BLOCK);

    // Constant coefficients: factor once.
    let frozen = if spec.is_constant() {
        let mut sig = vec![0.0; d * d];
        spec.sigma_into(grid.t0(), x0, &mut sig)?;
        let mut mu = vec![0.0; d];
        spec.ito_drift_into(grid.t0(), x0, &mut mu);
        Some((sig, mu))
    } else {
        None
    };

    let blocks: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let lo = b * PATH_BLOCK;
            let hi = (lo + PATH_BLOCK).min(n_paths);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut xs = Vec::with_capacity((hi - lo) * (n + 1) * d);
            let mut dbs = Vec::with_capacity((hi - lo) * n * d);
            let mut cur = vec![0.0; d];
            let mut sig = vec![0.0; d * d];
            let mut mu = vec![0.0; d];
            let mut z = vec![0.0; d];
            for _ in lo..hi {
                cur.copy_from_slice(x0);
                xs.extend_from_slice(&cur);
                for k in 0..n {
                    let t = grid.time(k);
                    let dt = grid.dt(k);
                    let sq = dt.sqrt();
                    match &frozen {
                        Some((s0, m0)) => {
                            sig.copy_from_slice(s0);
                            mu.copy_from_slice(m0);
                        }
                        None => {
                            spec.sigma_into(t, &cur, &mut sig)?;
                            spec.ito_drift_into(t, &cur, &mut mu);
                        }
                    }
                    for zc in z.iter_mut() {
                        *zc = StandardNormal.sample(&mut rng);
                        *zc *= sq;
                    }
                    dbs.extend_from_slice(&z);
                    for i in 0..d {
                        let mut diff = 0.0;
                        for j in 0..=i {
                            diff += sig[i * d + j] * z[j];
                        }
                        cur[i] += mu[i] * dt + diff;
                    }
                    xs.extend_from_slice(&cur);
                }
            }
            Ok((xs, dbs))
        })
        .collect();

    let mut x = Vec::with_capacity(n_paths * (n + 1) * d);
    let mut db = Vec::with_capacity(n_paths * n * d);
    for blk in blocks {
        let (bx, bd) = blk?;
        x.extend(bx);
        db.extend(bd);
    }
    Ok(PathBundle { grid: grid.clone(), dim: d, n_paths, start: x0.to_vec(), seed, x, db })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn moments(b: &PathBundle, c: usize) -> (f64, f64, f64) {
        let n = b.grid().n_steps();
        let np = b.n_paths() as f64;
        let vals: Vec<f64> = (0..b.n_paths()).map(|p| b.x(p, n)[c] - b.start().1[c]).collect();
        let mean = vals.iter().sum::<f64>() / np;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (np - 1.0);
        let m2: Vec<f64> = vals.iter().map(|v| v * v).collect();
        let m2_mean = m2.iter().sum::<f64>() / np;
        let m2_se = (m2.iter().map(|v| (v - m2_mean).powi(2)).sum::<f64>() / (np - 1.0) / np).sqrt();
        let _ = var;
        (mean, m2_mean, m2_se)
    }

    #[test]
    fn brownian_variance_matches_heat_kernel() {
        let spec = DiffusionSpec::brownian(1).unwrap();
        let grid = TimeGrid::uniform(0.0, 0.8, 40).unwrap();
        let b = simulate_paths(&spec, &grid, (0.0, &[0.5]), 20_000, 7).unwrap();
        let (_, m2, se) = moments(&b, 0);
        assert!((m2 - 0.8).abs() <= 3.0 * se, "{m2} vs 0.8 (se {se})");
        assert!(b.increment_mean_score() < 5.0);
        for p in 0..10 {
            assert_eq!(b.x(p, 0), &[0.5]);
        }
    }

    #[test]
    fn drifted_brownian_mean() {
        let spec = DiffusionSpec::constant(vec![1.0], vec![0.7]).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 20).unwrap();
        let b = simulate_paths(&spec, &grid, (0.0, &[0.0]), 20_000, 11).unwrap();
        let n = 20;
        let vals: Vec<f64> = (0..b.n_paths()).map(|p| b.x(p, n)[0]).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let se = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() as f64 - 1.0)
            / vals.len() as f64)
            .sqrt();
        assert!((m - 0.7).abs() <= 3.0 * se, "{m} (se {se})");
    }

    #[test]
    fn weak_error_against_fine_run() {
        // a(x) = (1 + 0.5 sin x)², b = 0: the coarse Euler mean of X_T must agree
        // with a fine-step, larger run within combined statistical error.
        let spec = DiffusionSpec::new(
            1,
            Arc::new(|_, x: &[f64], out: &mut [f64]| out[0] = (1.0 + 0.5 * x[0].sin()).powi(2)),
            Arc::new(|_, _, out: &mut [f64]| out[0] = 0.0),
            0.25,
            2.25,
        )
        .unwrap()
        .time_homogeneous(true);
        let coarse = simulate_paths(&spec, &TimeGrid::uniform(0.0, 1.0, 25).unwrap(), (0.0, &[0.3]), 40_000, 1)
            .unwrap();
        let fine = simulate_paths(&spec, &TimeGrid::uniform(0.0, 1.0, 200).unwrap(), (0.0, &[0.3]), 80_000, 2)
            .unwrap();
        let stat = |b: &PathBundle| {
            let n = b.grid().n_steps();
            let v: Vec<f64> = (0..b.n_paths()).map(|p| b.x(p, n)[0]).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0);
            (m, (s2 / v.len() as f64).sqrt())
        };
        let (mc, sc) = stat(&coarse);
        let (mf, sf) = stat(&fine);
        assert!((mc - mf).abs() <= 4.0 * (sc * sc + sf * sf).sqrt() + 0.02, "{mc} vs {mf}");
    }

    #[test]
    fn seed_determinism_and_thread_independence() {
        let spec = DiffusionSpec::constant(vec![1.0, 0.3, 0.3, 2.0], vec![0.1, -0.2]).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let a = simulate_paths(&spec, &grid, (0.0, &[0.0, 1.0]), 1000, 99).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate_paths(&spec, &grid, (0.0, &[0.0, 1.0]), 1000, 99).unwrap());
        assert_eq!(a, b);
        let c = simulate_paths(&spec, &grid, (0.0, &[0.0, 1.0]), 1000, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn binary_round_trip() {
        let spec = DiffusionSpec::brownian(2).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        let a = simulate_paths(&spec, &grid, (0.0, &[0.0, 0.0]), 300, 3).unwrap();
        let mut buf = Vec::new();
        a.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 8 + 8 + 8 * (6 + 2 + 300 * 6 * 2 + 300 * 5 * 2));
        let b = PathBundle::read_binary(&buf[..]).unwrap();
        assert_eq!(a, b);
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("path,node,time,x0,x1,db0,db1\n"));
        assert_eq!(text.lines().count(), 1 + 300 * 6);
    }

    #[test]
    fn start_time_must_match_grid() {
        let spec = DiffusionSpec::brownian(1).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        assert!(simulate_paths(&spec, &grid, (0.1, &[0.0]), 10, 1).is_err());
    }
}
