//! Coefficient specifications: the diffusion operator
//! `L_t = ½ Σ ∂_i(a_ij ∂_j) + Σ b_i ∂_i`, the BSDE driver and the measure data.
//!
//! Coefficients are opaque closures. Structural hypotheses (ellipticity,
//! growth, Lipschitz bounds) are checked by probing, not proved.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// `(t, x) -> real`.
pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// `(t, x, out)`; writes a d-vector (or a row-major d×d matrix) into `out`.
pub type FieldFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, y, z) -> real`.
pub type DriverFn = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;
/// `(t, x, y) -> real`.
pub type MeasureCoeffFn = Arc<dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync>;
/// `x -> real`.
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Lower-triangular Cholesky factor of a row-major `d×d` matrix, in place.
/// Returns `false` when the matrix is not (numerically) positive definite.
pub(crate) fn cholesky_in_place(m: &mut [f64], d: usize) -> bool {
    for j in 0..d {
        let mut diag = m[j * d + j];
        for k in 0..j {
            diag -= m[j * d + k] * m[j * d + k];
        }
        if !(diag > 0.0) {
            return false;
        }
        let ljj = diag.sqrt();
        m[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut s = m[i * d + j];
            for k in 0..j {
                s -= m[i * d + k] * m[j * d + k];
            }
            m[i * d + j] = s / ljj;
        }
        for k in (j + 1)..d {
            m[j * d + k] = 0.0;
        }
    }
    true
}

#[derive(Clone)]
pub struct DiffusionSpec {
    dim: usize,
    a: FieldFn,
    b: FieldFn,
    div_a: Option<FieldFn>,
    lambda_lo: f64,
    lambda_hi: f64,
    /// Coefficients do not depend on `t`.
    time_homogeneous: bool,
    /// Coefficients depend on neither `t` nor `x`.
    constant: bool,
}

impl fmt::Debug for DiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionSpec")
            .field("dim", &self.dim)
            .field("lambda_lo", &self.lambda_lo)
            .field("lambda_hi", &self.lambda_hi)
            .field("analytic_div_a", &self.div_a.is_some())
            .field("constant", &self.constant)
            .finish()
    }
}

impl DiffusionSpec {
    pub fn new(dim: usize, a: FieldFn, b: FieldFn, lambda_lo: f64, lambda_hi: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if !(lambda_lo > 0.0) || !(lambda_hi >= lambda_lo) {
            return Err(Error::invalid(format!(
                "ellipticity bounds need 0 < lambda <= Lambda, got ({lambda_lo}, {lambda_hi})"
            )));
        }
        Ok(DiffusionSpec {
            dim,
            a,
            b,
            div_a: None,
            lambda_lo,
            lambda_hi,
            time_homogeneous: false,
            constant: false,
        })
    }

    /// Constant coefficients; `a` is row-major `d×d`. Ellipticity bounds are
    /// the extreme eigenvalues of `a`, widened so that `|b_i| ≤ Λ`.
    pub fn constant(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let dim = b.len();
        if a.len() != dim * dim {
            return Err(Error::invalid("constant diffusion: a must be d x d with d = len(b)"));
        }
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, &a)).eigenvalues;
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(lo > 0.0) {
            return Err(Error::Decomposition { t: 0.0, x: vec![0.0; dim] });
        }
        let bmax = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let a_arc = Arc::new(a);
        let b_arc = Arc::new(b);
        let mut spec = DiffusionSpec::new(
            dim,
            Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&a_arc)),
            Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&b_arc)),
            lo,
            hi.max(bmax),
        )?;
        spec.div_a = Some(Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)));
        spec.time_homogeneous = true;
        spec.constant = true;
        Ok(spec)
    }

    /// Standard Brownian motion in `dim` dimensions.
    pub fn brownian(dim: usize) -> Result<Self> {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = 1.0;
        }
        Self::constant(a, vec![0.0; dim])
    }

    pub fn with_div_a(mut self, div_a: FieldFn) -> Self {
        self.div_a = Some(div_a);
        self
    }

    pub fn time_homogeneous(mut self, yes: bool) -> Self {
        self.time_homogeneous = yes;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn lambda_lo(&self) -> f64 {
        self.lambda_lo
    }
    pub fn lambda_hi(&self) -> f64 {
        self.lambda_hi
    }
    pub fn is_constant(&self) -> bool {
        self.constant
    }
    pub fn is_time_homogeneous(&self) -> bool {
        self.time_homogeneous || self.constant
    }

    pub fn a_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.a)(t, x, out)
    }

    pub fn a_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        (self.a)(t, x, &mut out);
        out
    }

    pub fn b_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.b)(t, x, out)
    }

    pub fn b_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.b)(t, x, &mut out);
        out
    }

    /// `(Σ_j ∂_j a_ij)_i`; central differences with step `1e-5·(1+|x|)` when
    /// no analytic divergence was supplied.
    pub fn div_a_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        if let Some(div) = &self.div_a {
            div(t, x, out);
            return;
        }
        let d = self.dim;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = 1e-5 * (1.0 + norm);
        let mut xp = x.to_vec();
        let mut ap = vec![0.0; d * d];
        let mut am = vec![0.0; d * d];
        out.fill(0.0);
        for j in 0..d {
            xp[j] = x[j] + h;
            (self.a)(t, &xp, &mut ap);
            xp[j] = x[j] - h;
            (self.a)(t, &xp, &mut am);
            xp[j] = x[j];
            for i in 0..d {
                out[i] += (ap[i * d + j] - am[i * d + j]) / (2.0 * h);
            }
        }
    }

    /// Itô drift `b + ½ div a` of the diffusion generated by the divergence-form operator.
    pub fn ito_drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let mut div = vec![0.0; self.dim];
        self.div_a_into(t, x, &mut div);
        (self.b)(t, x, out);
        for (o, v) in out.iter_mut().zip(&div) {
            *o += 0.5 * v;
        }
    }

    /// Lower-triangular σ with σσᵀ = a(t,x).
    pub fn sigma_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.a)(t, x, out);
        if cholesky_in_place(out, self.dim) {
            Ok(())
        } else {
            Err(Error::Decomposition { t, x: x.to_vec() })
        }
    }

    /// Probe-based check of symmetry, `λ|ξ|² ≤ ξᵀaξ ≤ Λ|ξ|²` and `|b_i| ≤ Λ`.
    pub fn validate(&self, probes: &[(f64, Vec<f64>)]) -> Result<()> {
        let d = self.dim;
        let slack = 1e-10 * (1.0 + self.lambda_hi);
        for (t, x) in probes {
            if x.len() != d {
                return Err(Error::invalid(format!("probe {x:?} has wrong dimension")));
            }
            let a = self.a_at(*t, x);
            for i in 0..d {
                for j in 0..i {
                    if (a[i * d + j] - a[j * d + i]).abs() > 1e-12 * (1.0 + a[i * d + j].abs()) {
                        return Err(Error::invalid(format!("a is not symmetric at t={t}, x={x:?}")));
                    }
                }
            }
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &a)).eigenvalues;
            for ev in eig.iter() {
                if *ev < self.lambda_lo - slack || *ev > self.lambda_hi + slack {
                    return Err(Error::invalid(format!(
                        "ellipticity violated at t={t}, x={x:?}: eigenvalue {ev} outside [{}, {}]",
                        self.lambda_lo, self.lambda_hi
                    )));
                }
            }
            for bi in self.b_at(*t, x) {
                if bi.abs() > self.lambda_hi + slack {
                    return Err(Error::invalid(format!(
                        "drift bound |b_i| <= Lambda violated at t={t}, x={x:?}: {bi}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Returns the lower-triangular Cholesky factor of `a(t,x)`, row-major.
pub fn sigma_from_a(spec: &DiffusionSpec, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; spec.dim() * spec.dim()];
    spec.sigma_into(t, x, &mut out)?;
    Ok(out)
}

/// Coefficients of the generalized BSDE
/// `Y_t = φ(X_T) + ∫ f(s,X,Y,Z) ds + ∫ g(s,X,Y) dR − ∫ Z dB`.
#[derive(Clone)]
pub struct DriverSpec {
    pub f: DriverFn,
    pub g: MeasureCoeffFn,
    pub phi: TerminalFn,
    /// γ in the growth bound `|f| ≤ K(|γ| + |y| + |z|)`.
    pub gamma: ScalarFn,
    pub const_k: f64,
    pub const_m: f64,
    pub const_l: Option<f64>,
}

impl fmt::Debug for DriverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriverSpec")
            .field("const_k", &self.const_k)
            .field("const_m", &self.const_m)
            .field("const_l", &self.const_l)
            .finish_non_exhaustive()
    }
}

impl DriverSpec {
    /// `f = 0`, `g = 0`, terminal `phi`.
    pub fn zero(phi: TerminalFn) -> Self {
        DriverSpec {
            f: Arc::new(|_, _, _, _| 0.0),
            g: Arc::new(|_, _, _| 0.0),
            phi,
            gamma: Arc::new(|_, _| 0.0),
            const_k: 0.0,
            const_m: 0.0,
            const_l: Some(0.0),
        }
    }

    /// Linear discounting `f(y) = −r·y`.
    pub fn discounted(rate: f64, phi: TerminalFn) -> Self {
        DriverSpec {
            f: Arc::new(move |_, _, y, _| -rate * y),
            const_k: rate.abs(),
            const_l: Some(rate.abs()),
            ..DriverSpec::zero(phi)
        }
    }

    pub fn with_f(mut self, f: DriverFn, const_k: f64, const_l: Option<f64>) -> Self {
        self.f = f;
        self.const_k = const_k;
        self.const_l = const_l;
        self
    }

    pub fn with_g(mut self, g: MeasureCoeffFn, const_m: f64) -> Self {
        self.g = g;
        self.const_m = const_m;
        self
    }

    pub fn with_gamma(mut self, gamma: ScalarFn) -> Self {
        self.gamma = gamma;
        self
    }

    /// The sign-flipped system `f̄(y,z) = −f(−y,−z)`, `ḡ(y) = −g(−y)`, `φ̄ = −φ`,
    /// whose minimal solution is the negative of the maximal one.
    pub fn flipped(&self) -> DriverSpec {
        let f = self.f.clone();
        let g = self.g.clone();
        let phi = self.phi.clone();
        DriverSpec {
            f: Arc::new(move |t, x, y, z| {
                let nz: Vec<f64> = z.iter().map(|v| -v).collect();
                -f(t, x, -y, &nz)
            }),
            g: Arc::new(move |t, x, y| -g(t, x, -y)),
            phi: Arc::new(move |x| -phi(x)),
            ..self.clone()
        }
    }

    /// Probe check of `|f| ≤ K(|γ|+|y|+|z|)`, `|g| ≤ M` and, when set, the
    /// Lipschitz bound in `(y, z)`. Probes are `(t, x, y, z)`.
    pub fn validate(&self, probes: &[(f64, Vec<f64>, f64, Vec<f64>)]) -> Result<()> {
        let tol = 1e-10;
        for (t, x, y, z) in probes {
            let fv = (self.f)(*t, x, *y, z);
            let zn: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let bound = self.const_k * ((self.gamma)(*t, x).abs() + y.abs() + zn);
            if fv.abs() > bound + tol {
                return Err(Error::invalid(format!(
                    "growth bound violated at t={t}, x={x:?}, y={y}: |f|={} > {bound}",
                    fv.abs()
                )));
            }
            let gv = (self.g)(*t, x, *y);
            if gv.abs() > self.const_m + tol {
                return Err(Error::invalid(format!(
                    "|g| <= M violated at t={t}, x={x:?}, y={y}: |g|={}",
                    gv.abs()
                )));
            }
        }
        if let Some(l) = self.const_l {
            for w in probes.windows(2) {
                let (t, x, y1, z1) = &w[0];
                let (_, _, y2, z2) = &w[1];
                if z1.len() != z2.len() {
                    continue;
                }
                let df = ((self.f)(*t, x, *y1, z1) - (self.f)(*t, x, *y2, z2)).abs();
                let dz: f64 = z1.iter().zip(z2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if df > l * ((y1 - y2).abs() + dz) + tol {
                    return Err(Error::invalid(format!("Lipschitz bound L={l} violated at t={t}, x={x:?}")));
                }
            }
        }
        Ok(())
    }
}

/// `μ = f − div f̄` in weak form: `⟨μ,η⟩ = ∫ f η + ∫ f̄·∇η`.
#[derive(Clone)]
pub struct HMinusOnePair {
    pub f: ScalarFn,
    pub fbar: FieldFn,
}

/// Positive measure on space-time represented by a density `q(t,x) ≥ 0`.
#[derive(Clone)]
pub struct MeasureData {
    pub density: ScalarFn,
    pub pair: Option<HMinusOnePair>,
}

impl fmt::Debug for MeasureData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MeasureData").field("has_pair", &self.pair.is_some()).finish()
    }
}

impl MeasureData {
    pub fn from_density(density: ScalarFn) -> Self {
        MeasureData { density, pair: None }
    }

    pub fn zero() -> Self {
        Self::from_density(Arc::new(|_, _| 0.0))
    }

    pub fn constant(c: f64) -> Self {
        Self::from_density(Arc::new(move |_, _| c))
    }

    pub fn with_pair(mut self, pair: HMinusOnePair) -> Self {
        self.pair = Some(pair);
        self
    }

    pub fn density_at(&self, t: f64, x: &[f64]) -> f64 {
        (self.density)(t, x)
    }

    /// Density truncated at level `n` (bounded integrator for approximation schemes).
    pub fn truncated(&self, level: f64) -> MeasureData {
        let q = self.density.clone();
        MeasureData { density: Arc::new(move |t, x| q(t, x).min(level)), pair: None }
    }

    pub fn validate(&self, probes: &[(f64, Vec<f64>)]) -> Result<()> {
        for (t, x) in probes {
            let v = (self.density)(*t, x);
            if !(v >= 0.0) {
                return Err(Error::NegativeDensity { t: *t, x: x.clone(), value: v });
            }
        }
        Ok(())
    }

    /// Compares `∫∫ q η` with `⟨f,η⟩ + ⟨f̄,∇η⟩` for a 1D test function with
    /// compact support inside `[lo, hi]`, by composite Simpson quadrature in
    /// both variables. Returns `(density pairing, H⁻¹ pairing)`.
    pub fn check_pairing_1d(
        &self,
        eta: &dyn Fn(f64, f64) -> f64,
        deta_dx: &dyn Fn(f64, f64) -> f64,
        (t0, t1): (f64, f64),
        (lo, hi): (f64, f64),
        n: usize,
    ) -> Result<(f64, f64)> {
        let pair = self
            .pair
            .as_ref()
            .ok_or_else(|| Error::invalid("measure has no H^-1 pair to check against"))?;
        let dens = simpson_2d(|t, x| (self.density)(t, &[x]) * eta(t, x), (t0, t1), (lo, hi), n);
        let weak = simpson_2d(
            |t, x| {
                let mut fb = [0.0];
                (pair.fbar)(t, &[x], &mut fb);
                (pair.f)(t, &[x]) * eta(t, x) + fb[0] * deta_dx(t, x)
            },
            (t0, t1),
            (lo, hi),
            n,
        );
        Ok((dens, weak))
    }
}

/// Composite Simpson rule on `[a, b]` with `n` (rounded up to even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 0 { n.max(2) } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn simpson_2d(f: impl Fn(f64, f64) -> f64, (t0, t1): (f64, f64), (lo, hi): (f64, f64), n: usize) -> f64 {
    simpson(|t| simpson(|x| f(t, x), lo, hi, n), t0, t1, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frob_rel(sigma: &[f64], a: &[f64], d: usize) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += sigma[i * d + k] * sigma[j * d + k];
                }
                num += (s - a[i * d + j]).powi(2);
                den += a[i * d + j].powi(2);
            }
        }
        (num / den).sqrt()
    }

    #[test]
    fn sigma_examples() {
        let id = DiffusionSpec::brownian(2).unwrap();
        assert_eq!(sigma_from_a(&id, 0.0, &[0.3, 0.1]).unwrap(), vec![1.0, 0.0, 0.0, 1.0]);

        let diag = DiffusionSpec::constant(vec![4.0, 0.0, 0.0, 9.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(sigma_from_a(&diag, 0.0, &[0.0, 0.0]).unwrap(), vec![2.0, 0.0, 0.0, 3.0]);

        let full = DiffusionSpec::constant(vec![2.0, 1.0, 1.0, 2.0], vec![0.0, 0.0]).unwrap();
        let s = sigma_from_a(&full, 0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(s[1], 0.0);
        assert!(frob_rel(&s, &[2.0, 1.0, 1.0, 2.0], 2) <= 1e-12);
    }

    #[test]
    fn sigma_failure_names_point() {
        let bad = DiffusionSpec::new(
            1,
            Arc::new(|_, x: &[f64], out: &mut [f64]| out[0] = x[0]),
            Arc::new(|_, _, out: &mut [f64]| out[0] = 0.0),
            0.1,
            1.0,
        )
        .unwrap();
        match sigma_from_a(&bad, 0.25, &[-1.0]) {
            Err(Error::Decomposition { t, x }) => {
                assert_eq!(t, 0.25);
                assert_eq!(x, vec![-1.0]);
            }
            other => panic!("expected decomposition error, got {other:?}"),
        }
    }

    #[test]
    fn numerical_divergence_matches_analytic() {
        let spec = DiffusionSpec::new(
            1,
            Arc::new(|_, x: &[f64], out: &mut [f64]| out[0] = (1.0 + 0.5 * x[0].sin()).powi(2)),
            Arc::new(|_, _, out: &mut [f64]| out[0] = 0.0),
            0.25,
            2.25,
        )
        .unwrap();
        for x in [-2.0, -0.3, 0.0, 1.7] {
            let mut d = [0.0];
            spec.div_a_into(0.0, &[x], &mut d);
            let exact = (1.0 + 0.5 * f64::sin(x)) * f64::cos(x);
            assert!((d[0] - exact).abs() < 1e-8, "x={x}: {} vs {exact}", d[0]);
        }
    }

    #[test]
    fn ellipticity_probe_detects_violation() {
        let spec = DiffusionSpec::new(
            1,
            Arc::new(|_, x: &[f64], out: &mut [f64]| out[0] = 1.0 + x[0] * x[0]),
            Arc::new(|_, _, out: &mut [f64]| out[0] = 0.0),
            1.0,
            2.0,
        )
        .unwrap();
        assert!(spec.validate(&[(0.0, vec![0.5])]).is_ok());
        assert!(spec.validate(&[(0.0, vec![3.0])]).is_err());
    }

    #[test]
    fn driver_probes_and_flip() {
        let d = DriverSpec::discounted(1.0, Arc::new(|x: &[f64]| x[0]));
        let probes = vec![(0.0, vec![0.0], 1.0, vec![0.0]), (0.0, vec![0.0], -2.0, vec![0.5])];
        d.validate(&probes).unwrap();
        let fl = d.flipped();
        assert_eq!((fl.f)(0.0, &[0.0], 2.0, &[0.0]), -2.0);
        assert_eq!((fl.phi)(&[3.0]), -3.0);

        let bad = DriverSpec::zero(Arc::new(|_| 0.0)).with_f(Arc::new(|_, _, y, _| 3.0 * y), 1.0, None);
        assert!(bad.validate(&probes).is_err());
    }

    #[test]
    fn negative_density_rejected() {
        let m = MeasureData::from_density(Arc::new(|_, x| x[0]));
        assert!(matches!(m.validate(&[(0.0, vec![-1.0])]), Err(Error::NegativeDensity { .. })));
    }

    #[test]
    fn h_minus_one_pairing_agrees_with_density() {
        // q = 1 + x² written as f − div f̄ with f = 1 + 2x², f̄ = x³/3 (div f̄ = x²).
        let m = MeasureData::from_density(Arc::new(|_, x| 1.0 + x[0] * x[0])).with_pair(HMinusOnePair {
            f: Arc::new(|_, x| 1.0 + 2.0 * x[0] * x[0]),
            fbar: Arc::new(|_, x, out: &mut [f64]| out[0] = x[0].powi(3) / 3.0),
        });
        let bump = |t: f64, x: f64| {
            if x.abs() < 1.0 {
                (1.0 + t) * (1.0 - x * x).powi(3)
            } else {
                0.0
            }
        };
        let dbump = |t: f64, x: f64| {
            if x.abs() < 1.0 {
                -6.0 * x * (1.0 + t) * (1.0 - x * x).powi(2)
            } else {
                0.0
            }
        };
        let (lhs, rhs) = m.check_pairing_1d(&bump, &dbump, (0.0, 1.0), (-1.0, 1.0), 400).unwrap();
        assert!((lhs - rhs).abs() < 1e-8, "{lhs} vs {rhs}");
    }

    proptest! {
        #[test]
        fn cholesky_recomposes(a11 in 0.5f64..5.0, a22 in 0.5f64..5.0, rho in -0.9f64..0.9) {
            let a12 = rho * (a11 * a22).sqrt();
            let a = vec![a11, a12, a12, a22];
            let mut s = a.clone();
            prop_assert!(cholesky_in_place(&mut s, 2));
            prop_assert!(frob_rel(&s, &a, 2) <= 1e-12);
        }
    }
}
