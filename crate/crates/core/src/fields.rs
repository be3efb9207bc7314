//! Operator coefficients `(a, b, K)` on a punctured ball and the pointwise
//! ratios Ψ (effective dimension) and Θ derived from them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::profile::RadialProfile;

/// Seed used for direction sequences when none is supplied.
pub const DEFAULT_SEED: u64 = 0x5eed_c817;

pub type MatrixFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("(a x, x)/|x|^2 = {value} is not positive at r = {r}")]
    DegenerateDenominator { r: f64, value: f64 },
    #[error("ellipticity violated: {0}")]
    EllipticityViolation(String),
    #[error("point must be nonzero with {expected} coordinates")]
    InvalidPoint { expected: usize },
    #[error("invalid field data: {0}")]
    Invalid(String),
}

#[derive(Clone)]
pub enum Potential {
    /// `K(x) = prefactor(|x|)·|x|^(-sigma)`.
    PowerLaw { sigma: f64, prefactor: RadialProfile },
    /// Bounded radial potential; `sigma = 0`.
    Bounded { profile: RadialProfile },
}

impl Potential {
    pub fn unit(radius: f64) -> Self {
        Potential::Bounded {
            profile: RadialProfile::constant(radius, 1.0),
        }
    }

    pub fn power_law(radius: f64, sigma: f64) -> Self {
        Potential::PowerLaw {
            sigma,
            prefactor: RadialProfile::constant(radius, 1.0),
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            Potential::PowerLaw { sigma, .. } => *sigma,
            Potential::Bounded { .. } => 0.0,
        }
    }

    /// True when `K ∈ L^∞` near the origin (bounded profile or `sigma = 0`).
    pub fn is_bounded(&self) -> bool {
        self.sigma() == 0.0
    }

    pub fn ln_k(&self, r: f64) -> f64 {
        match self {
            Potential::PowerLaw { sigma, prefactor } => prefactor.ln_eval(r) - sigma * r.ln(),
            Potential::Bounded { profile } => profile.ln_eval(r),
        }
    }

    pub fn k(&self, r: f64) -> f64 {
        self.ln_k(r).exp()
    }
}

#[derive(Clone)]
pub enum FieldKind {
    /// `a = I + γ(|x|) x⊗x/|x|²`, `b = β(|x|) x/|x|²`.
    GilbargSerrin {
        gamma: RadialProfile,
        beta: RadialProfile,
    },
    /// `a = diag((1 + x_i²)^k)`, `b = 0`.
    DiagonalPower { k: f64 },
    General { a: MatrixFn, b: VectorFn },
}

#[derive(Clone)]
pub struct CoefficientField {
    pub dim: usize,
    pub radius: f64,
    pub kind: FieldKind,
    pub potential: Potential,
    pub label: String,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("radius", &self.radius)
            .field("sigma", &self.potential.sigma())
            .finish()
    }
}

/// `a(x)` together with `|x|·b(x)` at a point given in polar form.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub a: DMatrix<f64>,
    pub scaled_b: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointwiseRatios {
    pub psi: f64,
    pub theta: f64,
    /// `ln Θ`, finite even when Θ itself over/underflows.
    pub ln_theta: f64,
    /// `(a x, x)/|x|²`.
    pub normal_coefficient: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticityReport {
    /// Empirical `ν` with `ν⁻¹ ≤ ξᵀaξ ≤ ν` on the samples.
    pub nu: f64,
    /// `max |b_i(x)|·|x|` on the samples.
    pub drift_bound: f64,
    pub inf_k: f64,
    pub samples: usize,
}

fn polar(x: &[f64]) -> Option<(f64, Vec<f64>)> {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 || !r.is_finite() {
        return None;
    }
    Some((r, x.iter().map(|v| v / r).collect()))
}

impl CoefficientField {
    pub fn laplacian(dim: usize, radius: f64) -> Self {
        Self::gilbarg_serrin(
            dim,
            radius,
            RadialProfile::constant(radius, 0.0),
            RadialProfile::constant(radius, 0.0),
            Potential::unit(radius),
        )
        .with_label(format!("laplacian N={dim}"))
    }

    pub fn gilbarg_serrin(
        dim: usize,
        radius: f64,
        gamma: RadialProfile,
        beta: RadialProfile,
        potential: Potential,
    ) -> Self {
        let label = format!("gilbarg_serrin gamma={} beta={}", gamma.label(), beta.label());
        Self {
            dim,
            radius,
            kind: FieldKind::GilbargSerrin { gamma, beta },
            potential,
            label,
        }
    }

    pub fn diagonal_power(dim: usize, radius: f64, k: f64, potential: Potential) -> Self {
        Self {
            dim,
            radius,
            kind: FieldKind::DiagonalPower { k },
            potential,
            label: format!("diagonal_power k={k:?}"),
        }
    }

    pub fn general(dim: usize, radius: f64, a: MatrixFn, b: VectorFn, potential: Potential) -> Self {
        Self {
            dim,
            radius,
            kind: FieldKind::General { a, b },
            potential,
            label: "general".into(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_potential(mut self, potential: Potential) -> Self {
        self.potential = potential;
        self
    }

    pub fn sigma(&self) -> f64 {
        self.potential.sigma()
    }

    /// Radially symmetric coefficients: Ψ and Θ depend on `|x|` only.
    pub fn is_radial(&self) -> bool {
        match &self.kind {
            FieldKind::GilbargSerrin { .. } => true,
            FieldKind::DiagonalPower { k } => *k == 0.0,
            FieldKind::General { .. } => false,
        }
    }

    /// Coefficients at `x = r·dir` (`dir` a unit vector).
    pub fn tensor(&self, r: f64, dir: &[f64]) -> Tensor {
        let n = self.dim;
        match &self.kind {
            FieldKind::GilbargSerrin { gamma, beta } => {
                let g = gamma.eval(r);
                let xi = DVector::from_column_slice(dir);
                let a = DMatrix::identity(n, n) + &xi * xi.transpose() * g;
                Tensor {
                    a,
                    scaled_b: xi * beta.eval(r),
                }
            }
            FieldKind::DiagonalPower { k } => {
                let diag = DVector::from_iterator(n, dir.iter().map(|d| (1.0 + r * r * d * d).powf(*k)));
                Tensor {
                    a: DMatrix::from_diagonal(&diag),
                    scaled_b: DVector::zeros(n),
                }
            }
            FieldKind::General { a, b } => {
                let x: Vec<f64> = dir.iter().map(|d| r * d).collect();
                Tensor {
                    a: a(&x),
                    scaled_b: b(&x) * r,
                }
            }
        }
    }

    /// Ψ and Θ at `x = r·dir` with per-family fast paths.
    pub fn ratios_at(&self, r: f64, dir: &[f64]) -> Result<PointwiseRatios, FieldError> {
        let (num, den) = match &self.kind {
            FieldKind::GilbargSerrin { gamma, beta } => {
                let g = gamma.eval(r);
                (self.dim as f64 + g + beta.eval(r), 1.0 + g)
            }
            FieldKind::DiagonalPower { k } => {
                let mut tr = 0.0;
                let mut den = 0.0;
                for d in dir {
                    let aii = (1.0 + r * r * d * d).powf(*k);
                    tr += aii;
                    den += aii * d * d;
                }
                (tr, den)
            }
            FieldKind::General { .. } => {
                let t = self.tensor(r, dir);
                quotient_parts(&t, dir)
            }
        };
        self.finish_ratios(r, num, den)
    }

    fn finish_ratios(&self, r: f64, num: f64, den: f64) -> Result<PointwiseRatios, FieldError> {
        if !(den > 0.0) || !den.is_finite() {
            return Err(FieldError::DegenerateDenominator { r, value: den });
        }
        let ln_theta = self.potential.ln_k(r) - den.ln();
        Ok(PointwiseRatios {
            psi: num / den,
            theta: ln_theta.exp(),
            ln_theta,
            normal_coefficient: den,
        })
    }

    /// The operator seen in the coordinates `y = g x`:
    /// `a_g(x) = g a(g⁻¹x) gᵀ`, `b_g(x) = g b(g⁻¹x)`, with `K` unchanged.
    pub fn transformed(&self, g: &DMatrix<f64>) -> Result<CoefficientField, FieldError> {
        if g.nrows() != self.dim || g.ncols() != self.dim {
            return Err(FieldError::Invalid(format!("g must be {0}x{0}", self.dim)));
        }
        let g_inv = g
            .clone()
            .try_inverse()
            .ok_or_else(|| FieldError::Invalid("g is singular".into()))?;
        let inner = Arc::new(self.clone());
        let pull_back = {
            let g_inv = g_inv.clone();
            move |x: &[f64]| -> Option<(f64, Vec<f64>)> {
                let y = &g_inv * DVector::from_column_slice(x);
                polar(y.as_slice())
            }
        };
        let pull_back = Arc::new(pull_back);
        let (f_a, g_a, pb_a) = (inner.clone(), g.clone(), pull_back.clone());
        let a: MatrixFn = Arc::new(move |x: &[f64]| match pb_a(x) {
            Some((ry, eta)) => &g_a * f_a.tensor(ry, &eta).a * g_a.transpose(),
            None => DMatrix::from_element(x.len(), x.len(), f64::NAN),
        });
        let (f_b, g_b, pb_b) = (inner, g.clone(), pull_back);
        let b: VectorFn = Arc::new(move |x: &[f64]| match pb_b(x) {
            Some((ry, eta)) => &g_b * f_b.tensor(ry, &eta).scaled_b / ry,
            None => DVector::from_element(x.len(), f64::NAN),
        });
        Ok(CoefficientField::general(self.dim, self.radius, a, b, self.potential.clone())
            .with_label(format!("{} under g", self.label)))
    }

    /// Ψ(x) from the full matrix quotient `(Tr a + b·x)/((a x, x)/|x|²)`.
    pub fn psi_pointwise(&self, x: &[f64]) -> Result<f64, FieldError> {
        let (r, dir) = self.check_point(x)?;
        let t = self.tensor(r, &dir);
        let (num, den) = quotient_parts(&t, &dir);
        if !(den > 0.0) {
            return Err(FieldError::DegenerateDenominator { r, value: den });
        }
        Ok(num / den)
    }

    /// Θ(x) = K(x) / ((a x, x)/|x|²).
    pub fn theta_pointwise(&self, x: &[f64]) -> Result<f64, FieldError> {
        let (r, dir) = self.check_point(x)?;
        let t = self.tensor(r, &dir);
        let (_, den) = quotient_parts(&t, &dir);
        if !(den > 0.0) {
            return Err(FieldError::DegenerateDenominator { r, value: den });
        }
        Ok(self.potential.k(r) / den)
    }

    /// `1 + (N − 1 + β)/(1 + γ)` for Gilbarg–Serrin fields.
    pub fn psi_closed_form(&self, r: f64) -> Option<f64> {
        match &self.kind {
            FieldKind::GilbargSerrin { gamma, beta } => {
                Some(1.0 + (self.dim as f64 - 1.0 + beta.eval(r)) / (1.0 + gamma.eval(r)))
            }
            _ => None,
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<(f64, Vec<f64>), FieldError> {
        if x.len() != self.dim {
            return Err(FieldError::InvalidPoint { expected: self.dim });
        }
        polar(x).ok_or(FieldError::InvalidPoint { expected: self.dim })
    }

    /// Sampled ellipticity, drift and potential bounds over dyadic shells.
    pub fn ellipticity(&self, seed: u64) -> Result<EllipticityReport, FieldError> {
        let dirs = DirectionSet::new(self.dim, 64, seed);
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        let mut drift: f64 = 0.0;
        let mut inf_k = f64::INFINITY;
        let mut samples = 0;
        for j in 0..=40 {
            let r = self.radius * 0.5f64.powi(j);
            inf_k = inf_k.min(self.potential.k(r));
            for d in dirs.iter() {
                let t = self.tensor(r, d);
                let eig = nalgebra::SymmetricEigen::new(t.a.clone()).eigenvalues;
                lo = lo.min(eig.min());
                hi = hi.max(eig.max());
                drift = drift.max(t.scaled_b.amax());
                samples += 1;
            }
        }
        if !(lo > 0.0) || !hi.is_finite() {
            return Err(FieldError::EllipticityViolation(format!(
                "sampled eigenvalues span [{lo}, {hi}]"
            )));
        }
        if !(inf_k > 0.0) {
            return Err(FieldError::Invalid(format!("inf K = {inf_k} is not positive")));
        }
        Ok(EllipticityReport {
            nu: hi.max(1.0 / lo).max(1.0),
            drift_bound: drift,
            inf_k,
            samples,
        })
    }
}

fn quotient_parts(t: &Tensor, dir: &[f64]) -> (f64, f64) {
    let xi = DVector::from_column_slice(dir);
    let num = t.a.trace() + t.scaled_b.dot(&xi);
    let den = (&t.a * &xi).dot(&xi);
    (num, den)
}

/// `Δ + β₀ x/|x|²·∇` on the unit ball with `K ≡ 1`.
pub fn builtin_pert(dim: usize, beta0: f64) -> CoefficientField {
    CoefficientField::gilbarg_serrin(
        dim,
        1.0,
        RadialProfile::constant(1.0, 0.0),
        RadialProfile::constant(1.0, beta0),
        Potential::unit(1.0),
    )
    .with_label(format!("pert N={dim} beta0={beta0:?}"))
}

/// Gilbarg–Serrin field with `γ(r) = −1 + (N−1)/φ(ln(1/r))`, `β ≡ 0`, so that
/// `Ψ(x) = 1 + φ(ln(1/|x|))` for a 1-periodic `φ` with unit mean `alpha − 1`.
pub fn builtin_unstable(dim: usize, alpha: f64, phi: RadialProfile) -> Result<CoefficientField, FieldError> {
    if alpha < 2.0 {
        return Err(FieldError::Invalid(format!("alpha = {alpha} must be at least 2")));
    }
    let n = 4096;
    let samples: Vec<f64> = (0..n).map(|i| phi.eval((i as f64 + 0.5) / n as f64)).collect();
    let inf = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(inf > 0.0) {
        return Err(FieldError::EllipticityViolation(format!("inf phi = {inf} must be positive")));
    }
    for shift in [1.0, 2.5, 7.25] {
        let t = 0.123 + shift;
        if (phi.eval(t) - phi.eval(t - shift.floor())).abs() > 1e-9 * phi.eval(t).abs().max(1.0) {
            return Err(FieldError::Invalid("phi is not 1-periodic".into()));
        }
    }
    let mean = crate::quad::integrate(&|t| phi.eval(t), 0.0, 1.0, 1e-12, 1e-12)
        .map_err(|e| FieldError::Invalid(e.to_string()))?
        .value;
    if (mean - (alpha - 1.0)).abs() > 1e-8 {
        return Err(FieldError::Invalid(format!(
            "mean of phi over a period is {mean}, expected {}",
            alpha - 1.0
        )));
    }
    let nm1 = dim as f64 - 1.0;
    let phi_eval = phi.clone();
    let gamma = RadialProfile::new(1.0, format!("-1+{nm1}/phi(ln(1/r)) [{}]", phi.label()), move |r| {
        -1.0 + nm1 / phi_eval.eval((1.0 / r).ln())
    })
    .with_continuity(phi.is_continuous());
    Ok(CoefficientField::gilbarg_serrin(
        dim,
        1.0,
        gamma,
        RadialProfile::constant(1.0, 0.0),
        Potential::unit(1.0),
    )
    .with_label(format!("unstable N={dim} alpha={alpha:?}")))
}

/// Deterministic set of unit directions: the coordinate axes, the main
/// diagonals, then seeded Gaussian samples projected to the sphere.
#[derive(Debug, Clone)]
pub struct DirectionSet {
    dim: usize,
    dirs: Vec<Vec<f64>>,
}

impl DirectionSet {
    pub fn new(dim: usize, count: usize, seed: u64) -> Self {
        let mut dirs = Vec::with_capacity(count.max(2 * dim));
        for i in 0..dim {
            for s in [1.0, -1.0] {
                let mut v = vec![0.0; dim];
                v[i] = s;
                dirs.push(v);
            }
        }
        if dim > 1 {
            let c = 1.0 / (dim as f64).sqrt();
            dirs.push(vec![c; dim]);
            let mut alt: Vec<f64> = vec![c; dim];
            alt[0] = -c;
            dirs.push(alt);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while dirs.len() < count {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                dirs.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        Self { dim, dirs }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.dirs.iter().map(Vec::as_slice)
    }
}

/// `(|gᵀx|²|g⁻¹x|²/|x|⁴, σ(g))` with `σ(g) = ¼(λmax/λmin + λmin/λmax)²` over
/// the singular values of `g`.
pub fn kantorovich_ratio(g: &DMatrix<f64>, x: &DVector<f64>) -> Option<(f64, f64)> {
    let g_inv = g.clone().try_inverse()?;
    let x2 = x.norm_squared();
    let ratio = (g.transpose() * x).norm_squared() * (g_inv * x).norm_squared() / (x2 * x2);
    let sv = g.clone().svd(false, false).singular_values;
    let (lmin, lmax) = (sv.min(), sv.max());
    let k = lmax / lmin + lmin / lmax;
    Some((ratio, 0.25 * k * k))
}
