//! Growth functions `M`, `m`, the maps `Γ`, `t`, and the upper/lower
//! dimensions obtained from the envelopes of Ψ.
//!
//! Radii are handled through `u = ln(R/r)` so that the deep interior of the
//! ball (down to `r ≈ 1e-280`) is reachable without overflow.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::envelopes::{radial_envelopes, EnvelopeError, EnvelopePair, Quantity, SamplingOptions};
use crate::fields::{CoefficientField, FieldError};
use crate::profile::RadialProfile;
use crate::quad::{CumulativeTable, LogCumulativeTable, QuadratureError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrowthError {
    #[error("quadrature failed: {0}")]
    QuadratureFailure(#[from] QuadratureError),
    #[error("dimension estimate did not settle: tail spread {spread:e} exceeds {tol:e}")]
    NonConvergent { spread: f64, tol: f64 },
    #[error("restricted search exhausted {evaluations} evaluations")]
    SearchBudgetExceeded { evaluations: usize },
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Smallest radius the deep tables reach.
pub const R_FLOOR: f64 = 1e-280;

/// Default depth in `u`: 600, or less when `R e^{-u}` would pass [`R_FLOOR`].
pub fn default_horizon(radius: f64) -> f64 {
    600.0f64.min((radius / R_FLOOR).ln())
}

#[derive(Debug, Clone, Copy)]
pub struct GrowthOptions {
    pub u_max: Option<f64>,
    pub step: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for GrowthOptions {
    fn default() -> Self {
        Self {
            u_max: None,
            step: 1.0 / 16.0,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
        }
    }
}

impl GrowthOptions {
    pub fn horizon(&self, radius: f64) -> f64 {
        self.u_max.unwrap_or_else(|| default_horizon(radius))
    }
}

/// `u ↦ ∫_0^u f(R e^{-w}) dw`, i.e. `∫_r^R f(τ) dτ/τ` at `r = R e^{-u}`.
#[derive(Debug, Clone)]
pub struct LogRadialIntegral {
    radius: f64,
    table: Arc<CumulativeTable>,
}

impl LogRadialIntegral {
    pub fn build(f: &RadialProfile, radius: f64, opts: &GrowthOptions) -> Result<Self, QuadratureError> {
        let g = |w: f64| f.eval(radius * (-w).exp());
        let table = CumulativeTable::build(&g, opts.horizon(radius), opts.step, opts.abs_tol, opts.rel_tol)?;
        Ok(Self {
            radius,
            table: Arc::new(table),
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn u_max(&self) -> f64 {
        self.table.u_max()
    }

    pub fn at_u(&self, u: f64) -> f64 {
        self.table.eval(u)
    }

    pub fn at_r(&self, r: f64) -> f64 {
        self.table.eval((self.radius / r).ln())
    }

    pub fn abs_err(&self) -> f64 {
        self.table.abs_err()
    }

    /// `r ↦ exp(±∫_r^R f dτ/τ)` as a profile with an exact logarithm.
    pub fn exp_profile(&self, sign: f64, label: impl Into<String>) -> RadialProfile {
        let (a, b) = (self.clone(), self.clone());
        RadialProfile::new(self.radius, label, move |r| (sign * a.at_r(r)).exp())
            .with_log(move |r| sign * b.at_r(r))
    }
}

#[derive(Debug, Clone)]
pub struct GrowthSummary {
    pub radius: f64,
    pub u_max: f64,
    /// `ln M` from `Env Ψ`.
    pub ln_big_m: LogRadialIntegral,
    /// `ln m` from `env Ψ`.
    pub ln_small_m: LogRadialIntegral,
    pub big_m: RadialProfile,
    pub small_m: RadialProfile,
    pub gamma: RadialProfile,
    pub tmap: RadialProfile,
    pub dims: DimensionEstimate,
    /// `lim ess sup Env Ψ`, sampled over the deepest quarter of the horizon.
    pub psi_upper_simple: f64,
    /// `lim ess inf env Ψ`, sampled likewise.
    pub psi_lower_simple: f64,
}

/// `M` and `m` from the envelope pair of Ψ, plus `Γ`, `t` for `φ = Env Ψ − 1`
/// and the dimension estimates.
pub fn growth_integrals(psi: &EnvelopePair, opts: &GrowthOptions) -> Result<GrowthSummary, GrowthError> {
    let radius = psi.domain_radius();
    let ln_big_m = LogRadialIntegral::build(&psi.upper, radius, opts)?;
    let ln_small_m = LogRadialIntegral::build(&psi.lower, radius, opts)?;
    let u_max = ln_big_m.u_max();
    let big_m = ln_big_m.exp_profile(1.0, "M");
    let small_m = ln_small_m.exp_profile(1.0, "m");
    let phi = psi.upper.shifted(-1.0);
    let (gamma, tmap) = gamma_and_t(&phi, radius, opts)?;
    let dims = dimension_estimates_from(&ln_big_m, &ln_small_m, psi.upper.asymptotic_hint().is_some())?;
    let (hi, lo) = tail_extrema(psi, radius, u_max);
    Ok(GrowthSummary {
        radius,
        u_max,
        ln_big_m,
        ln_small_m,
        big_m,
        small_m,
        gamma,
        tmap,
        dims,
        psi_upper_simple: hi,
        psi_lower_simple: lo,
    })
}

fn tail_extrema(psi: &EnvelopePair, radius: f64, u_max: f64) -> (f64, f64) {
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    let n = 2048;
    for k in 0..=n {
        let u = u_max * (0.75 + 0.25 * k as f64 / n as f64);
        let r = radius * (-u).exp();
        hi = hi.max(psi.upper.eval(r));
        lo = lo.min(psi.lower.eval(r));
    }
    (hi, lo)
}

/// `Γ(r) = exp{−∫_r^R φ dτ/τ}` and `t(r) = ∫_r^R dρ/Γ(ρ)`.
pub fn gamma_and_t(
    phi: &RadialProfile,
    radius: f64,
    opts: &GrowthOptions,
) -> Result<(RadialProfile, RadialProfile), GrowthError> {
    let i_phi = LogRadialIntegral::build(phi, radius, opts)?;
    let gamma = i_phi.exp_profile(-1.0, "Gamma");
    // t = ∫_0^u R e^{-w} / Γ(R e^{-w}) dw
    let ip = i_phi.clone();
    let ln_r = radius.ln();
    let table = LogCumulativeTable::build(move |w: f64| ln_r - w + ip.at_u(w), i_phi.u_max(), opts.step * 8.0)?;
    let table = Arc::new(table);
    let (t1, t2) = (table.clone(), table);
    let tmap = RadialProfile::new(radius, "t", move |r| t1.ln_eval((radius / r).ln()).exp())
        .with_log(move |r| t2.ln_eval((radius / r).ln()));
    Ok((gamma, tmap))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionEstimate {
    /// Upper dimension `𝒩` (limsup of the Cesàro mean of `Env Ψ`).
    pub upper: f64,
    /// Lower dimension `n` (liminf of the Cesàro mean of `env Ψ`).
    pub lower: f64,
    /// Extrapolated limits of the two means without the oscillation allowance.
    pub upper_central: f64,
    pub lower_central: f64,
    /// Largest residual of the tail fits; a half-width for both estimates.
    pub uncertainty: f64,
}

impl DimensionEstimate {
    fn shifted(mut self, c: f64) -> Self {
        self.upper += c;
        self.lower += c;
        self.upper_central += c;
        self.lower_central += c;
        self
    }
}

/// Tolerance on the tail residual spread above which an estimate is refused.
const DIM_SPREAD_TOL: f64 = 2e-2;

struct TailFit {
    limit: f64,
    res_max: f64,
    res_min: f64,
}

/// Least-squares fit of `D(L) = A + a/√L + (b + c ln L)/L` over `u ∈ [U/2, U]`,
/// where `D(L) = I(u)/L` and `L = |ln r|`.
fn fit_mean(int: &LogRadialIntegral) -> Option<TailFit> {
    let r_ln = int.radius().ln();
    let u_max = int.u_max();
    let n = 256;
    let mut rows = Vec::with_capacity(n);
    for k in 0..=n {
        let u = u_max * (0.5 + 0.5 * k as f64 / n as f64);
        let l = u - r_ln;
        if l <= 1.0 {
            continue;
        }
        rows.push((u, l, int.at_u(u) / l));
    }
    if rows.len() < 8 {
        return None;
    }
    let tail_start = u_max * 0.75;
    let fit = |with_root: bool| -> Option<TailFit> {
        let basis: &[fn(f64) -> f64] = if with_root {
            &[|_| 1.0, |l| l.sqrt().recip(), |l| 1.0 / l, |l| l.ln() / l]
        } else {
            &[|_| 1.0, |l| 1.0 / l, |l| l.ln() / l]
        };
        let m = DMatrix::from_fn(rows.len(), basis.len(), |i, j| basis[j](rows[i].1));
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2));
        let coef = m.clone().svd(true, true).solve(&y, 1e-14).ok()?;
        let fitted = &m * &coef;
        let mut res_max = f64::NEG_INFINITY;
        let mut res_min = f64::INFINITY;
        for (i, row) in rows.iter().enumerate() {
            if row.0 >= tail_start {
                let res = row.2 - fitted[i];
                res_max = res_max.max(res);
                res_min = res_min.min(res);
            }
        }
        if !coef[0].is_finite() || !res_max.is_finite() {
            return None;
        }
        Some(TailFit {
            limit: coef[0],
            res_max,
            res_min,
        })
    };
    // The 1/√L term is kept only when it explains most of what the
    // three-term model leaves over; otherwise it just chases oscillations.
    let base = fit(false)?;
    match fit(true) {
        Some(rooted) if rooted.spread() * 10.0 < base.spread() => Some(rooted),
        _ => Some(base),
    }
}

impl TailFit {
    fn spread(&self) -> f64 {
        self.res_max.abs().max(self.res_min.abs())
    }
}

fn dimension_estimates_from(
    up: &LogRadialIntegral,
    lo: &LogRadialIntegral,
    hinted: bool,
) -> Result<DimensionEstimate, GrowthError> {
    let fu = fit_mean(up).ok_or(GrowthError::NonConvergent {
        spread: f64::INFINITY,
        tol: DIM_SPREAD_TOL,
    })?;
    let fl = fit_mean(lo).ok_or(GrowthError::NonConvergent {
        spread: f64::INFINITY,
        tol: DIM_SPREAD_TOL,
    })?;
    let spread = (fu.res_max - fu.res_min).max(fl.res_max - fl.res_min);
    if spread > DIM_SPREAD_TOL && !hinted {
        return Err(GrowthError::NonConvergent {
            spread,
            tol: DIM_SPREAD_TOL,
        });
    }
    let uncertainty = [fu.res_max, fu.res_min, fl.res_max, fl.res_min]
        .iter()
        .fold(0.0f64, |a, b| a.max(b.abs()));
    Ok(DimensionEstimate {
        upper: fu.limit + fu.res_max.max(0.0),
        lower: fl.limit + fl.res_min.min(0.0),
        upper_central: fu.limit,
        lower_central: fl.limit,
        uncertainty,
    })
}

/// Upper and lower dimensions from an envelope pair of Ψ.
pub fn dimension_estimates(psi: &EnvelopePair, opts: &GrowthOptions) -> Result<DimensionEstimate, GrowthError> {
    let radius = psi.domain_radius();
    let up = LogRadialIntegral::build(&psi.upper, radius, opts)?;
    let lo = LogRadialIntegral::build(&psi.lower, radius, opts)?;
    dimension_estimates_from(&up, &lo, psi.upper.asymptotic_hint().is_some())
}

/// `Ψ → Ψ + c` moves both dimensions by exactly `c`.
pub fn shift_dimensions(d: DimensionEstimate, c: f64) -> DimensionEstimate {
    d.shifted(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    Identity,
    Diagonal,
}

#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub factors: Vec<f64>,
    pub max_evaluations: usize,
    pub sampling: SamplingOptions,
    pub growth: GrowthOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            factors: vec![0.25, 0.5, 2.0, 4.0],
            max_evaluations: 400,
            sampling: SamplingOptions {
                initial_directions: 64,
                u_step: 1.0,
                u_max: 64.0,
                ..SamplingOptions::default()
            },
            growth: GrowthOptions {
                u_max: Some(64.0),
                step: 0.125,
                ..GrowthOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct GSearchResult {
    pub mode: SearchMode,
    /// Diagonal of the `g` minimizing the upper dimension.
    pub g_upper: Vec<f64>,
    pub dim_upper: f64,
    /// Diagonal of the `g` maximizing the lower dimension.
    pub g_lower: Vec<f64>,
    pub dim_lower: f64,
    pub identity_upper: f64,
    pub identity_lower: f64,
    pub evaluations: usize,
}

fn dims_for(field: &CoefficientField, diag: &[f64], opts: &SearchOptions) -> Result<DimensionEstimate, GrowthError> {
    let g = DMatrix::from_diagonal(&DVector::from_column_slice(diag));
    let is_identity = diag.iter().all(|v| *v == 1.0);
    let f = if is_identity { field.clone() } else { field.transformed(&g)? };
    let env = radial_envelopes(&f, Quantity::Psi, &opts.sampling)?;
    dimension_estimates(&env, &opts.growth)
}

/// Search over positive diagonal `g` (with `g₁₁ = 1`, since `g → λg` leaves
/// the dimensions unchanged) by coordinate-wise multiplicative steps.
pub fn restricted_g_search(
    field: &CoefficientField,
    mode: SearchMode,
    opts: &SearchOptions,
) -> Result<GSearchResult, GrowthError> {
    let n = field.dim;
    let id = vec![1.0; n];
    let d0 = dims_for(field, &id, opts)?;
    let mut evaluations = 1;
    let mut result = GSearchResult {
        mode,
        g_upper: id.clone(),
        dim_upper: d0.upper,
        g_lower: id.clone(),
        dim_lower: d0.lower,
        identity_upper: d0.upper,
        identity_lower: d0.lower,
        evaluations,
    };
    if mode == SearchMode::Identity || n < 2 {
        return Ok(result);
    }
    let improve = 1e-9;
    let mut improved = true;
    while improved {
        improved = false;
        for i in 1..n {
            for &f in &opts.factors {
                if evaluations >= opts.max_evaluations {
                    return Err(GrowthError::SearchBudgetExceeded { evaluations });
                }
                let mut gu = result.g_upper.clone();
                gu[i] *= f;
                let du = dims_for(field, &gu, opts)?;
                evaluations += 1;
                let mut gl = result.g_lower.clone();
                gl[i] *= f;
                let dl = if gl == gu {
                    du
                } else {
                    evaluations += 1;
                    dims_for(field, &gl, opts)?
                };
                if du.upper < result.dim_upper - improve {
                    result.g_upper = gu;
                    result.dim_upper = du.upper;
                    improved = true;
                }
                if dl.lower > result.dim_lower + improve {
                    result.g_lower = gl;
                    result.dim_lower = dl.lower;
                    improved = true;
                }
            }
        }
    }
    result.evaluations = evaluations;
    Ok(result)
}
