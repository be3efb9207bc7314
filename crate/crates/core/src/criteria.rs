//! Convergence classification of the improper integrals that decide
//! existence of singular solutions, and the resulting exponent bounds.
//!
//! Every integral `∫_0^R F(r) dr` is rewritten in `u = ln(R/r)` as
//! `∫_0^∞ exp(G(u)) du` with `G(u) = ln(r F(r))`. Increments over unit
//! blocks are fitted on the deep half of the horizon by
//! `ln ΔI(u) ≈ c − e·u − q·ln u`; a positive exponential rate `e` means
//! convergence, a negative one divergence, and for `e ≈ 0` the power `q`
//! decides (`q > 1` integrable).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::envelopes::{radial_envelopes, EnvelopeError, EnvelopePair, Quantity, SamplingOptions};
use crate::fields::CoefficientField;
use crate::growth::{default_horizon, growth_integrals, DimensionEstimate, GrowthError, GrowthOptions, GrowthSummary};
use crate::profile::RadialProfile;
use crate::quad::{integrate, ln_add, ln_integrate, LogCumulativeTable, QuadratureError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CriteriaError {
    #[error("integrand could not be evaluated: {0}")]
    EvaluationFailure(String),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Growth(#[from] GrowthError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

/// Rates below this magnitude count as "no exponential trend".
pub const RATE_TOL: f64 = 2e-3;
/// Power-law decay at or above this is read as integrable.
pub const POWER_CONVERGE: f64 = 1.25;
/// Power-law decay at or below this is read as non-integrable.
pub const POWER_DIVERGE: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub enum VerdictKind {
    Converges { value: f64, ln_value: f64, abs_err: f64 },
    Diverges { rate: String, partial_at: Vec<(f64, f64)> },
    Inconclusive { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionVerdict {
    pub kind: VerdictKind,
    pub integrand_id: String,
    /// Fitted exponential rate `e` of the block increments.
    pub rate: f64,
    /// Fitted power `q` of the block increments.
    pub power: f64,
    pub horizon: f64,
}

impl CriterionVerdict {
    pub fn converges(&self) -> bool {
        matches!(self.kind, VerdictKind::Converges { .. })
    }

    pub fn diverges(&self) -> bool {
        matches!(self.kind, VerdictKind::Diverges { .. })
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            VerdictKind::Converges { .. } => "converges",
            VerdictKind::Diverges { .. } => "diverges",
            VerdictKind::Inconclusive { .. } => "inconclusive",
        }
    }
}

/// Integrand expressed as `G(u) = ln(r F(r))` at `r = R e^{-u}`.
pub struct LogIntegrand<'a> {
    pub id: String,
    pub radius: f64,
    pub horizon: f64,
    pub g: Box<dyn Fn(f64) -> f64 + Sync + 'a>,
}

fn fit_blocks(us: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    if us.len() < 6 {
        return None;
    }
    let m = DMatrix::from_fn(us.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => -us[i],
        _ => -us[i].ln(),
    });
    let y = DVector::from_column_slice(ys);
    let c = m.svd(true, true).solve(&y, 1e-15).ok()?;
    Some((c[0], c[1], c[2]))
}

/// `ln ∫_U^∞ exp(G)` from the local model `G ≈ c − e u − q ln(u + s)` at `U`.
fn ln_tail(g: &dyn Fn(f64) -> f64, u: f64, global: (f64, f64)) -> Option<f64> {
    let c = u - 8.0;
    let g0 = g(u);
    let stencil = |h: f64| {
        let d = [g(c - 2.0 * h), g(c - h), g(c), g(c + h), g(c + 2.0 * h)];
        (
            (-d[4] + 8.0 * d[3] - 8.0 * d[1] + d[0]) / (12.0 * h),
            (-d[4] + 16.0 * d[3] - 30.0 * d[2] + 16.0 * d[1] - d[0]) / (12.0 * h * h),
            (d[4] - 2.0 * d[3] + 2.0 * d[1] - d[0]) / (2.0 * h * h * h),
        )
    };
    // Richardson: the first two stencils are O(h⁴), the third O(h²)
    let (a1, a2, a3) = stencil(4.0);
    let (b1, b2, b3) = stencil(2.0);
    let d1 = (16.0 * b1 - a1) / 15.0;
    let d2 = (16.0 * b2 - a2) / 15.0;
    let d3 = (4.0 * b3 - a3) / 3.0;
    // (e, q, us) describe G near c; us is the shifted abscissa u + s at c
    let (mut e, mut q, mut us) = (global.0, global.1, c);
    if d3.abs() > 1e-300 && d2 > 0.0 {
        let shifted = -2.0 * d2 / d3;
        if shifted > 0.0 {
            us = shifted;
            q = d2 * shifted * shifted;
            e = -d1 - q / shifted;
        }
    } else if d2.abs() < 1e-14 {
        q = 0.0;
        e = -d1;
    }
    // move the anchor from c to u
    let us = us + (u - c);
    let integrable = e > 1e-12 || (e > -1e-12 && q > 1.0);
    if !integrable || !g0.is_finite() {
        return None;
    }
    if e * us < 1e-6 {
        return Some(g0 + (us / (q - 1.0)).ln());
    }
    if q.abs() < 1e-12 {
        return Some(g0 - e.ln());
    }
    let f = |v: f64| (-e * v - q * (v / us).ln_1p()).exp();
    let v = integrate(&f, 0.0, 60.0 / e, 0.0, 1e-10).ok()?.value;
    Some(g0 + v.ln())
}

/// Classify `∫_0^∞ exp(G(u)) du`.
pub fn classify_log_integrand(f: &LogIntegrand<'_>) -> Result<CriterionVerdict, CriteriaError> {
    let n = f.horizon.floor() as usize;
    if n < 16 {
        return Err(CriteriaError::EvaluationFailure(format!("horizon {} too short", f.horizon)));
    }
    let mut blocks = Vec::with_capacity(n);
    for k in 0..n {
        let (a, b) = (k as f64, (k + 1) as f64);
        let v = ln_integrate(&f.g, a, b)?;
        if v.is_nan() {
            return Err(CriteriaError::EvaluationFailure(format!("{} is NaN near u = {a}", f.id)));
        }
        blocks.push(v);
    }
    let ln_total = blocks.iter().fold(f64::NEG_INFINITY, |acc, v| ln_add(acc, *v));
    let mut us = Vec::new();
    let mut ys = Vec::new();
    for (k, v) in blocks.iter().enumerate().skip(n / 2) {
        if v.is_finite() {
            us.push(k as f64 + 0.5);
            ys.push(*v);
        }
    }
    let u_end = n as f64;
    let partial_at: Vec<(f64, f64)> = [n / 4, n / 2, 3 * n / 4, n]
        .iter()
        .map(|&k| {
            let ln_i = blocks[..k].iter().fold(f64::NEG_INFINITY, |acc, v| ln_add(acc, *v));
            (f.radius * (-(k as f64)).exp(), ln_i)
        })
        .collect();
    let verdict = |kind, rate, power| CriterionVerdict {
        kind,
        integrand_id: f.id.clone(),
        rate,
        power,
        horizon: u_end,
    };
    if us.is_empty() {
        // integrand vanishes on the whole tail
        return Ok(verdict(
            VerdictKind::Converges {
                value: ln_total.exp(),
                ln_value: ln_total,
                abs_err: 0.0,
            },
            f64::INFINITY,
            0.0,
        ));
    }
    let (_, e, q) = fit_blocks(&us, &ys)
        .ok_or_else(|| CriteriaError::EvaluationFailure(format!("tail fit failed for {}", f.id)))?;
    let converges = e > RATE_TOL || (e.abs() <= RATE_TOL && q >= POWER_CONVERGE);
    let diverges = e < -RATE_TOL || (e.abs() <= RATE_TOL && q <= POWER_DIVERGE);
    let kind = if converges {
        let tail = ln_tail(&f.g, u_end, (e, q)).unwrap_or(f64::NEG_INFINITY);
        let ln_value = ln_add(ln_total, tail);
        let value = ln_value.exp();
        let tail_v = tail.exp();
        VerdictKind::Converges {
            value,
            ln_value,
            abs_err: 0.05 * tail_v + 1e-12 * value,
        }
    } else if diverges {
        VerdictKind::Diverges {
            rate: format!("ln increments fall off with rate {e:.3e} and power {q:.3}"),
            partial_at,
        }
    } else {
        VerdictKind::Inconclusive {
            reason: format!("borderline tail: rate {e:.3e}, power {q:.3} between {POWER_DIVERGE} and {POWER_CONVERGE}"),
        }
    };
    Ok(verdict(kind, e, q))
}

/// Classify `∫_0^R f(r) dr` for a nonnegative radial profile.
pub fn classify_improper(integrand: &RadialProfile, radius: f64) -> Result<CriterionVerdict, CriteriaError> {
    let ln_r = radius.ln();
    let f = LogIntegrand {
        id: integrand.label().to_string(),
        radius,
        horizon: default_horizon(radius),
        g: Box::new(move |u: f64| integrand.ln_eval(radius * (-u).exp()) + ln_r - u),
    };
    classify_log_integrand(&f)
}

/// `r ↦ ln ∫_r^R M(ρ) ρ dρ`.
fn ln_inner_mass(g: &GrowthSummary) -> Result<impl Fn(f64) -> f64 + Sync + '_, CriteriaError> {
    let ln_r = g.radius.ln();
    let lm = &g.ln_big_m;
    let table = LogCumulativeTable::build(move |w: f64| 2.0 * ln_r - 2.0 * w + lm.at_u(w), g.u_max, 0.5)?;
    Ok(move |u: f64| table.ln_eval(u))
}

/// `∫_0^R (∫_r^R M ρ dρ)^p Env Θ(r) / (r M(r)) dr`; convergence certifies a
/// singular solution.
pub fn exist_criterion(g: &GrowthSummary, env_theta: &RadialProfile, p: f64) -> Result<CriterionVerdict, CriteriaError> {
    let inner = ln_inner_mass(g)?;
    let radius = g.radius;
    let f = LogIntegrand {
        id: format!("exist p={p:?}"),
        radius,
        horizon: g.u_max,
        g: Box::new(move |u: f64| {
            p * inner(u) + env_theta.ln_eval(radius * (-u).exp()) - g.ln_big_m.at_u(u)
        }),
    };
    classify_log_integrand(&f)
}

/// `∫_0^R m^{p−1} env Θ r^{2p−1} dr`; divergence rules singular solutions out.
pub fn nonexist_criterion(
    g: &GrowthSummary,
    lower_theta: &RadialProfile,
    p: f64,
) -> Result<CriterionVerdict, CriteriaError> {
    power_criterion(g, lower_theta, p, false, format!("nonexist p={p:?}"))
}

/// `∫_0^R M^{p−1} Env Θ r^{2p−1} dr`; under `lim ess inf Env Ψ > 2`
/// convergence certifies a singular solution.
pub fn coro1_criterion(g: &GrowthSummary, env_theta: &RadialProfile, p: f64) -> Result<CriterionVerdict, CriteriaError> {
    power_criterion(g, env_theta, p, true, format!("coro1 p={p:?}"))
}

fn power_criterion(
    g: &GrowthSummary,
    theta: &RadialProfile,
    p: f64,
    upper: bool,
    id: String,
) -> Result<CriterionVerdict, CriteriaError> {
    let radius = g.radius;
    let ln_r = radius.ln();
    let table = if upper { &g.ln_big_m } else { &g.ln_small_m };
    let f = LogIntegrand {
        id,
        radius,
        horizon: g.u_max,
        g: Box::new(move |u: f64| {
            (p - 1.0) * table.at_u(u) + theta.ln_eval(radius * (-u).exp()) + 2.0 * p * (ln_r - u)
        }),
    };
    classify_log_integrand(&f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailCondition {
    Holds,
    Fails,
    /// `Env Ψ` seems to approach 2 from above.
    Unclear,
}

/// `lim_{ρ→0} ess inf_{r<ρ} Env Ψ(r) > 2`, judged on the deep tail.
pub fn tail_condition(psi: &EnvelopePair, u_max: f64) -> (TailCondition, f64) {
    let radius = psi.domain_radius();
    let inf_over = |a: f64, b: f64| {
        (0..=1024)
            .map(|k| {
                let u = u_max * (a + (b - a) * k as f64 / 1024.0);
                psi.upper.eval(radius * (-u).exp())
            })
            .fold(f64::INFINITY, f64::min)
    };
    let deep = inf_over(0.75, 1.0);
    let mid = inf_over(0.5, 0.75);
    let c = if deep > 2.0 + 1e-2 {
        TailCondition::Holds
    } else if deep > 2.0 + 1e-9 {
        if deep < mid - 1e-12 {
            TailCondition::Unclear
        } else {
            TailCondition::Holds
        }
    } else {
        TailCondition::Fails
    };
    (c, deep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaClass {
    Sub2,
    Eq2,
    Super2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExponentBounds {
    pub p_lower: f64,
    pub p_upper: f64,
    pub p_star_exact: Option<f64>,
    /// Lower critical exponent `p_*`; always `−∞` for these problems.
    pub p_lower_crit: f64,
    pub sigma_class: SigmaClass,
    pub sigma: f64,
    /// `1 + (2−σ)/(A−2)` at the extrapolated mean dimension.
    pub p_estimate: f64,
    pub tail: TailCondition,
    pub dims: DimensionEstimate,
}

/// Dimensions this close to 2 are read as exactly 2 (quadrature round-off).
const DIM_TWO_SNAP: f64 = 1e-9;

fn exponent_from_dim(sigma: f64, d: f64) -> f64 {
    if d > 2.0 + DIM_TWO_SNAP {
        1.0 + (2.0 - sigma) / (d - 2.0)
    } else {
        f64::INFINITY
    }
}

/// The exponent table applied to dimension estimates.
pub fn exponent_bounds_from(dims: &DimensionEstimate, sigma: f64, tail: TailCondition, bounded: bool) -> ExponentBounds {
    let sigma_class = if sigma < 2.0 {
        SigmaClass::Sub2
    } else if sigma == 2.0 {
        SigmaClass::Eq2
    } else {
        SigmaClass::Super2
    };
    let central = 0.5 * (dims.upper_central + dims.lower_central);
    let (p_lower, p_upper, p_estimate) = match sigma_class {
        SigmaClass::Sub2 => {
            let upper = exponent_from_dim(sigma, dims.lower);
            let lower = if bounded || tail == TailCondition::Holds {
                exponent_from_dim(sigma, dims.upper)
            } else {
                1.0
            };
            (lower, upper, exponent_from_dim(sigma, central))
        }
        SigmaClass::Super2 => (1.0, 1.0, 1.0),
        SigmaClass::Eq2 if dims.lower > 2.0 + DIM_TWO_SNAP => (1.0, 1.0, 1.0),
        SigmaClass::Eq2 => (1.0, f64::INFINITY, f64::NAN),
    };
    let p_star_exact = if p_lower.is_infinite() && p_upper.is_infinite() {
        Some(f64::INFINITY)
    } else if (p_upper - p_lower).abs() <= 1e-6 {
        Some(0.5 * (p_upper + p_lower))
    } else {
        None
    };
    ExponentBounds {
        p_lower,
        p_upper,
        p_star_exact,
        p_lower_crit: f64::NEG_INFINITY,
        sigma_class,
        sigma,
        p_estimate,
        tail,
        dims: *dims,
    }
}

/// Envelopes, growth summary and exponent bounds of a field in one go.
pub struct FieldAnalysis {
    pub psi: EnvelopePair,
    pub theta: EnvelopePair,
    pub growth: GrowthSummary,
    pub bounds: ExponentBounds,
}

pub fn analyze_field(
    f: &CoefficientField,
    sampling: &SamplingOptions,
    growth: &GrowthOptions,
) -> Result<FieldAnalysis, CriteriaError> {
    let psi = radial_envelopes(f, Quantity::Psi, sampling)?;
    let theta = radial_envelopes(f, Quantity::Theta, sampling)?;
    let g = growth_integrals(&psi, growth)?;
    let (tail, _) = tail_condition(&psi, g.u_max);
    let bounds = exponent_bounds_from(&g.dims, f.sigma(), tail, f.potential.is_bounded());
    Ok(FieldAnalysis {
        psi,
        theta,
        growth: g,
        bounds,
    })
}

pub fn exponent_bounds(f: &CoefficientField) -> Result<ExponentBounds, CriteriaError> {
    Ok(analyze_field(f, &SamplingOptions::default(), &GrowthOptions::default())?.bounds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticalVerdict {
    NoSingular,
    Singular,
    PStarIsOne,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalCase {
    pub verdict: CriticalVerdict,
    pub p_critical: f64,
    pub lower_witness: Option<CriterionVerdict>,
    pub upper_witness: Option<CriterionVerdict>,
    pub epsilon_sweep: Vec<(f64, CriterionVerdict)>,
    pub reason: String,
}

/// Tolerance between the supplied `A` and the dimension estimates.
const DIM_MATCH_TOL: f64 = 1e-3;

fn witness(g: &GrowthSummary, a: f64, exponent: f64, upper: bool, id: String) -> Result<CriterionVerdict, CriteriaError> {
    // h = r^A m (or H = r^A M); the integral is ∫ h^exponent dr/r = ∫ h^exponent du
    let ln_r = g.radius.ln();
    let table = if upper { &g.ln_big_m } else { &g.ln_small_m };
    let f = LogIntegrand {
        id,
        radius: g.radius,
        horizon: g.u_max,
        g: Box::new(move |u: f64| exponent * (a * (ln_r - u) + table.at_u(u))),
    };
    classify_log_integrand(&f)
}

/// Behaviour at the critical exponent when both dimensions equal `A`.
pub fn critical_case_classify(
    g: &GrowthSummary,
    psi: &EnvelopePair,
    a: f64,
    sigma: f64,
) -> Result<CriticalCase, CriteriaError> {
    let d = &g.dims;
    if (d.upper_central - a).abs() > DIM_MATCH_TOL || (d.lower_central - a).abs() > DIM_MATCH_TOL {
        return Err(CriteriaError::AssumptionViolated(format!(
            "dimensions ({}, {}) differ from A = {a}",
            d.upper_central, d.lower_central
        )));
    }
    let mut out = CriticalCase {
        verdict: CriticalVerdict::Inconclusive,
        p_critical: if a > 2.0 { (a - sigma) / (a - 2.0) } else { f64::INFINITY },
        lower_witness: None,
        upper_witness: None,
        epsilon_sweep: Vec::new(),
        reason: String::new(),
    };
    let a_is_two = (a - 2.0).abs() <= DIM_MATCH_TOL;
    if sigma > 2.0 || (sigma == 2.0 && a > 2.0 + DIM_MATCH_TOL) {
        out.verdict = CriticalVerdict::PStarIsOne;
        out.p_critical = 1.0;
        out.reason = "p* = 1 from the exponent table".into();
        return Ok(out);
    }
    if sigma == 2.0 && a_is_two {
        out.p_critical = 1.0;
        for j in 0..=6 {
            let eps = 0.5f64.powi(j);
            let v = witness(g, 2.0, eps, false, format!("h^{eps:?}"))?;
            let hit = v.diverges();
            out.epsilon_sweep.push((eps, v));
            if hit {
                out.verdict = CriticalVerdict::PStarIsOne;
                out.reason = format!("∫ h^ε dr/r diverges at ε = {eps}");
                return Ok(out);
            }
        }
        out.reason = "∫ h^ε dr/r converged for every tested ε".into();
        return Ok(out);
    }
    if a <= 2.0 + DIM_MATCH_TOL || sigma >= 2.0 {
        out.reason = "no finite critical exponent above 1 in this regime".into();
        return Ok(out);
    }
    let exponent = (2.0 - sigma) / (a - 2.0);
    let low = witness(g, a, exponent, false, format!("h^{exponent:?}"))?;
    if low.diverges() {
        out.verdict = CriticalVerdict::NoSingular;
        out.reason = "∫ h^((2−σ)/(A−2)) dr/r diverges".into();
        out.lower_witness = Some(low);
        return Ok(out);
    }
    out.lower_witness = Some(low);
    let up = witness(g, a, exponent, true, format!("H^{exponent:?}"))?;
    let (tail, inf) = tail_condition(psi, g.u_max);
    if up.converges() {
        if tail == TailCondition::Holds {
            out.verdict = CriticalVerdict::Singular;
            out.reason = "∫ H^((2−σ)/(A−2)) dr/r converges and Env Ψ stays above 2".into();
        } else {
            out.reason = format!("H integral converges but the tail condition is {tail:?} (inf Env Ψ ≈ {inf})");
        }
    } else {
        out.reason = "neither witness integral is decisive".into();
    }
    out.upper_witness = Some(up);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExclusionDiagnostic {
    pub p: f64,
    pub exist: CriterionVerdict,
    pub nonexist: CriterionVerdict,
    /// Both criteria fired at once, which the theory forbids.
    pub conflict: bool,
}

pub fn mutual_exclusion_check(g: &GrowthSummary, theta: &EnvelopePair, p: f64) -> Result<ExclusionDiagnostic, CriteriaError> {
    let exist = exist_criterion(g, &theta.upper, p)?;
    let nonexist = nonexist_criterion(g, &theta.lower, p)?;
    let conflict = exist.converges() && nonexist.diverges();
    Ok(ExclusionDiagnostic {
        p,
        exist,
        nonexist,
        conflict,
    })
}
