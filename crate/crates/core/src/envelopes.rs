//! Radial envelopes `Env f`, `env f` of Ψ and Θ, and the averaging
//! operators `Avg_s`.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::fields::{CoefficientField, DirectionSet, FieldError, FieldKind, DEFAULT_SEED};
use crate::profile::RadialProfile;
use crate::quad::{integrate, QuadratureError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvelopeError {
    #[error("shell sampling at r = {r} did not settle with {directions} directions")]
    SamplingBudgetExceeded { r: f64, directions: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("quadrature failed: {0}")]
    QuadratureFailure(#[from] QuadratureError),
    #[error("averaging parameter must be nonzero and finite, got {0}")]
    InvalidParameter(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Psi,
    Theta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeSource {
    Analytic,
    ShellSampled,
}

#[derive(Debug, Clone)]
pub struct EnvelopePair {
    pub upper: RadialProfile,
    pub lower: RadialProfile,
    pub source: EnvelopeSource,
    /// Set when an input profile was declared discontinuous; sampled
    /// envelopes then only see the measure-visible part of the oscillation.
    pub discontinuous_input: bool,
}

impl EnvelopePair {
    /// Envelopes of a radial profile: the profile itself unless it carries
    /// its own envelope data.
    pub fn of_profile(p: &RadialProfile) -> Self {
        match (p.lower_env(), p.upper_env()) {
            (Some(lo), Some(up)) => Self {
                upper: up.clone(),
                lower: lo.clone(),
                source: EnvelopeSource::Analytic,
                discontinuous_input: !p.is_continuous(),
            },
            _ => Self {
                upper: p.clone(),
                lower: p.clone(),
                source: EnvelopeSource::Analytic,
                discontinuous_input: !p.is_continuous(),
            },
        }
    }

    pub fn domain_radius(&self) -> f64 {
        self.upper.domain_radius()
    }
}

/// Tuning of the shell sampler used for non-radial fields.
#[derive(Debug, Clone, Copy)]
pub struct SamplingOptions {
    pub seed: u64,
    pub initial_directions: usize,
    pub max_directions: usize,
    /// Relative change in the shell sup/inf below which doubling stops.
    pub rel_tol: f64,
    /// Shell half-width as a fraction of the radius.
    pub half_width: f64,
    /// Spacing of sampled shells in `u = ln(R/r)`.
    pub u_step: f64,
    /// Deepest sampled shell in `u`.
    pub u_max: f64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            initial_directions: 256,
            max_directions: 1 << 16,
            rel_tol: 1e-3,
            half_width: 1e-3,
            u_step: 0.5,
            u_max: 640.0,
        }
    }
}

fn gs_continuity(field: &CoefficientField) -> bool {
    match &field.kind {
        FieldKind::GilbargSerrin { gamma, beta } => gamma.is_continuous() && beta.is_continuous(),
        _ => true,
    }
}

/// `Env` and `env` of Ψ or Θ on `(0, R]`.
pub fn radial_envelopes(
    field: &CoefficientField,
    quantity: Quantity,
    opts: &SamplingOptions,
) -> Result<EnvelopePair, EnvelopeError> {
    let radius = field.radius;
    if field.is_radial() {
        // probe once so that degenerate fields fail here instead of
        // surfacing as NaN deep inside an integral
        let axis = axis(field.dim);
        for j in 0..64 {
            field.ratios_at(radius * 0.5f64.powi(j), &axis)?;
        }
        let label = match quantity {
            Quantity::Psi => format!("Psi[{}]", field.label),
            Quantity::Theta => format!("Theta[{}]", field.label),
        };
        let ratio = {
            let f = field.clone();
            let axis = axis.clone();
            move |r: f64| f.ratios_at(r, &axis)
        };
        let p = match quantity {
            Quantity::Psi => RadialProfile::new(radius, label, move |r| {
                ratio(r).map(|v| v.psi).unwrap_or(f64::NAN)
            }),
            Quantity::Theta => {
                let ratio = Arc::new(ratio);
                let r2 = ratio.clone();
                RadialProfile::new(radius, label, move |r| ratio(r).map(|v| v.theta).unwrap_or(f64::NAN))
                    .with_log(move |r| r2(r).map(|v| v.ln_theta).unwrap_or(f64::NAN))
            }
        }
        .with_continuity(gs_continuity(field));
        let mut pair = EnvelopePair::of_profile(&p);
        pair.discontinuous_input = !gs_continuity(field);
        return Ok(pair);
    }
    sampled_envelopes(field, quantity, opts)
}

fn axis(dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = 1.0;
    v
}

struct ShellTable {
    radius: f64,
    u_step: f64,
    values: Vec<f64>,
}

impl ShellTable {
    fn eval(&self, r: f64) -> f64 {
        let u = (self.radius / r).ln().max(0.0) / self.u_step;
        let last = self.values.len() - 1;
        let k = (u.floor() as usize).min(last);
        if k >= last {
            return self.values[last];
        }
        let t = u - k as f64;
        self.values[k] * (1.0 - t) + self.values[k + 1] * t
    }
}

fn shell_extrema(
    field: &CoefficientField,
    quantity: Quantity,
    r: f64,
    opts: &SamplingOptions,
) -> Result<(f64, f64), EnvelopeError> {
    let value = |rr: f64, d: &[f64]| -> Result<f64, FieldError> {
        let v = field.ratios_at(rr, d)?;
        Ok(match quantity {
            Quantity::Psi => v.psi,
            Quantity::Theta => v.ln_theta,
        })
    };
    let offsets = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let mut count = opts.initial_directions;
    let mut prev: Option<(f64, f64)> = None;
    loop {
        let dirs = DirectionSet::new(field.dim, count, opts.seed);
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for d in dirs.iter() {
            for o in offsets {
                let rr = (r * (1.0 + o * opts.half_width)).min(field.radius);
                let v = value(rr, d)?;
                hi = hi.max(v);
                lo = lo.min(v);
            }
        }
        if let Some((ph, pl)) = prev {
            let scale = hi.abs().max(lo.abs()).max(1e-300);
            if (hi - ph).abs() <= opts.rel_tol * scale && (lo - pl).abs() <= opts.rel_tol * scale {
                return Ok((hi, lo));
            }
        }
        prev = Some((hi, lo));
        count *= 2;
        if count > opts.max_directions {
            return Err(EnvelopeError::SamplingBudgetExceeded { r, directions: count / 2 });
        }
    }
}

fn sampled_envelopes(
    field: &CoefficientField,
    quantity: Quantity,
    opts: &SamplingOptions,
) -> Result<EnvelopePair, EnvelopeError> {
    let radius = field.radius;
    let n = (opts.u_max / opts.u_step).ceil() as usize;
    let rows: Vec<Result<(f64, f64), EnvelopeError>> = (0..=n)
        .into_par_iter()
        .map(|k| shell_extrema(field, quantity, radius * (-(k as f64) * opts.u_step).exp(), opts))
        .collect();
    let mut up = Vec::with_capacity(n + 1);
    let mut lo = Vec::with_capacity(n + 1);
    for row in rows {
        let (h, l) = row?;
        up.push(h);
        lo.push(l);
    }
    let make = |vals: Vec<f64>, name: &str| -> RadialProfile {
        let table = Arc::new(ShellTable {
            radius,
            u_step: opts.u_step,
            values: vals,
        });
        let label = format!("{name}[{}]", field.label);
        match quantity {
            Quantity::Psi => {
                let t = table.clone();
                RadialProfile::new(radius, label, move |r| t.eval(r))
            }
            Quantity::Theta => {
                let (t1, t2) = (table.clone(), table);
                RadialProfile::new(radius, label, move |r| t1.eval(r).exp()).with_log(move |r| t2.eval(r))
            }
        }
    };
    let (uname, lname) = match quantity {
        Quantity::Psi => ("EnvPsi", "envPsi"),
        Quantity::Theta => ("EnvTheta", "envTheta"),
    };
    Ok(EnvelopePair {
        upper: make(up, uname),
        lower: make(lo, lname),
        source: EnvelopeSource::ShellSampled,
        discontinuous_input: false,
    })
}

/// Truncation point for the `s > 0` tail: `e^{-40}` relative weight.
const AVG_TAIL: f64 = 40.0;

/// `Avg_s f(r)` at a single radius.
pub fn avg_s_at(f: &RadialProfile, s: f64, r: f64) -> Result<f64, EnvelopeError> {
    if s == 0.0 || !s.is_finite() {
        return Err(EnvelopeError::InvalidParameter(s));
    }
    let radius = f.domain_radius();
    let (abs_tol, rel_tol) = (1e-10, 1e-8);
    if s < 0.0 {
        // τ = r e^w
        let w_max = (radius / r).ln().max(0.0);
        let g = |w: f64| f.eval((r * w.exp()).min(radius)) * (s * w).exp();
        Ok(-s * integrate(&g, 0.0, w_max, abs_tol, rel_tol)?.value)
    } else {
        // τ = r e^{-w}
        let g = |w: f64| f.eval(r * (-w).exp()) * (-s * w).exp();
        Ok(s * integrate(&g, 0.0, AVG_TAIL / s, abs_tol, rel_tol)?.value)
    }
}

/// The profile `r ↦ Avg_s f(r)`; points where quadrature fails evaluate to NaN.
pub fn avg_s(f: &RadialProfile, s: f64) -> Result<RadialProfile, EnvelopeError> {
    let radius = f.domain_radius();
    for j in 0..48 {
        avg_s_at(f, s, radius * 0.5f64.powi(j))?;
    }
    let g = f.clone();
    Ok(RadialProfile::new(radius, format!("Avg_{s:?}[{}]", f.label()), move |r| {
        avg_s_at(&g, s, r).unwrap_or(f64::NAN)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Potential;

    #[test]
    fn laplacian_envelopes_are_constant() {
        let f = CoefficientField::laplacian(3, 1.0);
        let e = radial_envelopes(&f, Quantity::Psi, &SamplingOptions::default()).unwrap();
        assert_eq!(e.source, EnvelopeSource::Analytic);
        for r in [1.0, 1e-3, 1e-100] {
            assert_eq!(e.upper.eval(r), 3.0);
            assert_eq!(e.lower.eval(r), 3.0);
        }
    }

    #[test]
    fn log_gamma_envelope() {
        let gamma = RadialProfile::parse(0.5, "1/ln(1/r)").unwrap();
        let f = CoefficientField::gilbarg_serrin(
            3,
            0.5,
            gamma.clone(),
            RadialProfile::constant(0.5, 0.0),
            Potential::unit(0.5),
        );
        let e = radial_envelopes(&f, Quantity::Psi, &SamplingOptions::default()).unwrap();
        for r in [0.4, 0.01, 1e-30] {
            let g = gamma.eval(r);
            let expect = 3.0 - 2.0 * g / (1.0 + g);
            assert!((e.upper.eval(r) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_power_sampled() {
        let f = CoefficientField::diagonal_power(3, 1.0, 1.0, Potential::unit(1.0));
        let opts = SamplingOptions {
            u_max: 20.0,
            ..Default::default()
        };
        let e = radial_envelopes(&f, Quantity::Psi, &opts).unwrap();
        assert_eq!(e.source, EnvelopeSource::ShellSampled);
        let mut prev_gap = f64::INFINITY;
        for k in 0..20 {
            let r = (-(k as f64)).exp();
            let (hi, lo) = (e.upper.eval(r), e.lower.eval(r));
            assert!(lo <= hi);
            // Ψ = (3 + r²)/(1 + r²Σξ⁴): the diagonal gives exactly 3, the axes 1 + 2/(1+r²)
            let (ri, ro) = (r * (1.0 - 1e-3), (r * (1.0 + 1e-3)).min(1.0));
            assert!((hi - 3.0).abs() < 1e-12);
            assert!(lo >= 1.0 + 2.0 / (1.0 + ro * ro) - 1e-12);
            assert!(lo <= 1.0 + 2.0 / (1.0 + ri * ri) + 1e-12);
            let gap = hi - lo;
            assert!(gap <= prev_gap * (1.0 + 1e-9) + 1e-15);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-7);
        assert!((e.upper.eval(1e-9) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn theta_envelope_without_overflow() {
        let f = CoefficientField::laplacian(3, 1.0).with_potential(Potential::power_law(1.0, 3.0));
        let e = radial_envelopes(&f, Quantity::Theta, &SamplingOptions::default()).unwrap();
        let r = 1e-200;
        assert!((e.upper.ln_eval(r) - (-3.0 * r.ln())).abs() < 1e-9);
    }

    #[test]
    fn idempotent_on_upper() {
        let p = RadialProfile::parse(1.0, "2 + r").unwrap();
        let e = EnvelopePair::of_profile(&p);
        let e2 = EnvelopePair::of_profile(&e.upper);
        for r in [0.1, 0.7] {
            assert_eq!(e2.upper.eval(r), e.upper.eval(r));
            assert_eq!(e2.lower.eval(r), e.upper.eval(r));
        }
    }

    #[test]
    fn averaging_examples() {
        let c = RadialProfile::constant(1.0, 2.5);
        for r in [0.5, 0.01] {
            assert!((avg_s_at(&c, 1.0, r).unwrap() - 2.5).abs() < 1e-9);
            // s < 0 carries the boundary term c (r/R)^{|s|}
            assert!((avg_s_at(&c, -1.0, r).unwrap() - 2.5 * (1.0 - r)).abs() < 1e-9);
        }
        let id = RadialProfile::parse(1.0, "r").unwrap();
        for r in [0.9, 0.3, 1e-5] {
            assert!((avg_s_at(&id, 1.0, r).unwrap() - r / 2.0).abs() < 1e-9 * r.max(1e-3));
        }
        assert!(matches!(avg_s(&c, 0.0), Err(EnvelopeError::InvalidParameter(_))));
    }

    #[test]
    fn averaging_identity_negative_s() {
        // ∫_r^R f dρ/ρ − ∫_r^R Avg_s f dρ/ρ = Avg_s f(r)/|s| for s < 0
        let f = RadialProfile::parse(1.0, "2 + sin(ln(1/r))").unwrap();
        let s = -0.7;
        let avg = avg_s(&f, s).unwrap();
        for r in [0.5f64, 0.05, 1e-3] {
            let u = (1.0 / r).ln();
            let lhs_f = integrate(&|w: f64| f.eval((-w).exp()), 0.0, u, 1e-12, 1e-10).unwrap().value;
            let lhs_a = integrate(&|w: f64| avg.eval((-w).exp()), 0.0, u, 1e-12, 1e-10).unwrap().value;
            let rhs = avg.eval(r) / s.abs();
            assert!(((lhs_f - lhs_a) - rhs).abs() < 1e-6 * rhs.abs().max(1.0), "r={r}");
        }
    }
}
