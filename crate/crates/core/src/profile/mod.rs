//! Radial profiles: evaluable scalar functions of the radius.

pub mod expr;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use expr::{parse_profile, EvalError, Evaluation, Expr, ParseError};

type Eval = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("profile domains differ: {0} vs {1}")]
    DomainMismatch(f64, f64),
    #[error("envelope ordering violated at r = {r}: lower {lower} > value {value} or value > upper {upper}")]
    EnvelopeOrder {
        r: f64,
        lower: f64,
        value: f64,
        upper: f64,
    },
}

/// Asymptotic description `f(r) ~ c r^exponent |ln r|^log_power` near the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticHint {
    pub exponent: f64,
    pub log_power: f64,
}

/// A real function of the radius on `(0, R]`.
///
/// Evaluation never panics; points outside the expression's domain evaluate
/// to NaN and are caught by the numerical routines that consume profiles.
#[derive(Clone)]
pub struct RadialProfile {
    eval: Eval,
    log_eval: Option<Eval>,
    domain_radius: f64,
    upper_env: Option<Box<RadialProfile>>,
    lower_env: Option<Box<RadialProfile>>,
    asymptotic_hint: Option<AsymptoticHint>,
    continuous: bool,
    label: String,
}

impl fmt::Debug for RadialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialProfile")
            .field("label", &self.label)
            .field("domain_radius", &self.domain_radius)
            .field("continuous", &self.continuous)
            .finish()
    }
}

impl RadialProfile {
    pub fn new<F>(domain_radius: f64, label: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(f),
            log_eval: None,
            domain_radius,
            upper_env: None,
            lower_env: None,
            asymptotic_hint: None,
            continuous: true,
            label: label.into(),
        }
    }

    pub fn constant(domain_radius: f64, c: f64) -> Self {
        let mut p = Self::new(domain_radius, format!("{c:?}"), move |_| c);
        p.asymptotic_hint = Some(AsymptoticHint {
            exponent: 0.0,
            log_power: 0.0,
        });
        p
    }

    pub fn from_expr(domain_radius: f64, e: Expr) -> Self {
        let label = e.to_string();
        Self::new(domain_radius, label, move |r| e.eval(r).unwrap_or(f64::NAN))
    }

    pub fn parse(domain_radius: f64, text: &str) -> Result<Self, ProfileError> {
        let mut p = Self::from_expr(domain_radius, parse_profile(text)?);
        p.label = text.trim().to_string();
        Ok(p)
    }

    /// `r ↦ c · r^(-sigma)`, with an overflow-free logarithm.
    pub fn power(domain_radius: f64, c: f64, sigma: f64) -> Self {
        let mut p = Self::new(domain_radius, format!("{c:?}*r^(-{sigma:?})"), move |r| {
            c * r.powf(-sigma)
        });
        p.log_eval = Some(Arc::new(move |r: f64| c.ln() - sigma * r.ln()));
        p.asymptotic_hint = Some(AsymptoticHint {
            exponent: -sigma,
            log_power: 0.0,
        });
        p
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        (self.eval)(r)
    }

    /// Natural logarithm of the value; overflow-safe when the profile was
    /// built with an analytic logarithm.
    #[inline]
    pub fn ln_eval(&self, r: f64) -> f64 {
        match &self.log_eval {
            Some(l) => l(r),
            None => (self.eval)(r).ln(),
        }
    }

    pub fn with_log<F>(mut self, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.log_eval = Some(Arc::new(f));
        self
    }

    pub fn with_envelopes(mut self, lower: RadialProfile, upper: RadialProfile) -> Self {
        self.lower_env = Some(Box::new(lower));
        self.upper_env = Some(Box::new(upper));
        self
    }

    pub fn with_hint(mut self, hint: AsymptoticHint) -> Self {
        self.asymptotic_hint = Some(hint);
        self
    }

    pub fn with_continuity(mut self, continuous: bool) -> Self {
        self.continuous = continuous;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_continuous(&self) -> bool {
        self.continuous
    }

    pub fn asymptotic_hint(&self) -> Option<AsymptoticHint> {
        self.asymptotic_hint
    }

    pub fn upper_env(&self) -> Option<&RadialProfile> {
        self.upper_env.as_deref()
    }

    pub fn lower_env(&self) -> Option<&RadialProfile> {
        self.lower_env.as_deref()
    }

    /// Check `lower_env ≤ f ≤ upper_env` on the given radii.
    pub fn check_envelopes(&self, grid: &[f64]) -> Result<(), ProfileError> {
        let (Some(lo), Some(hi)) = (&self.lower_env, &self.upper_env) else {
            return Ok(());
        };
        for &r in grid {
            let (l, v, u) = (lo.eval(r), self.eval(r), hi.eval(r));
            let slack = 1e-12 * v.abs().max(1.0);
            if !(l <= v + slack && v <= u + slack) {
                return Err(ProfileError::EnvelopeOrder {
                    r,
                    lower: l,
                    value: v,
                    upper: u,
                });
            }
        }
        Ok(())
    }

    /// `r ↦ f(ln(1/r))`: reinterprets `self` as a function of `t = ln(1/r)`.
    pub fn compose_with_log(&self, domain_radius: f64) -> RadialProfile {
        let inner = self.eval.clone();
        RadialProfile::new(
            domain_radius,
            format!("({})∘ln(1/r)", self.label),
            move |r| inner((1.0 / r).ln()),
        )
        .with_continuity(self.continuous)
    }

    /// Shift by a constant, keeping envelopes.
    pub fn shifted(&self, c: f64) -> RadialProfile {
        let inner = self.eval.clone();
        let mut p = RadialProfile::new(self.domain_radius, format!("({})+{c:?}", self.label), move |r| {
            inner(r) + c
        })
        .with_continuity(self.continuous);
        if let (Some(lo), Some(hi)) = (&self.lower_env, &self.upper_env) {
            p = p.with_envelopes(lo.shifted(c), hi.shifted(c));
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineOp {
    Add,
    Mul,
    Div,
    /// `a ∘ ln(1/r)`; the second operand only supplies the domain.
    ComposeWithLog,
}

/// Pointwise combination of two profiles.
///
/// Envelopes survive addition always, and multiplication or division only when
/// both operands are known to be positive (lower envelopes > 0) so that the
/// operation is monotone in each argument.
pub fn profile_combine(
    op: CombineOp,
    a: &RadialProfile,
    b: &RadialProfile,
) -> Result<RadialProfile, ProfileError> {
    let (ra, rb) = (a.domain_radius, b.domain_radius);
    if (ra - rb).abs() > 1e-14 * ra.abs().max(rb.abs()) {
        return Err(ProfileError::DomainMismatch(ra, rb));
    }
    if op == CombineOp::ComposeWithLog {
        return Ok(a.compose_with_log(ra));
    }
    let (fa, fb) = (a.eval.clone(), b.eval.clone());
    let (sym, f): (&str, Eval) = match op {
        CombineOp::Add => ("+", Arc::new(move |r| fa(r) + fb(r))),
        CombineOp::Mul => ("*", Arc::new(move |r| fa(r) * fb(r))),
        CombineOp::Div => ("/", Arc::new(move |r| fa(r) / fb(r))),
        CombineOp::ComposeWithLog => unreachable!(),
    };
    let mut out = RadialProfile {
        eval: f,
        log_eval: None,
        domain_radius: ra,
        upper_env: None,
        lower_env: None,
        asymptotic_hint: None,
        continuous: a.continuous && b.continuous,
        label: format!("({}){sym}({})", a.label, b.label),
    };
    if let (Some(la), Some(ua), Some(lb), Some(ub)) =
        (a.lower_env(), a.upper_env(), b.lower_env(), b.upper_env())
    {
        let positive = |p: &RadialProfile| (0..64).all(|i| p.eval(ra * 0.5f64.powi(i)) > 0.0);
        let envs = match op {
            CombineOp::Add => Some((
                profile_combine(op, la, lb)?,
                profile_combine(op, ua, ub)?,
            )),
            CombineOp::Mul if positive(la) && positive(lb) => Some((
                profile_combine(op, la, lb)?,
                profile_combine(op, ua, ub)?,
            )),
            CombineOp::Div if positive(la) && positive(lb) => Some((
                profile_combine(op, la, ub)?,
                profile_combine(op, ua, lb)?,
            )),
            _ => None,
        };
        if let Some((lo, hi)) = envs {
            out = out.with_envelopes(lo, hi);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combine_examples() {
        let one = RadialProfile::constant(1.0, 1.0);
        let two = RadialProfile::constant(1.0, 2.0);
        let s = profile_combine(CombineOp::Add, &one, &two).unwrap();
        for r in [1e-9, 0.3, 1.0] {
            assert_eq!(s.eval(r), 3.0);
        }
        let id = RadialProfile::parse(1.0, "r").unwrap();
        let inv = RadialProfile::parse(1.0, "1/r").unwrap();
        let m = profile_combine(CombineOp::Mul, &id, &inv).unwrap();
        for r in [1e-12, 1e-3, 0.5, 1.0] {
            assert!((m.eval(r) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn compose_with_periodic_profile() {
        let phi = RadialProfile::parse(1.0, "1.5 + 0.5*sin(2*pi*r)").unwrap();
        let composed = profile_combine(CombineOp::ComposeWithLog, &phi, &RadialProfile::constant(1.0, 0.0)).unwrap();
        for t in [0.25, 1.25, 3.7] {
            let r = (-t as f64).exp();
            assert!((composed.eval(r) - phi.eval(t)).abs() < 1e-12);
        }
        // 1-periodicity in t
        let r1 = (-0.3f64).exp();
        let r2 = (-1.3f64).exp();
        assert!((composed.eval(r1) - composed.eval(r2)).abs() < 1e-12);
    }

    #[test]
    fn domain_mismatch() {
        let a = RadialProfile::constant(1.0, 1.0);
        let b = RadialProfile::constant(0.5, 1.0);
        assert!(matches!(
            profile_combine(CombineOp::Add, &a, &b),
            Err(ProfileError::DomainMismatch(..))
        ));
    }

    #[test]
    fn envelopes_propagate_only_when_monotone() {
        let mk = |lo: f64, hi: f64| {
            RadialProfile::parse(1.0, "2+sin(1/r)")
                .unwrap()
                .with_envelopes(RadialProfile::constant(1.0, lo), RadialProfile::constant(1.0, hi))
        };
        let f = mk(1.0, 3.0);
        let grid: Vec<f64> = (1..200).map(|i| i as f64 / 200.0).collect();
        f.check_envelopes(&grid).unwrap();
        let sum = profile_combine(CombineOp::Add, &f, &f).unwrap();
        assert!(sum.upper_env().is_some());
        sum.check_envelopes(&grid).unwrap();
        let prod = profile_combine(CombineOp::Mul, &f, &f).unwrap();
        assert!(prod.upper_env().is_some());
        prod.check_envelopes(&grid).unwrap();
        let signed = RadialProfile::parse(1.0, "sin(1/r)")
            .unwrap()
            .with_envelopes(RadialProfile::constant(1.0, -1.0), RadialProfile::constant(1.0, 1.0));
        let prod = profile_combine(CombineOp::Mul, &signed, &f).unwrap();
        assert!(prod.upper_env().is_none());

        let bad = RadialProfile::parse(1.0, "2+sin(1/r)")
            .unwrap()
            .with_envelopes(RadialProfile::constant(1.0, 1.5), RadialProfile::constant(1.0, 3.0));
        assert!(bad.check_envelopes(&grid).is_err());
    }

    #[test]
    fn power_profile_log_is_overflow_free() {
        let k = RadialProfile::power(1.0, 1.0, 1.9);
        let r = 1e-250;
        assert!(k.eval(r).is_infinite());
        assert!((k.ln_eval(r) - 1.9 * 250.0 * 10f64.ln()).abs() < 1e-9);
    }
}
