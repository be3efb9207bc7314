//! Radial Emden–Fowler final value problem
//! `v'' + (φ/r) v' = θ |v|^{p-1} v`, `v(R) = M`, `v'(R) = λ`,
//! integrated from `R` toward the origin.

use std::io::Write;

use thiserror::Error;

use crate::envelopes::{radial_envelopes, EnvelopeError, Quantity, SamplingOptions};
use crate::fields::CoefficientField;
use crate::ode::{integrate, Control, Dopri5Options, IntegrationEnd};
use crate::profile::RadialProfile;

#[derive(Debug, Error)]
pub enum ShootingError {
    #[error("step size underflow at r = {r:e} without crossing the blow-up ceiling (lambda = {lambda})")]
    StiffnessFailure { r: f64, lambda: f64 },
    #[error("classification flip: lambda = {blowup} blows up although the smaller slope {extends} extends")]
    NonMonotoneClassification { blowup: f64, extends: f64 },
    #[error("search budget of {evaluations} trajectories exhausted")]
    SearchBudgetExceeded { evaluations: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

#[derive(Clone)]
pub struct FVPSpec {
    pub phi: RadialProfile,
    /// Coefficient used once `v'` has turned negative; `phi` applies
    /// everywhere when absent.
    pub phi_falling: Option<RadialProfile>,
    pub theta: RadialProfile,
    pub p: f64,
    pub radius: f64,
    pub m_end: f64,
    pub lambda: f64,
}

impl FVPSpec {
    pub fn new(phi: RadialProfile, theta: RadialProfile, p: f64, radius: f64, m_end: f64, lambda: f64) -> Self {
        FVPSpec { phi, phi_falling: None, theta, p, radius, m_end, lambda }
    }

    /// `φ ≡ N − 1`, `θ ≡ c`: the radial Laplacian in dimension `N`.
    pub fn laplacian(dim: usize, theta: f64, p: f64, radius: f64, m_end: f64, lambda: f64) -> Self {
        Self::new(
            RadialProfile::constant(radius, dim as f64 - 1.0),
            RadialProfile::constant(radius, theta),
            p,
            radius,
            m_end,
            lambda,
        )
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut s = self.clone();
        s.lambda = lambda;
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    ReachedRmin,
    BlowUp { r_prime: f64 },
    TurnedNegative { r: f64 },
}

impl Termination {
    pub fn is_blowup(&self) -> bool {
        matches!(self, Termination::BlowUp { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Termination::ReachedRmin => "reached_rmin",
            Termination::BlowUp { .. } => "blow_up",
            Termination::TurnedNegative { .. } => "turned_negative",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub r: f64,
    pub v: f64,
    pub dv_dr: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Ordered from `R` inward.
    pub samples: Vec<Sample>,
    pub termination: Termination,
    /// Radius where `v'` changed sign from positive to negative.
    pub turning_radius: Option<f64>,
    /// Calibrated constant of the ceiling `C r^{2/(1-p)}` (before the safety factor).
    pub keller_constant: f64,
    pub ceiling: KellerCeiling,
}

impl Trajectory {
    /// Largest ratio `v / (C r^{2/(1-p)})` over the samples, `C` the calibrated constant.
    pub fn keller_ratio(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.v / (self.keller_constant * s.r.powf(self.ceiling.exponent)))
            .fold(0.0, f64::max)
    }

    /// Largest `v(r/2)/v(r)` over the samples, with `v(r/2)` interpolated
    /// linearly in `ln r`.
    pub fn harnack_ratio(&self) -> Option<f64> {
        let n = self.samples.len();
        let mut best: Option<f64> = None;
        let mut j = 0;
        for i in 0..n {
            let target = self.samples[i].r * 0.5;
            while j + 1 < n && self.samples[j + 1].r > target {
                j += 1;
            }
            if j + 1 >= n || self.samples[i].v <= 0.0 {
                break;
            }
            let (a, b) = (&self.samples[j], &self.samples[j + 1]);
            if !(a.r >= target && b.r <= target) {
                continue;
            }
            let t = (target / a.r).ln() / (b.r / a.r).ln();
            let v = a.v + t * (b.v - a.v);
            let q = v / self.samples[i].v;
            best = Some(best.map_or(q, |x: f64| x.max(q)));
        }
        best
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "r,v,dv_dr")?;
        for s in &self.samples {
            writeln!(w, "{:e},{:e},{:e}", s.r, s.v, s.dv_dr)?;
        }
        Ok(())
    }
}

/// Ceiling rule `r ↦ safety · C · r^{2/(1-p)}`, with `C` calibrated per run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KellerCeiling {
    pub exponent: f64,
    pub safety: f64,
}

impl KellerCeiling {
    pub fn at(&self, constant: f64, r: f64) -> f64 {
        self.safety * constant * r.powf(self.exponent)
    }
}

pub fn keller_ceiling(p: f64, safety: f64) -> Result<KellerCeiling, ShootingError> {
    if !(p > 1.0) {
        return Err(ShootingError::InvalidParameter(format!("Keller ceiling needs p > 1, got {p}")));
    }
    if !(safety >= 1.0) {
        return Err(ShootingError::InvalidParameter(format!("safety factor must be >= 1, got {safety}")));
    }
    Ok(KellerCeiling { exponent: 2.0 / (1.0 - p), safety })
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub samples_per_decade: usize,
    pub ode: Dopri5Options,
    pub safety: f64,
    /// Overshoot of the ceiling accepted as immediate blow-up.
    pub overshoot: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { samples_per_decade: 50, ode: Dopri5Options::default(), safety: 10.0, overshoot: 1e8 }
    }
}

pub fn default_rmin(radius: f64) -> f64 {
    radius * 2f64.powi(-40)
}

struct Watch {
    cal: f64,
    c0: f64,
    above_since: Option<(f64, f64)>,
    blown: Option<f64>,
    negative: Option<f64>,
    turning: Option<f64>,
    prev: (f64, f64, f64),
}

/// Integrates in `s = ln(R/r)` with `w = r v'`:
/// `v_s = −w`, `w_s = (φ − 1) w − r² θ |v|^{p−1} v`.
pub fn solve_fvp(spec: &FVPSpec, r_min: f64, opts: &SolveOptions) -> Result<Trajectory, ShootingError> {
    let radius = spec.radius;
    if !(r_min > 0.0 && r_min < radius) {
        return Err(ShootingError::InvalidParameter(format!("r_min must lie in (0, R), got {r_min}")));
    }
    let ceiling = keller_ceiling(spec.p, opts.safety)?;
    let p = spec.p;
    let ln_r0 = radius.ln();
    let s_end = (radius / r_min).ln();
    let ds = std::f64::consts::LN_10 / opts.samples_per_decade.max(1) as f64;
    let n_out = (s_end / ds).ceil() as usize;
    let outputs: Vec<f64> = (1..=n_out).map(|i| (i as f64 * ds).min(s_end)).collect();
    let s_decade = std::f64::consts::LN_10;

    let rhs = |s: f64, y: &[f64; 2]| -> [f64; 2] {
        let ln_r = ln_r0 - s;
        let r = ln_r.exp();
        let phi = match (&spec.phi_falling, y[1] < 0.0) {
            (Some(f), true) => f.eval(r),
            _ => spec.phi.eval(r),
        };
        let v = y[0];
        let react = if v == 0.0 {
            0.0
        } else {
            (spec.theta.ln_eval(r) + 2.0 * ln_r + p * v.abs().ln()).exp() * v.signum()
        };
        [-y[1], (phi - 1.0) * y[1] - react]
    };

    let w0 = radius * spec.lambda;
    let c0 = {
        let scale = spec.m_end.abs().max(w0.abs());
        if scale > 0.0 { scale * radius.powf(-ceiling.exponent) } else { f64::MIN_POSITIVE }
    };
    let mut samples = vec![Sample { r: radius, v: spec.m_end, dv_dr: spec.lambda }];
    let mut watch = Watch {
        cal: spec.m_end.max(0.0) * radius.powf(-ceiling.exponent),
        c0,
        above_since: None,
        blown: None,
        negative: None,
        turning: None,
        prev: (0.0, spec.m_end, w0),
    };

    let end = integrate(rhs, 0.0, [spec.m_end, w0], &outputs, &opts.ode, |s, y, at_out| {
        let r = (ln_r0 - s).exp();
        let (v, w) = (y[0], y[1]);
        let (ps, _, pw) = watch.prev;
        if pw > 0.0 && w <= 0.0 && watch.turning.is_none() {
            let t = pw / (pw - w);
            watch.turning = Some((ln_r0 - (ps + t * (s - ps))).exp());
        }
        let prev_v = watch.prev.1;
        watch.prev = (s, v, w);
        if at_out {
            samples.push(Sample { r, v, dv_dr: w / r });
        }
        if v < 0.0 {
            watch.negative = Some(r);
            return Control::Stop;
        }
        let lim;
        if s <= s_decade {
            watch.cal = watch.cal.max(v * r.powf(-ceiling.exponent));
            lim = ceiling.at(watch.c0.max(watch.cal / opts.safety), r) * opts.safety;
            if v > opts.overshoot * lim {
                watch.blown = Some(r);
                return Control::Stop;
            }
            return Control::Continue;
        }
        let c = if watch.cal > 0.0 { watch.cal } else { watch.c0 };
        lim = ceiling.at(c, r);
        if v > lim {
            match watch.above_since {
                None => watch.above_since = Some((s, v)),
                Some((s_c, _)) => {
                    if v >= opts.overshoot * lim || (s - s_c >= s_decade && v > prev_v) {
                        watch.blown = Some(r);
                        return Control::Stop;
                    }
                }
            }
        } else {
            watch.above_since = None;
        }
        Control::Continue
    });

    let keller_constant = if watch.cal > 0.0 { watch.cal } else { watch.c0 };
    let termination = match end {
        IntegrationEnd::Finished { .. } => Termination::ReachedRmin,
        IntegrationEnd::Stopped { .. } => {
            if let Some(r) = watch.negative {
                Termination::TurnedNegative { r }
            } else {
                Termination::BlowUp { r_prime: watch.blown.unwrap_or(f64::NAN) }
            }
        }
        IntegrationEnd::StepUnderflow { t, y } | IntegrationEnd::StepBudget { t, y } => {
            let r = (ln_r0 - t).exp();
            let above = y[0] > ceiling.at(keller_constant, r);
            // superlinear growth in s: |d ln v / ds| huge
            let steep = y[0] > 0.0 && (-y[1] / y[0]) > 1e6;
            if above || steep {
                Termination::BlowUp { r_prime: r }
            } else {
                return Err(ShootingError::StiffnessFailure { r, lambda: spec.lambda });
            }
        }
    };
    Ok(Trajectory { samples, termination, turning_radius: watch.turning, keller_constant, ceiling })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    ExtendsSingular { a: f64, b: f64 },
    ExtendsBounded { v0: f64 },
    Undetermined { reason: String },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::ExtendsSingular { .. } => "extends_singular",
            Outcome::ExtendsBounded { .. } => "extends_bounded",
            Outcome::Undetermined { .. } => "undetermined",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShootingResult {
    pub lambda0: Option<f64>,
    /// `(blow-up side, extension side)`.
    pub bracket: Option<(f64, f64)>,
    pub outcome: Outcome,
    /// Sorted by λ.
    pub evidence: Vec<(f64, Termination)>,
    /// Re-run on the extension side of the bracket.
    pub trajectory: Option<Trajectory>,
    /// Slope of the re-run, at or just above the extension edge.
    pub rerun_lambda: Option<f64>,
    pub r_min: f64,
}

impl ShootingResult {
    pub fn bracket_width(&self) -> Option<f64> {
        self.bracket.map(|(lo, hi)| hi - lo)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ShootingOptions {
    pub solve: SolveOptions,
    pub r_min: f64,
    pub bracket_rel: f64,
    pub max_doublings: u32,
    /// Coarse sweep points used to cross-check the monotone structure.
    pub sweep: usize,
}

impl ShootingOptions {
    pub fn new(radius: f64) -> Self {
        ShootingOptions { solve: SolveOptions::default(), r_min: default_rmin(radius), bracket_rel: 1e-10, max_doublings: 40, sweep: 8 }
    }
}

fn fit_growth(traj: &Trajectory, decades: f64) -> Outcome {
    let last = match traj.samples.last() {
        Some(s) => s.r,
        None => return Outcome::Undetermined { reason: "empty trajectory".into() },
    };
    let cut = last * 10f64.powf(decades);
    let pts: Vec<(f64, f64)> = traj.samples.iter().filter(|s| s.r <= cut && s.v > 0.0).map(|s| (s.r.ln(), s.v.ln())).collect();
    if pts.len() < 8 {
        return Outcome::Undetermined { reason: "too few samples in the fit window".into() };
    }
    let v_first = pts[0].1.exp();
    let v_last = pts[pts.len() - 1].1.exp();
    let two = lsq(&pts, false);
    let three = lsq(&pts, true);
    let (a, b) = match (two, three) {
        (Some((_, a2, _, r2)), Some((_, a3, b3, r3))) => {
            if r3 * 10.0 < r2 { (a3, b3) } else { (a2, 0.0) }
        }
        (Some((_, a2, _, _)), None) => (a2, 0.0),
        _ => return Outcome::Undetermined { reason: "singular growth fit".into() },
    };
    if a > -1e-2 && (v_last / v_first - 1.0).abs() < 1e-2 {
        return Outcome::ExtendsBounded { v0: v_last };
    }
    if a < 0.0 {
        Outcome::ExtendsSingular { a, b }
    } else {
        Outcome::Undetermined { reason: format!("growth exponent {a} is not negative") }
    }
}

/// Least squares `ln v = c + a ln r (+ b ln|ln r|)`; returns `(c, a, b, max residual)`.
fn lsq(pts: &[(f64, f64)], with_log: bool) -> Option<(f64, f64, f64, f64)> {
    use nalgebra::{DMatrix, DVector};
    let k = if with_log { 3 } else { 2 };
    let x = DMatrix::from_fn(pts.len(), k, |i, j| match j {
        0 => 1.0,
        1 => pts[i].0,
        _ => pts[i].0.abs().ln(),
    });
    let y = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let sol = x.clone().svd(true, true).solve(&y, 1e-14).ok()?;
    let res = (&x * &sol - &y).amax();
    Some((sol[0], sol[1], if with_log { sol[2] } else { 0.0 }, res))
}

/// Bisection for `λ₀`, the boundary between blow-up (below) and
/// extension to `r_min` (above), searched in `[lambda_lo, lambda_hi]`.
pub fn find_lambda0(
    phi: RadialProfile,
    theta: RadialProfile,
    p: f64,
    radius: f64,
    m_end: f64,
    lambda_lo: f64,
    lambda_hi: f64,
    opts: &ShootingOptions,
) -> Result<ShootingResult, ShootingError> {
    if !(lambda_lo < lambda_hi) || lambda_hi > 0.0 {
        return Err(ShootingError::InvalidParameter(format!(
            "need lambda_lo < lambda_hi <= 0, got [{lambda_lo}, {lambda_hi}]"
        )));
    }
    let base = FVPSpec::new(phi, theta, p, radius, m_end, lambda_hi);
    let mut evidence: Vec<(f64, Termination)> = Vec::new();
    let run = |lam: f64, ev: &mut Vec<(f64, Termination)>| -> Result<Termination, ShootingError> {
        let t = solve_fvp(&base.with_lambda(lam), opts.r_min, &opts.solve)?.termination;
        ev.push((lam, t));
        Ok(t)
    };

    let t_hi = run(lambda_hi, &mut evidence)?;
    if t_hi.is_blowup() {
        // nothing extends: probe a geometric ladder of slopes as evidence
        let mut lam = -1e-3 * (1.0 + lambda_hi.abs());
        for _ in 0..16 {
            run(lambda_hi + lam, &mut evidence)?;
            lam *= 4.0;
        }
        sort_evidence(&mut evidence);
        check_monotone(&evidence)?;
        let all_blow = evidence.iter().all(|(_, t)| t.is_blowup());
        let reason = if all_blow {
            "every slope in the sweep blows up".to_string()
        } else {
            "extension only for isolated slopes".to_string()
        };
        return Ok(ShootingResult { lambda0: None, bracket: None, outcome: Outcome::Undetermined { reason }, evidence, trajectory: None, rerun_lambda: None, r_min: opts.r_min });
    }

    let mut hi = lambda_hi;
    let mut lo = lambda_lo;
    let mut doublings = 0;
    loop {
        if run(lo, &mut evidence)?.is_blowup() {
            break;
        }
        hi = lo;
        doublings += 1;
        if doublings > opts.max_doublings {
            return Err(ShootingError::SearchBudgetExceeded { evaluations: evidence.len() });
        }
        lo *= 2.0;
    }
    while hi - lo > opts.bracket_rel * (1.0 + lo.abs().min(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if run(mid, &mut evidence)?.is_blowup() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // coarse cross-check of the ordering away from the bracket
    let span = lambda_hi - lo;
    for i in 1..=opts.sweep {
        let lam = lo - span * 0.5 + span * 1.5 * i as f64 / (opts.sweep + 1) as f64;
        if (lam - lo).abs() > 1e-3 * span {
            run(lam, &mut evidence)?;
        }
    }
    sort_evidence(&mut evidence);
    check_monotone(&evidence)?;

    // Just above λ₀ the trajectory shadows the separatrix and may still peel
    // off toward blow-up in the extra decade; step away from the bracket
    // until the deeper run extends.
    let width = (hi - lo).max(f64::EPSILON * (1.0 + hi.abs()));
    let mut offset = 0.0;
    let mut deep = solve_fvp(&base.with_lambda(hi), opts.r_min / 10.0, &opts.solve)?;
    while deep.termination.is_blowup() && hi + offset < lambda_hi {
        offset = if offset == 0.0 { width } else { offset * 10.0 };
        let lam = (hi + offset).min(lambda_hi);
        deep = solve_fvp(&base.with_lambda(lam), opts.r_min / 10.0, &opts.solve)?;
    }
    let outcome = match deep.termination {
        Termination::ReachedRmin => fit_growth(&deep, 2.0),
        other => Outcome::Undetermined { reason: format!("deeper re-run ended with {}", other.label()) },
    };
    Ok(ShootingResult {
        lambda0: Some(0.5 * (lo + hi)),
        bracket: Some((lo, hi)),
        outcome,
        evidence,
        trajectory: Some(deep),
        rerun_lambda: Some((hi + offset).min(lambda_hi)),
        r_min: opts.r_min,
    })
}

fn sort_evidence(ev: &mut [(f64, Termination)]) {
    ev.sort_by(|a, b| a.0.total_cmp(&b.0));
}

/// Blow-up must not occur above a slope that extends.
fn check_monotone(ev: &[(f64, Termination)]) -> Result<(), ShootingError> {
    let mut lowest_extends: Option<f64> = None;
    for (lam, t) in ev {
        if t.is_blowup() {
            if let Some(e) = lowest_extends {
                return Err(ShootingError::NonMonotoneClassification { blowup: *lam, extends: e });
            }
        } else if lowest_extends.is_none() {
            lowest_extends = Some(*lam);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum BarrierOutcome {
    BarrierFound { lambda: f64, r_turn: f64, r_blowup: f64 },
    NotFound { tried: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions {
    pub solve: SolveOptions,
    pub r_min: f64,
    pub lambda_start: f64,
    pub factor: f64,
    pub max_trials: usize,
}

impl BarrierOptions {
    pub fn new(radius: f64) -> Self {
        BarrierOptions { solve: SolveOptions::default(), r_min: default_rmin(radius), lambda_start: 1e-3, factor: 2.0, max_trials: 60 }
    }
}

/// Sweeps `λ > 0` upward for a trajectory that rises from `R`, turns at
/// `R'` (`v'(R') = 0`) and then blows up. `phi_rising` applies while
/// `v' > 0`, `phi_falling` afterwards.
pub fn barrier_construct(
    phi_rising: RadialProfile,
    phi_falling: RadialProfile,
    theta: RadialProfile,
    p: f64,
    radius: f64,
    m_end: f64,
    opts: &BarrierOptions,
) -> Result<BarrierOutcome, ShootingError> {
    if !(p > 1.0) {
        return Err(ShootingError::InvalidParameter(format!("barrier search needs p > 1, got {p}")));
    }
    let mut spec = FVPSpec::new(phi_rising, theta, p, radius, m_end, opts.lambda_start);
    spec.phi_falling = Some(phi_falling);
    let mut lam = opts.lambda_start;
    let mut turned_any = false;
    for trial in 0..opts.max_trials {
        let t = solve_fvp(&spec.with_lambda(lam), opts.r_min, &opts.solve)?;
        match (t.termination, t.turning_radius) {
            (Termination::BlowUp { r_prime }, Some(r_turn)) => {
                return Ok(BarrierOutcome::BarrierFound { lambda: lam, r_turn, r_blowup: r_prime });
            }
            (Termination::TurnedNegative { .. }, _) => {
                // larger slopes only dive faster
                return Ok(BarrierOutcome::NotFound { tried: trial + 1 });
            }
            (_, Some(_)) => turned_any = true,
            _ => {}
        }
        lam *= opts.factor;
    }
    if turned_any {
        Ok(BarrierOutcome::NotFound { tried: opts.max_trials })
    } else {
        Err(ShootingError::SearchBudgetExceeded { evaluations: opts.max_trials })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subsolution {
    pub m: f64,
    pub alpha: f64,
    /// `sup r^σ EnvΘ(r)` on the grid.
    pub c: f64,
    /// Smallest admissible `m`; the returned `m` doubles it.
    pub m_threshold: f64,
}

/// Radii `R·2^{-k/4}`, `k = 0..=160`.
pub fn subsolution_grid(radius: f64) -> Vec<f64> {
    (0..=160).map(|k| radius * 2f64.powf(-(k as f64) / 4.0)).collect()
}

/// Power subsolution `u = m|x|^{-α}` for `p < 1`.
pub fn subsolution_power(f: &CoefficientField, p: f64, sigma: f64, sampling: &SamplingOptions) -> Result<Subsolution, ShootingError> {
    if !(p < 1.0) {
        return Err(ShootingError::InvalidParameter(format!("power subsolution needs p < 1, got {p}")));
    }
    let psi = radial_envelopes(f, Quantity::Psi, sampling)?;
    let theta = radial_envelopes(f, Quantity::Theta, sampling)?;
    let grid = subsolution_grid(f.radius);
    let sup_psi = grid.iter().map(|&r| psi.upper.eval(r)).fold(f64::NEG_INFINITY, f64::max);
    let ln_c = grid.iter().map(|&r| theta.upper.ln_eval(r) + sigma * r.ln()).fold(f64::NEG_INFINITY, f64::max);
    let alpha = (sup_psi - 2.0).max((sigma - 2.0) / (1.0 - p)).max(0.0) + 1.0;
    let e = sigma + alpha * p - alpha - 2.0;
    let ln_min_x = grid
        .iter()
        .map(|&r| (alpha * (2.0 + alpha - psi.upper.eval(r))).ln() + e * r.ln())
        .fold(f64::INFINITY, f64::min);
    let m_threshold = ((ln_c - ln_min_x) / (1.0 - p)).exp();
    Ok(Subsolution { m: 2.0 * m_threshold, alpha, c: ln_c.exp(), m_threshold })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SolveOptions {
        SolveOptions::default()
    }

    #[test]
    fn linear_limit_is_harmonic() {
        let spec = FVPSpec::laplacian(3, 1e-12, 2.0, 1.0, 1.0, -1.0);
        let t = solve_fvp(&spec, 1e-6, &opts()).unwrap();
        assert_eq!(t.termination, Termination::ReachedRmin);
        for s in t.samples.iter().step_by(17) {
            assert!((s.v * s.r - 1.0).abs() < 1e-6, "{:?}", s);
        }
    }

    #[test]
    fn zero_slope_extends_and_matches_fixed_step() {
        let spec = FVPSpec::laplacian(3, 1.0, 2.0, 1.0, 1.0, 0.0);
        let t = solve_fvp(&spec, 1e-8, &opts()).unwrap();
        assert_eq!(t.termination, Termination::ReachedRmin);
        assert!(t.keller_ratio() <= t.ceiling.safety);
        for w in t.samples.windows(2) {
            assert!(w[1].v >= w[0].v && w[1].dv_dr <= 0.0);
        }
        // classical RK4 in s at a fixed step, down to r = 1e-2
        let s_end = 100f64.ln();
        let steps = (s_end / 1e-4).round() as usize;
        let h = s_end / steps as f64;
        let f = |s: f64, y: [f64; 2]| {
            let r = (-s).exp();
            [-y[1], y[1] - r * r * y[0] * y[0]]
        };
        let mut y = [1.0, 0.0];
        let mut s = 0.0;
        for _ in 0..steps {
            let k1 = f(s, y);
            let k2 = f(s + h / 2.0, [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]]);
            let k3 = f(s + h / 2.0, [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]]);
            let k4 = f(s + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
            for i in 0..2 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            s += h;
        }
        let at = t.samples.iter().find(|x| (x.r / 1e-2 - 1.0).abs() < 1e-9).unwrap();
        assert!((at.v / y[0] - 1.0).abs() < 1e-8, "{} {}", at.v, y[0]);
    }

    #[test]
    fn steep_slope_blows_up() {
        // |λ| well above the heuristic S^{-(p+1)/(p-1)} scale
        let spec = FVPSpec::laplacian(3, 1.0, 2.0, 1.0, 0.0, -1e3);
        let t = solve_fvp(&spec, 1e-8, &opts()).unwrap();
        match t.termination {
            Termination::BlowUp { r_prime } => assert!(r_prime > 0.0 && r_prime < 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn keller_exponents() {
        assert_eq!(keller_ceiling(3.0, 1.0).unwrap().exponent, -1.0);
        assert_eq!(keller_ceiling(2.0, 1.0).unwrap().exponent, -2.0);
        assert_eq!(keller_ceiling(1.5, 1.0).unwrap().exponent, -4.0);
        assert!(keller_ceiling(1.0, 1.0).is_err());
    }

    #[test]
    fn ordering_in_lambda() {
        let base = FVPSpec::laplacian(3, 1.0, 2.0, 1.0, 1.0, 0.0);
        let a = solve_fvp(&base.with_lambda(-0.5), 1e-4, &opts()).unwrap();
        let b = solve_fvp(&base.with_lambda(-0.1), 1e-4, &opts()).unwrap();
        let n = a.samples.len().min(b.samples.len());
        assert!(n > 100);
        for i in 0..n {
            assert!(a.samples[i].v >= b.samples[i].v);
        }
    }

    #[test]
    fn divergence_form_identity() {
        // (Γ v')' = θ Γ v^p with Γ = r^2 for the N = 3 Laplacian
        let base = FVPSpec::laplacian(3, 1.0, 2.0, 1.0, 1.0, -0.3);
        let mut o = opts();
        o.samples_per_decade = 400;
        let t = solve_fvp(&base, 1e-3, &o).unwrap();
        let n = t.samples.len();
        let ds = std::f64::consts::LN_10 / 400.0;
        // integrand in s: θ Γ v^p r
        let g: Vec<f64> = t.samples.iter().map(|s| s.r.powi(3) * s.v * s.v).collect();
        let mut integral = 0.0;
        let mut i = 0;
        while i + 2 < n {
            integral += ds / 3.0 * (g[i] + 4.0 * g[i + 1] + g[i + 2]);
            i += 2;
            let s = &t.samples[i];
            let lhs = s.dv_dr * s.r * s.r;
            let rhs = base.lambda - integral;
            assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1e-3), "{} {}", lhs, rhs);
        }
    }

    #[test]
    fn monotone_check_flags_flip() {
        let ev = vec![(-2.0, Termination::BlowUp { r_prime: 0.5 }), (-1.0, Termination::ReachedRmin), (-0.5, Termination::BlowUp { r_prime: 0.5 })];
        assert!(matches!(check_monotone(&ev), Err(ShootingError::NonMonotoneClassification { .. })));
    }

    #[test]
    fn subsolution_laplacian() {
        let f = CoefficientField::laplacian(3, 1.0);
        let s = subsolution_power(&f, 0.0, 0.0, &SamplingOptions::default()).unwrap();
        assert!((s.alpha - 2.0).abs() < 1e-12);
        // Δ(m r^{-2}) = 2m r^{-4} ≥ 1 on (0, 1] iff m ≥ 1/2
        assert!((s.m_threshold - 0.5).abs() < 1e-12, "{}", s.m_threshold);
        let s = subsolution_power(&f, -1.0, 1.0, &SamplingOptions::default()).unwrap();
        assert!(s.alpha + 2.0 >= -s.alpha + 1.0 && s.alpha > 1.0);
    }

    #[test]
    fn csv_columns() {
        let spec = FVPSpec::laplacian(3, 1.0, 2.0, 1.0, 1.0, 0.0);
        let t = solve_fvp(&spec, 1e-2, &opts()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("r,v,dv_dr\n"));
        assert_eq!(text.lines().count(), t.samples.len() + 1);
    }
}
