//! Pointwise checks of candidate radial solutions against `ℒu ≥ K u^p`.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::fields::{CoefficientField, DirectionSet, FieldError, DEFAULT_SEED};
use crate::shooting::Trajectory;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("stencil error estimate {estimate:e} exceeds {tol:e} (relative) at r = {r:e}")]
    DifferentiationNoise { r: f64, estimate: f64, tol: f64 },
    #[error("candidate has too few samples ({0}) for 5-point stencils")]
    TooFewSamples(usize),
    #[error("candidate samples are not uniformly spaced in ln r")]
    IrregularGrid,
    #[error(transparent)]
    Field(#[from] FieldError),
}

type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Radial profile with analytic first and second derivatives.
#[derive(Clone)]
pub struct ClosedForm {
    pub label: String,
    pub v: RadialFn,
    pub dv: RadialFn,
    pub d2v: RadialFn,
}

impl ClosedForm {
    /// `m r^{-α}`.
    pub fn power(m: f64, alpha: f64) -> Self {
        ClosedForm {
            label: format!("{m}*r^(-{alpha})"),
            v: Arc::new(move |r| m * r.powf(-alpha)),
            dv: Arc::new(move |r| -alpha * m * r.powf(-alpha - 1.0)),
            d2v: Arc::new(move |r| alpha * (alpha + 1.0) * m * r.powf(-alpha - 2.0)),
        }
    }

    /// `c r^{2-A} ln^q(1/r)` with `q = (2-A)/(2-σ)`, defined for `r < 1`.
    pub fn log_power(c: f64, a: f64, sigma: f64) -> Self {
        let q = (2.0 - a) / (2.0 - sigma);
        let v = move |r: f64| c * r.powf(2.0 - a) * (-r.ln()).powf(q);
        let g = move |r: f64| (2.0 - a) - q / (-r.ln());
        ClosedForm {
            label: format!("{c}*r^(2-{a})*ln(1/r)^{q}"),
            v: Arc::new(v),
            dv: Arc::new(move |r| v(r) * g(r) / r),
            d2v: Arc::new(move |r| {
                let l = -r.ln();
                let gr = g(r);
                v(r) / (r * r) * (gr * gr - gr - q / (l * l))
            }),
        }
    }
}

/// Sample positions and optional derivative data for a candidate.
pub enum Candidate<'a> {
    Closed(&'a ClosedForm),
    Numeric(&'a Trajectory),
}

#[derive(Debug, Clone, Copy)]
pub struct ResidualGrid {
    pub r_lo: f64,
    pub r_hi: f64,
    pub radii: usize,
    pub directions: usize,
    pub seed: u64,
    /// Relative tolerance on `ℒu − K u^p` against the largest term.
    pub tol_rel: f64,
}

impl ResidualGrid {
    pub fn new(r_lo: f64, r_hi: f64) -> Self {
        ResidualGrid { r_lo, r_hi, radii: 200, directions: 64, seed: DEFAULT_SEED, tol_rel: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// Radii checked, each with the number of directions used.
    pub grid: Vec<(f64, usize)>,
    /// Smallest `ℒu − K u^p` seen.
    pub min_residual: f64,
    /// Smallest residual divided by the largest of its terms.
    pub min_relative: f64,
    pub violation_fraction: f64,
    pub pairs: usize,
    pub pass: bool,
}

struct Point {
    r: f64,
    v: f64,
    dv: f64,
    d2v: f64,
}

fn numeric_points(t: &Trajectory, grid: &ResidualGrid) -> Result<Vec<Point>, VerifyError> {
    let s = &t.samples;
    let n = s.len();
    if n < 9 {
        return Err(VerifyError::TooFewSamples(n));
    }
    let h = (s[0].r / s[1].r).ln();
    // a shorter final step onto r_min is allowed; it is dropped here
    let mut n = n;
    if ((s[n - 2].r / s[n - 1].r).ln() / h - 1.0).abs() > 1e-6 {
        n -= 1;
    }
    for w in s[..n].windows(2) {
        if ((w[0].r / w[1].r).ln() / h - 1.0).abs() > 1e-6 {
            return Err(VerifyError::IrregularGrid);
        }
    }
    if n < 9 {
        return Err(VerifyError::TooFewSamples(n));
    }
    let mut pts = Vec::new();
    // v'' = −(1/r) d v'/ds on the uniform s grid; stencils at h and 2h give
    // a Richardson error estimate for the finer one
    for i in 4..n - 4 {
        let r = s[i].r;
        if r < grid.r_lo || r > grid.r_hi {
            continue;
        }
        let f = |k: isize| s[(i as isize + k) as usize].dv_dr;
        let d1 = (f(-2) - 8.0 * f(-1) + 8.0 * f(1) - f(2)) / (12.0 * h);
        let d2 = (f(-4) - 8.0 * f(-2) + 8.0 * f(2) - f(4)) / (24.0 * h);
        let d2v = -d1 / r;
        let est = (d1 - d2).abs() / 15.0 / r;
        let scale = d2v.abs().max(s[i].dv_dr.abs() / r);
        if est > grid.tol_rel * scale {
            return Err(VerifyError::DifferentiationNoise { r, estimate: est / scale, tol: grid.tol_rel });
        }
        pts.push(Point { r, v: s[i].v, dv: s[i].dv_dr, d2v });
    }
    Ok(pts)
}

fn closed_points(c: &ClosedForm, grid: &ResidualGrid) -> Vec<Point> {
    let n = grid.radii.max(2);
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            let r = grid.r_hi * (grid.r_lo / grid.r_hi).powf(t);
            Point { r, v: (c.v)(r), dv: (c.dv)(r), d2v: (c.d2v)(r) }
        })
        .collect()
}

/// Evaluates `((a x,x)/|x|²)(v'' + (Ψ−1) v'/r) − K v^p` over radii × directions.
pub fn residual_check(f: &CoefficientField, candidate: Candidate<'_>, p: f64, grid: &ResidualGrid) -> Result<ResidualReport, VerifyError> {
    let pts = match candidate {
        Candidate::Closed(c) => closed_points(c, grid),
        Candidate::Numeric(t) => numeric_points(t, grid)?,
    };
    let n_dir = if pts.is_empty() { grid.directions } else { grid.directions.max(10_000usize.div_ceil(pts.len())) };
    let dirs = DirectionSet::new(f.dim, n_dir, grid.seed);
    let dirs: Vec<Vec<f64>> = dirs.iter().take(n_dir).map(|d| d.to_vec()).collect();
    let per_radius: Vec<Result<(f64, f64, usize), FieldError>> = pts
        .par_iter()
        .map(|pt| {
            let mut min_abs = f64::INFINITY;
            let mut min_rel = f64::INFINITY;
            let mut bad = 0usize;
            let react = f.potential.k(pt.r) * pt.v.abs().powf(p) * pt.v.signum();
            for d in &dirs {
                let q = f.ratios_at(pt.r, d)?;
                let t1 = q.normal_coefficient * pt.d2v;
                let t2 = q.normal_coefficient * (q.psi - 1.0) / pt.r * pt.dv;
                let res = t1 + t2 - react;
                let scale = t1.abs().max(t2.abs()).max(react.abs());
                let rel = if scale > 0.0 { res / scale } else { 0.0 };
                if rel < -grid.tol_rel {
                    bad += 1;
                }
                min_abs = min_abs.min(res);
                min_rel = min_rel.min(rel);
            }
            Ok((min_abs, min_rel, bad))
        })
        .collect();
    let mut min_residual = f64::INFINITY;
    let mut min_relative = f64::INFINITY;
    let mut bad = 0usize;
    for r in per_radius {
        let (a, b, c) = r?;
        min_residual = min_residual.min(a);
        min_relative = min_relative.min(b);
        bad += c;
    }
    let pairs = pts.len() * dirs.len();
    Ok(ResidualReport {
        grid: pts.iter().map(|p| (p.r, dirs.len())).collect(),
        min_residual,
        min_relative,
        violation_fraction: if pairs > 0 { bad as f64 / pairs as f64 } else { 0.0 },
        pairs,
        pass: bad == 0,
    })
}

/// Central second differences of the full operator at `x`, for
/// cross-checking the radial reduction.
pub fn apply_operator_fd<U>(f: &CoefficientField, u: U, x: &[f64], h: f64) -> f64
where
    U: Fn(&[f64]) -> f64,
{
    let n = x.len();
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dir: Vec<f64> = x.iter().map(|v| v / r).collect();
    let t = f.tensor(r, &dir);
    let at = |shift: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, d) in shift {
            y[i] += d;
        }
        u(&y)
    };
    let u0 = u(x);
    let mut total = 0.0;
    for i in 0..n {
        let dii = (at(&[(i, h)]) - 2.0 * u0 + at(&[(i, -h)])) / (h * h);
        total += t.a[(i, i)] * dii;
        let di = (at(&[(i, h)]) - at(&[(i, -h)])) / (2.0 * h);
        total += t.scaled_b[i] / r * di;
        for j in (i + 1)..n {
            let dij = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)]) + at(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            total += 2.0 * t.a[(i, j)] * dij;
        }
    }
    total
}

/// True when every decade of the sampled grid, the deepest excepted,
/// contains a radius `R_k` with `v(R_k) < v(r)` for all sampled `r < R_k`.
pub fn monotone_envelope_check(t: &Trajectory) -> bool {
    let s = &t.samples;
    let n = s.len();
    if n < 2 {
        return false;
    }
    let mut suffix = vec![f64::INFINITY; n];
    for i in (0..n - 1).rev() {
        suffix[i] = suffix[i + 1].min(s[i + 1].v);
    }
    let top = s[0].r;
    let decades = (top / s[n - 1].r).log10().floor() as usize;
    if decades < 1 {
        return false;
    }
    let mut hit = vec![false; decades];
    for i in 0..n - 1 {
        let margin = 1e-9 * suffix[i].abs().max(f64::MIN_POSITIVE);
        if s[i].v < suffix[i] - margin {
            let k = (top / s[i].r).log10().floor() as usize;
            if k < decades {
                hit[k] = true;
            }
        }
    }
    // the deepest decade has too few later samples to be meaningful
    hit[..decades.saturating_sub(1).max(1)].iter().all(|&h| h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Potential;
    use crate::profile::RadialProfile;
    use crate::shooting::{Sample, KellerCeiling, Termination};

    fn lap() -> CoefficientField {
        CoefficientField::laplacian(3, 1.0)
    }

    #[test]
    fn inverse_square_threshold() {
        let g = ResidualGrid::new(1e-6, 1.0);
        let ok = residual_check(&lap(), Candidate::Closed(&ClosedForm::power(1.0, 2.0)), 2.0, &g).unwrap();
        assert!(ok.pass && ok.pairs >= 10_000 && ok.violation_fraction == 0.0);
        // residual r^{-4} against the largest term 6 r^{-4}
        assert!((ok.min_relative - 1.0 / 6.0).abs() < 1e-9, "{}", ok.min_relative);
        let bad = residual_check(&lap(), Candidate::Closed(&ClosedForm::power(3.0, 2.0)), 2.0, &g).unwrap();
        assert!(!bad.pass && bad.violation_fraction == 1.0);
    }

    #[test]
    fn log_power_derivatives() {
        let c = ClosedForm::log_power(0.7, 4.0, 0.5);
        for &r in &[0.3, 0.05, 1e-4] {
            let h = r * 1e-4;
            let d = ((c.v)(r + h) - (c.v)(r - h)) / (2.0 * h);
            let dd = ((c.dv)(r + h) - (c.dv)(r - h)) / (2.0 * h);
            assert!((d / (c.dv)(r) - 1.0).abs() < 1e-7);
            assert!((dd / (c.d2v)(r) - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn radial_reduction_matches_full_operator() {
        let gamma = RadialProfile::parse(1.0, "0.5 + sin(3*r)").unwrap();
        let beta = RadialProfile::parse(1.0, "r - 0.3").unwrap();
        let f = CoefficientField::gilbarg_serrin(4, 1.0, gamma, beta, Potential::unit(1.0));
        let c = ClosedForm::power(1.0, 1.5);
        let dirs = DirectionSet::new(4, 24, 7);
        for (k, d) in dirs.iter().enumerate() {
            let r = 0.9 * 0.7f64.powi(k as i32 % 8) + 0.01;
            let x: Vec<f64> = d.iter().map(|v| v * r).collect();
            let q = f.ratios_at(r, d).unwrap();
            let radial = q.normal_coefficient * ((c.d2v)(r) + (q.psi - 1.0) / r * (c.dv)(r));
            let u = |y: &[f64]| y.iter().map(|v| v * v).sum::<f64>().powf(-0.75);
            let fd = apply_operator_fd(&f, u, &x, r * 2e-4);
            assert!((fd / radial - 1.0).abs() < 1e-6, "{fd} {radial}");
        }
    }

    #[test]
    fn homogeneity_for_power_potential() {
        let f = lap().with_potential(Potential::power_law(1.0, 0.5));
        let g = ResidualGrid::new(1e-4, 1.0);
        // ℒ(m r^{-3/2}) = (3/4) m r^{-7/2} against m² r^{-7/2}
        let base = ClosedForm::power(0.5, 1.5);
        let r0 = residual_check(&f, Candidate::Closed(&base), 2.0, &g).unwrap();
        assert!(r0.min_residual >= 0.0);
        for s in [1.0, 0.5, 0.1, 1e-3] {
            let c = ClosedForm::power(0.5 * s, 1.5);
            let r = residual_check(&f, Candidate::Closed(&c), 2.0, &g).unwrap();
            assert!(r.pass, "s = {s}");
        }
    }

    fn traj(vals: impl Fn(f64) -> f64) -> Trajectory {
        let samples = (0..=300)
            .map(|i| {
                let r = 10f64.powf(-(i as f64) / 50.0);
                Sample { r, v: vals(r), dv_dr: 0.0 }
            })
            .collect();
        Trajectory {
            samples,
            termination: Termination::ReachedRmin,
            turning_radius: None,
            keller_constant: 1.0,
            ceiling: KellerCeiling { exponent: -2.0, safety: 10.0 },
        }
    }

    #[test]
    fn monotone_envelope_cases() {
        assert!(monotone_envelope_check(&traj(|r| 1.0 / r)));
        assert!(!monotone_envelope_check(&traj(|_| 2.0)));
        assert!(!monotone_envelope_check(&traj(|r| 2.0 + (2.0 * std::f64::consts::PI * r.log10()).sin())));
    }
}
