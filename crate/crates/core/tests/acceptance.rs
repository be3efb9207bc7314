//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line.

use std::f64::consts::E;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use critex::config::FieldConfig;
use critex::criteria::{
    analyze_field, classify_improper, critical_case_classify, exponent_bounds, mutual_exclusion_check, CriticalVerdict,
};
use critex::envelopes::{avg_s_at, SamplingOptions};
use critex::fields::{CoefficientField, Potential};
use critex::growth::GrowthOptions;
use critex::profile::RadialProfile;
use critex::quad::integrate;
use critex::shooting::{
    barrier_construct, find_lambda0, solve_fvp, BarrierOptions, BarrierOutcome, FVPSpec, Outcome, ShootingOptions,
    SolveOptions, Termination,
};
use critex::verify::{residual_check, Candidate, ResidualGrid};

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict { ok, detail: detail.into() }
}

fn field(toml: &str) -> CoefficientField {
    FieldConfig::parse(toml, "inline.toml").and_then(|c| c.build("inline.toml")).expect("valid field config")
}

fn gs(n: usize, radius: f64, gamma: &str, beta: &str) -> CoefficientField {
    field(&format!("N = {n}\nR = {radius:?}\nfamily = \"gilbarg_serrin\"\ngamma = \"{gamma}\"\nbeta = \"{beta}\"\nsigma = 0.0\n"))
}

fn unit_dir(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 && norm <= 1.0 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

fn closed_form_psi() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=7usize);
        let (g0, g1) = (rng.gen_range(-0.8..4.0), rng.gen_range(-0.1..0.1));
        let (b0, b1) = (rng.gen_range(-2.0..4.0), rng.gen_range(-1.0..1.0));
        let f = CoefficientField::gilbarg_serrin(
            n,
            1.0,
            RadialProfile::parse(1.0, &format!("{g0:?} + {g1:?}*r")).unwrap(),
            RadialProfile::parse(1.0, &format!("{b0:?} + {b1:?}*r^2")).unwrap(),
            Potential::unit(1.0),
        );
        let r: f64 = 10f64.powf(rng.gen_range(-12.0..0.0));
        let dir = unit_dir(&mut rng, n);
        let psi = f.ratios_at(r, &dir).unwrap().psi;
        let (gamma, beta) = (g0 + g1 * r, b0 + b1 * r * r);
        let want = 1.0 + (n as f64 - 1.0 + beta) / (1.0 + gamma);
        worst = worst.max((psi - want).abs() / want.abs().max(1.0));
    }
    verdict(worst <= 1e-12, format!("max scaled error {worst:.2e} over 1000 points"))
}

fn laplacian_exponents() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in 3..=6usize {
        let b = exponent_bounds(&CoefficientField::laplacian(n, 1.0).with_potential(Potential::power_law(1.0, 0.0))).unwrap();
        let want = n as f64 / (n as f64 - 2.0);
        ok &= (b.p_lower - want).abs() <= 1e-6 && (b.p_upper - want).abs() <= 1e-6 && (b.p_estimate - want).abs() <= 1e-6;
        parts.push(format!("N={n}: [{:.9}, {:.9}]", b.p_lower, b.p_upper));
    }
    verdict(ok, parts.join("; "))
}

fn drift_family() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for b0 in [-2.0f64, -1.0, 0.0, 1.0, 3.0] {
        let b = exponent_bounds(&gs(3, 1.0, "0", &format!("{b0:?}"))).unwrap();
        if b0 > -1.0 {
            let want = (3.0 + b0) / (1.0 + b0);
            ok &= (b.p_estimate - want).abs() <= 1e-6 && (b.p_upper - want).abs() <= 1e-6;
            parts.push(format!("beta={b0}: p*={:.9}", b.p_estimate));
        } else {
            ok &= b.p_upper == f64::INFINITY;
            parts.push(format!("beta={b0}: p_upper={}", b.p_upper));
        }
    }
    verdict(ok, parts.join("; "))
}

fn criterion_grid() -> Verdict {
    let mut bad = 0;
    let mut total = 0;
    for a in [2.5f64, 3.0, 4.0, 6.0] {
        for sigma in [0.0f64, 0.5, 1.0, 1.9] {
            let pc = 1.0 + (2.0 - sigma) / (a - 2.0);
            for dp in [-0.2, -0.05, 0.0, 0.05, 0.2] {
                let p = pc + dp;
                // m^{p-1} θ r^{2p-1} with m = r^{-A}, θ = r^{-σ}
                let e = 2.0 * p - 1.0 - a * (p - 1.0) - sigma;
                let v = classify_improper(&RadialProfile::power(1.0, 1.0, -e), 1.0).unwrap();
                let converges = (p - 1.0) * (a - 2.0) < 2.0 - sigma - 1e-12;
                total += 1;
                if converges != v.converges() || converges == v.diverges() {
                    bad += 1;
                }
            }
        }
    }
    verdict(bad == 0, format!("{bad} misclassified of {total}"))
}

fn critical_thresholds() -> Verdict {
    let radius = 1.0 / E;
    let mut cases = Vec::new();
    for (kappa, want) in [(0.5, CriticalVerdict::NoSingular), (1.0, CriticalVerdict::NoSingular), (2.0, CriticalVerdict::Singular)] {
        let gamma = format!("(3-4+{kappa:?}/ln(1/r))/(4-1-{kappa:?}/ln(1/r))");
        cases.push((format!("exs3 kappa={kappa}"), gs(3, radius, &gamma, "0"), 4.0, want));
    }
    for (m, want) in [(0.5, CriticalVerdict::Singular), (1.0, CriticalVerdict::Singular), (1.5, CriticalVerdict::NoSingular)] {
        cases.push((format!("exs2 m={m}"), gs(3, radius, &format!("ln(1/r)^(-{m:?})"), "0"), 3.0, want));
    }
    let results: Vec<(String, bool)> = cases
        .par_iter()
        .map(|(name, f, a, want)| {
            let an = analyze_field(f, &SamplingOptions::default(), &GrowthOptions::default()).unwrap();
            let got = critical_case_classify(&an.growth, &an.psi, *a, 0.0).map(|c| c.verdict);
            (format!("{name}: {got:?}"), got.as_ref().ok() == Some(want))
        })
        .collect();
    let mismatches = results.iter().filter(|r| !r.1).count();
    verdict(mismatches == 0, format!("{mismatches} mismatches; {}", results.iter().map(|r| r.0.as_str()).collect::<Vec<_>>().join(", ")))
}

fn unstable_construction() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for alpha in [2.5f64, 3.0, 4.0] {
        // φ = Ψ − 1 = α − 1 + ½ sin(2π ln(1/r)) for N = 3, β = 0
        let f = gs(3, 1.0, &format!("-1 + 2/({:?} + 0.5*sin(2*pi*ln(1/r)))", alpha - 1.0), "0");
        let an = analyze_field(&f, &SamplingOptions::default(), &GrowthOptions::default()).unwrap();
        let d = an.growth.dims;
        let dims_ok = [d.upper, d.lower, d.upper_central, d.lower_central].iter().all(|x| (x - alpha).abs() <= 1e-3);
        let g = &an.growth;
        let mut band = 0.0f64;
        let n = 8192;
        for k in 0..=n {
            let u = g.u_max * k as f64 / n as f64;
            band = band.max((g.ln_big_m.at_u(u) - alpha * u).abs());
        }
        let p_ok = (an.bounds.p_estimate - (1.0 + 2.0 / (alpha - 2.0))).abs() <= 1e-3;
        ok &= dims_ok && band <= 0.5 + 1e-9 && p_ok;
        parts.push(format!("alpha={alpha}: dims {:.5}/{:.5}, |ln r^a M| <= {band:.4}, p {:.5}", d.upper, d.lower, an.bounds.p_estimate));
    }
    verdict(ok, parts.join("; "))
}

fn shooting_existence() -> Verdict {
    let phi = RadialProfile::constant(1.0, 2.0);
    let theta = RadialProfile::constant(1.0, 1.0);
    let opts = ShootingOptions::new(1.0);
    let res = match find_lambda0(phi, theta, 2.0, 1.0, 1.0, -1.0, 0.0, &opts) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("shooting error: {e}")),
    };
    let width = res.bracket_width().unwrap_or(f64::INFINITY);
    let a = match res.outcome {
        Outcome::ExtendsSingular { a, .. } => a,
        _ => f64::NAN,
    };
    let keller = res.trajectory.as_ref().map_or(f64::INFINITY, |t| t.keller_ratio());
    let safety = res.trajectory.as_ref().map_or(0.0, |t| t.ceiling.safety);
    let Some(lam) = res.rerun_lambda else {
        return verdict(false, "no re-run slope");
    };
    let mut so = SolveOptions::default();
    so.samples_per_decade = 1000;
    so.ode.rtol = 1e-12;
    so.ode.atol = 1e-14;
    let t = solve_fvp(&FVPSpec::laplacian(3, 1.0, 2.0, 1.0, 1.0, lam), res.r_min, &so).unwrap();
    let rep = residual_check(&CoefficientField::laplacian(3, 1.0), Candidate::Numeric(&t), 2.0, &ResidualGrid::new(res.r_min, 1.0));
    let (resid_ok, rel) = match &rep {
        Ok(r) => (r.pass, r.min_relative),
        Err(_) => (false, f64::NAN),
    };
    let ok = width <= 1e-8 && (-2.0..0.0).contains(&a) && keller <= safety && resid_ok;
    verdict(
        ok,
        format!(
            "lambda0 {:.6}, bracket {width:.2e}, a {a:.4}, keller ratio {keller:.4} (<= {safety}), residual min rel {rel:.2e}",
            res.lambda0.unwrap_or(f64::NAN)
        ),
    )
}

fn shooting_nonexistence() -> Verdict {
    let two = RadialProfile::constant(1.0, 2.0);
    let one = RadialProfile::constant(1.0, 1.0);
    let b = barrier_construct(two.clone(), two.clone(), one.clone(), 4.0, 1.0, 1.0, &BarrierOptions::new(1.0)).unwrap();
    let found = matches!(b, BarrierOutcome::BarrierFound { .. });
    let res = find_lambda0(two, one, 4.0, 1.0, 1.0, -1.0, 0.0, &ShootingOptions::new(1.0)).unwrap();
    let singular = matches!(res.outcome, Outcome::ExtendsSingular { .. });
    let all_blow = res.evidence.iter().all(|(_, t)| matches!(t, Termination::BlowUp { .. }));
    verdict(
        found && !singular && all_blow,
        format!("barrier {b:?}; sweep of {} slopes all blow up: {all_blow}; outcome {}", res.evidence.len(), res.outcome.label()),
    )
}

fn mutual_exclusion() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let cases: Vec<(usize, f64, f64, f64, f64)> = (0..200)
        .map(|_| {
            (
                rng.gen_range(3..=6usize),
                rng.gen_range(-0.5..2.0),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.9..2.0),
                rng.gen_range(1.05..6.0),
            )
        })
        .collect();
    let conflicts: usize = cases
        .par_iter()
        .map(|&(n, g0, g1, b0, p)| {
            let f = gs(n, 1.0, &format!("{g0:?} + {g1:?}*r"), &format!("{b0:?}"));
            let an = analyze_field(&f, &SamplingOptions::default(), &GrowthOptions::default()).unwrap();
            let d = mutual_exclusion_check(&an.growth, &an.theta, p).unwrap();
            usize::from(d.conflict || (d.exist.converges() && d.nonexist.diverges()))
        })
        .sum();
    verdict(conflicts == 0, format!("{conflicts} conflicts in 200 field/p samples"))
}

fn averaging_remainder() -> Verdict {
    let radius = 1.0 / E;
    let f = RadialProfile::parse(radius, "2 + sin(ln(ln(1/r)))").unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for s in [-1.0f64, 1.0] {
        let avg = |r: f64| avg_s_at(&f, s, r).unwrap();
        // ∫_r^R (f − Avg_s f) dρ/ρ, accumulated over dyadic shells
        let diff = |w: f64| {
            let rho = radius * (-w).exp();
            f.eval(rho) - avg(rho)
        };
        let boundary = if s > 0.0 { avg(radius) / s } else { 0.0 };
        let mut rem = 0.0;
        let mut observed = 0.0f64;
        let mut sup_avg = 0.0f64;
        for k in 1..=30 {
            let (w0, w1) = ((k - 1) as f64 * 2f64.ln(), k as f64 * 2f64.ln());
            rem += integrate(&diff, w0, w1, 1e-11, 1e-10).unwrap().value;
            let r = radius * 2f64.powi(-k);
            observed = observed.max((rem - boundary).abs());
            sup_avg = sup_avg.max(avg(r).abs());
        }
        let bound = sup_avg / s.abs();
        ok &= (observed / bound - 1.0).abs() <= 0.1;
        parts.push(format!("s={s}: sup|remainder| {observed:.6}, sup|Avg|/|s| {bound:.6}"));
    }
    verdict(ok, parts.join("; "))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for i in 0..2 {
        let path = dir.path().join(format!("run{i}.json"));
        let status = Command::new(env!("CARGO_BIN_EXE_critex"))
            .args(["reproduce", "--all", "--out"])
            .arg(&path)
            .env_remove("CRITEX_SEED")
            .status()
            .unwrap();
        if !status.success() {
            return verdict(false, format!("reproduce exited with {status}"));
        }
        outs.push(std::fs::read(&path).unwrap());
    }
    verdict(!outs[0].is_empty() && outs[0] == outs[1], format!("two runs of {} bytes, identical: {}", outs[0].len(), outs[0] == outs[1]))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict, Duration); 11] = [
        ("closed-form Psi", closed_form_psi, Duration::from_secs(1)),
        ("Laplacian exponents", laplacian_exponents, Duration::from_secs(10)),
        ("drift family", drift_family, Duration::from_secs(60)),
        ("criterion ground truth", criterion_grid, Duration::from_secs(30)),
        ("critical-case thresholds", critical_thresholds, Duration::from_secs(120)),
        ("unstable construction", unstable_construction, Duration::from_secs(120)),
        ("shooting, existence side", shooting_existence, Duration::from_secs(60)),
        ("shooting, non-existence side", shooting_nonexistence, Duration::from_secs(60)),
        ("mutual exclusion fuzz", mutual_exclusion, Duration::from_secs(300)),
        ("averaging remainder", averaging_remainder, Duration::from_secs(120)),
        ("determinism", determinism, Duration::from_secs(300)),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let v = run();
        let elapsed = t0.elapsed();
        let ok = v.ok && elapsed <= *limit;
        if !ok {
            failed += 1;
        }
        println!(
            "acceptance {:>2} {name}: {} ({}; {:.2}s, limit {}s)",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
