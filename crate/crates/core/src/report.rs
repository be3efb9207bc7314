//! Deterministic JSON reports. Objects are key-sorted; non-finite numbers
//! are written as the strings `"inf"`, `"-inf"`, `"nan"`.

use serde_json::{json, Map, Value};

use crate::criteria::{CriterionVerdict, CriticalCase, ExponentBounds, VerdictKind};
use crate::envelopes::EnvelopePair;
use crate::growth::{DimensionEstimate, GrowthSummary};
use crate::shooting::{BarrierOutcome, Outcome, ShootingResult, Termination, Trajectory};
use crate::verify::ResidualReport;

pub const FORMAT_VERSION: u64 = 1;

pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

pub fn opt_num(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

/// Radii `R·10^{-k}` used for profile tables.
pub fn table_radii(radius: f64, decades: usize) -> Vec<f64> {
    (0..=decades).map(|k| radius * 10f64.powi(-(k as i32))).collect()
}

pub fn psi_json(psi: &EnvelopePair, radii: &[f64]) -> Value {
    let rows: Vec<Value> = radii
        .iter()
        .map(|&r| json!({ "r": num(r), "env_upper": num(psi.upper.eval(r)), "env_lower": num(psi.lower.eval(r)) }))
        .collect();
    json!({
        "source": format!("{:?}", psi.source).to_lowercase(),
        "discontinuous_input": psi.discontinuous_input,
        "table": rows,
    })
}

pub fn dims_json(d: &DimensionEstimate) -> Value {
    json!({
        "upper": num(d.upper),
        "lower": num(d.lower),
        "upper_central": num(d.upper_central),
        "lower_central": num(d.lower_central),
        "uncertainty": num(d.uncertainty),
    })
}

pub fn growth_json(g: &GrowthSummary, radii: &[f64]) -> Value {
    let rows: Vec<Value> = radii
        .iter()
        .filter(|&&r| (g.radius / r).ln() <= g.u_max)
        .map(|&r| json!({ "r": num(r), "ln_M": num(g.ln_big_m.at_r(r)), "ln_m": num(g.ln_small_m.at_r(r)) }))
        .collect();
    json!({
        "radius": num(g.radius),
        "u_max": num(g.u_max),
        "dims": dims_json(&g.dims),
        "psi_upper_limit": num(g.psi_upper_simple),
        "psi_lower_limit": num(g.psi_lower_simple),
        "table": rows,
    })
}

pub fn bounds_json(b: &ExponentBounds) -> Value {
    json!({
        "p_lower": num(b.p_lower),
        "p_upper": num(b.p_upper),
        "p_star_exact": opt_num(b.p_star_exact),
        "p_lower_critical": num(b.p_lower_crit),
        "p_estimate": num(b.p_estimate),
        "sigma": num(b.sigma),
        "sigma_class": format!("{:?}", b.sigma_class).to_lowercase(),
        "tail_condition": format!("{:?}", b.tail).to_lowercase(),
        "dims": dims_json(&b.dims),
    })
}

pub fn verdict_json(v: &CriterionVerdict) -> Value {
    let mut m = Map::new();
    m.insert("verdict".into(), json!(v.label()));
    m.insert("integrand".into(), json!(v.integrand_id));
    m.insert("rate".into(), num(v.rate));
    m.insert("power".into(), num(v.power));
    m.insert("horizon".into(), num(v.horizon));
    match &v.kind {
        VerdictKind::Converges { value, ln_value, abs_err } => {
            m.insert("value".into(), num(*value));
            m.insert("ln_value".into(), num(*ln_value));
            m.insert("abs_err".into(), num(*abs_err));
        }
        VerdictKind::Diverges { rate, partial_at } => {
            m.insert("growth".into(), json!(rate));
            let pts: Vec<Value> = partial_at.iter().map(|(u, l)| json!([num(*u), num(*l)])).collect();
            m.insert("ln_partial".into(), Value::Array(pts));
        }
        VerdictKind::Inconclusive { reason } => {
            m.insert("reason".into(), json!(reason));
        }
    }
    Value::Object(m)
}

pub fn critical_json(c: &CriticalCase) -> Value {
    json!({
        "verdict": format!("{:?}", c.verdict),
        "p_critical": num(c.p_critical),
        "reason": c.reason,
        "lower_witness": c.lower_witness.as_ref().map_or(Value::Null, verdict_json),
        "upper_witness": c.upper_witness.as_ref().map_or(Value::Null, verdict_json),
        "epsilon_sweep": c.epsilon_sweep.iter().map(|(e, v)| json!({ "epsilon": num(*e), "result": verdict_json(v) })).collect::<Vec<_>>(),
    })
}

pub fn termination_json(t: &Termination) -> Value {
    match t {
        Termination::ReachedRmin => json!({ "kind": t.label() }),
        Termination::BlowUp { r_prime } => json!({ "kind": t.label(), "r_prime": num(*r_prime) }),
        Termination::TurnedNegative { r } => json!({ "kind": t.label(), "r": num(*r) }),
    }
}

pub fn trajectory_summary(t: &Trajectory) -> Value {
    let last = t.samples.last();
    json!({
        "samples": t.samples.len(),
        "termination": termination_json(&t.termination),
        "r_last": opt_num(last.map(|s| s.r)),
        "v_last": opt_num(last.map(|s| s.v)),
        "keller_exponent": num(t.ceiling.exponent),
        "keller_constant": num(t.keller_constant),
        "keller_safety": num(t.ceiling.safety),
        "keller_ratio_max": num(t.keller_ratio()),
        "harnack_ratio_max": opt_num(t.harnack_ratio()),
        "turning_radius": opt_num(t.turning_radius),
    })
}

pub fn outcome_json(o: &Outcome) -> Value {
    match o {
        Outcome::ExtendsSingular { a, b } => json!({ "kind": o.label(), "a": num(*a), "b": num(*b) }),
        Outcome::ExtendsBounded { v0 } => json!({ "kind": o.label(), "v0": num(*v0) }),
        Outcome::Undetermined { reason } => json!({ "kind": o.label(), "reason": reason }),
    }
}

pub fn shooting_json(s: &ShootingResult) -> Value {
    json!({
        "lambda0": opt_num(s.lambda0),
        "bracket": s.bracket.map_or(Value::Null, |(a, b)| json!([num(a), num(b)])),
        "bracket_width": opt_num(s.bracket_width()),
        "rerun_lambda": opt_num(s.rerun_lambda),
        "r_min": num(s.r_min),
        "outcome": outcome_json(&s.outcome),
        "evidence": s.evidence.iter().map(|(l, t)| json!({ "lambda": num(*l), "termination": termination_json(t) })).collect::<Vec<_>>(),
        "trajectory": s.trajectory.as_ref().map_or(Value::Null, trajectory_summary),
        "keller_note": "ceiling constant calibrated per run from the first decade of r",
    })
}

pub fn barrier_json(b: &BarrierOutcome) -> Value {
    match b {
        BarrierOutcome::BarrierFound { lambda, r_turn, r_blowup } => json!({
            "kind": "barrier_found", "lambda": num(*lambda), "r_turn": num(*r_turn), "r_blowup": num(*r_blowup)
        }),
        BarrierOutcome::NotFound { tried } => json!({ "kind": "not_found", "tried": tried }),
    }
}

pub fn residual_json(r: &ResidualReport) -> Value {
    let radii = r.grid.len();
    json!({
        "pass": r.pass,
        "min_residual": num(r.min_residual),
        "min_relative": num(r.min_relative),
        "violation_fraction": num(r.violation_fraction),
        "pairs": r.pairs,
        "radii": radii,
        "r_range": if radii > 0 { json!([num(r.grid[radii - 1].0), num(r.grid[0].0)]) } else { Value::Null },
    })
}

/// Top-level document: `format_version`, `command`, `input` echo and sections.
pub fn document(command: &str, input: Value, sections: Map<String, Value>) -> Value {
    let mut m = Map::new();
    m.insert("format_version".into(), json!(FORMAT_VERSION));
    m.insert("command".into(), json!(command));
    m.insert("input".into(), input);
    m.insert("sections".into(), Value::Object(sections));
    Value::Object(m)
}

pub fn render(doc: &Value) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("report values are always serializable");
    s.push('\n');
    s
}
