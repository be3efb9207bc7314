//! Named scenarios with machine-checkable expectations.

use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::config::{parse_toml, ConfigError, FieldConfig};
use crate::criteria::{
    analyze_field, critical_case_classify, exist_criterion, nonexist_criterion, CriticalVerdict, FieldAnalysis,
};
use crate::envelopes::SamplingOptions;
use crate::growth::GrowthOptions;
use crate::report::{self, num};
use crate::shooting::{barrier_construct, find_lambda0, BarrierOptions, BarrierOutcome, Outcome, ShootingOptions};

macro_rules! catalog_files {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../catalog/", $name, ".toml")))),*]
    };
}

const FILES: &[(&str, &str)] = catalog_files!(
    "claplace3", "claplace4", "claplace5", "claplace6",
    "pert_m2", "pert_m1", "pert_0", "pert_1", "pert_3",
    "exa1", "ser1", "exs1b_ii",
    "exs2_m05", "exs2_m1", "exs2_m15",
    "exs3_k05", "exs3_k1", "exs3_k2",
    "peb",
    "unstable_25", "unstable_3", "unstable_4",
);

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Claim {
    PStar { value: f64, tol: f64, anchor: String },
    PUpperInfinite { anchor: String },
    PEstimate { value: f64, tol: f64, anchor: String },
    Dims { value: f64, tol: f64, anchor: String },
    /// `expect = true`: the existence criterion converges at `p`;
    /// `false`: the non-existence criterion diverges.
    SingularAt { p: f64, expect: bool, anchor: String },
    /// `expect` is `singular` or `no_singular`.
    Critical { a: f64, expect: String, anchor: String },
    /// `r^α M(r)` and `r^α m(r)` stay within `[e^{-amplitude}, e^{amplitude}]`.
    GrowthBand { alpha: f64, amplitude: f64, anchor: String },
    /// `expect` is `extends_singular` or `no_singular_extension`.
    Shooting { p: f64, m_end: f64, expect: String, anchor: String },
    /// `expect` is `found` or `not_found`.
    Barrier { p: f64, m_end: f64, expect: String, anchor: String },
}

impl Claim {
    pub fn kind(&self) -> &'static str {
        match self {
            Claim::PStar { .. } => "p_star",
            Claim::PUpperInfinite { .. } => "p_upper_infinite",
            Claim::PEstimate { .. } => "p_estimate",
            Claim::Dims { .. } => "dims",
            Claim::SingularAt { .. } => "singular_at",
            Claim::Critical { .. } => "critical",
            Claim::GrowthBand { .. } => "growth_band",
            Claim::Shooting { .. } => "shooting",
            Claim::Barrier { .. } => "barrier",
        }
    }

    pub fn anchor(&self) -> &str {
        match self {
            Claim::PStar { anchor, .. }
            | Claim::PUpperInfinite { anchor }
            | Claim::PEstimate { anchor, .. }
            | Claim::Dims { anchor, .. }
            | Claim::SingularAt { anchor, .. }
            | Claim::Critical { anchor, .. }
            | Claim::GrowthBand { anchor, .. }
            | Claim::Shooting { anchor, .. }
            | Claim::Barrier { anchor, .. } => anchor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub title: String,
    pub anchor: String,
    pub field: FieldConfig,
    pub claims: Vec<Claim>,
}

impl Scenario {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let s: Scenario = parse_toml(text, path)?;
        s.field.build(path)?;
        if s.claims.is_empty() {
            return Err(ConfigError::Invalid { path: path.to_string(), message: "scenario has no claims".into() });
        }
        Ok(s)
    }
}

/// The embedded catalog, in a fixed order.
pub fn catalog() -> Result<Vec<Scenario>, ConfigError> {
    FILES.iter().map(|(name, text)| Scenario::parse(text, &format!("catalog/{name}.toml"))).collect()
}

pub fn scenario(name: &str) -> Option<Result<Scenario, ConfigError>> {
    FILES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| Scenario::parse(text, &format!("catalog/{n}.toml")))
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub sampling: SamplingOptions,
    pub growth: GrowthOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { sampling: SamplingOptions::default(), growth: GrowthOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct ClaimCheck {
    pub kind: &'static str,
    pub anchor: String,
    pub expected: Value,
    pub computed: Value,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub name: String,
    pub title: String,
    pub anchor: String,
    pub checks: Vec<ClaimCheck>,
    pub summary: Value,
    /// Set when the field analysis itself failed; every check then fails.
    pub error: Option<String>,
}

impl ScenarioReport {
    pub fn pass(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.pass)
    }

    pub fn mismatches(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count() + usize::from(self.error.is_some() && self.checks.is_empty())
    }

    pub fn to_json(&self) -> Value {
        let checks: Vec<Value> = self
            .checks
            .iter()
            .map(|c| {
                json!({
                    "kind": c.kind,
                    "anchor": c.anchor,
                    "expected": c.expected,
                    "computed": c.computed,
                    "pass": c.pass,
                })
            })
            .collect();
        json!({
            "name": self.name,
            "title": self.title,
            "anchor": self.anchor,
            "pass": self.pass(),
            "error": self.error,
            "checks": checks,
            "summary": self.summary,
        })
    }
}

fn within(x: f64, value: f64, tol: f64) -> bool {
    (x - value).abs() <= tol
}

fn check_claim(claim: &Claim, a: &FieldAnalysis, radius: f64) -> (Value, Value, bool) {
    let b = &a.bounds;
    let d = &a.growth.dims;
    match claim {
        Claim::PStar { value, tol, .. } => {
            let ok = within(b.p_estimate, *value, *tol) && b.p_lower <= value + tol && b.p_upper >= value - tol;
            (
                json!({ "p_star": num(*value), "tol": num(*tol) }),
                json!({ "p_lower": num(b.p_lower), "p_upper": num(b.p_upper), "p_estimate": num(b.p_estimate), "p_star_exact": report::opt_num(b.p_star_exact) }),
                ok,
            )
        }
        Claim::PUpperInfinite { .. } => (json!({ "p_upper": "inf" }), json!({ "p_upper": num(b.p_upper) }), b.p_upper == f64::INFINITY),
        Claim::PEstimate { value, tol, .. } => (
            json!({ "p_estimate": num(*value), "tol": num(*tol) }),
            json!({ "p_estimate": num(b.p_estimate) }),
            within(b.p_estimate, *value, *tol),
        ),
        Claim::Dims { value, tol, .. } => (
            json!({ "dims": num(*value), "tol": num(*tol) }),
            report::dims_json(d),
            [d.upper, d.lower, d.upper_central, d.lower_central].iter().all(|&x| within(x, *value, *tol)),
        ),
        Claim::SingularAt { p, expect, .. } => {
            let v = if *expect {
                exist_criterion(&a.growth, &a.theta.upper, *p)
            } else {
                nonexist_criterion(&a.growth, &a.theta.lower, *p)
            };
            let exp = json!({ "p": num(*p), "criterion": if *expect { "exist converges" } else { "nonexist diverges" } });
            match v {
                Ok(v) => {
                    let ok = if *expect { v.converges() } else { v.diverges() };
                    (exp, report::verdict_json(&v), ok)
                }
                Err(e) => (exp, json!({ "error": e.to_string() }), false),
            }
        }
        Claim::Critical { a: dim, expect, .. } => {
            let sigma = b.sigma;
            match critical_case_classify(&a.growth, &a.psi, *dim, sigma) {
                Ok(c) => {
                    let want = match expect.as_str() {
                        "singular" => Some(CriticalVerdict::Singular),
                        "no_singular" => Some(CriticalVerdict::NoSingular),
                        _ => None,
                    };
                    (json!({ "verdict": expect, "a": num(*dim) }), report::critical_json(&c), want == Some(c.verdict))
                }
                Err(e) => (json!({ "verdict": expect }), json!({ "error": e.to_string() }), false),
            }
        }
        Claim::GrowthBand { alpha, amplitude, .. } => {
            let g = &a.growth;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let n = 4096;
            for k in 0..=n {
                let u = g.u_max * k as f64 / n as f64;
                let ln_r = radius.ln() - u;
                for t in [&g.ln_big_m, &g.ln_small_m] {
                    let x = alpha * ln_r + t.at_u(u);
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
            }
            let ok = lo >= -amplitude - 1e-9 && hi <= amplitude + 1e-9;
            (
                json!({ "ln_band": [num(-amplitude), num(*amplitude)] }),
                json!({ "ln_min": num(lo), "ln_max": num(hi) }),
                ok,
            )
        }
        Claim::Shooting { p, m_end, expect, .. } => {
            let phi = a.psi.upper.shifted(-1.0);
            let opts = ShootingOptions::new(radius);
            let exp = json!({ "p": num(*p), "M": num(*m_end), "outcome": expect });
            match find_lambda0(phi, a.theta.upper.clone(), *p, radius, *m_end, -1.0, 0.0, &opts) {
                Ok(res) => {
                    let ok = match expect.as_str() {
                        "extends_singular" => matches!(res.outcome, Outcome::ExtendsSingular { a, .. } if (-2.0..0.0).contains(&a)),
                        "no_singular_extension" => !matches!(res.outcome, Outcome::ExtendsSingular { .. }),
                        _ => false,
                    };
                    (exp, report::shooting_json(&res), ok)
                }
                Err(e) => (exp, json!({ "error": e.to_string() }), false),
            }
        }
        Claim::Barrier { p, m_end, expect, .. } => {
            let exp = json!({ "p": num(*p), "M": num(*m_end), "outcome": expect });
            let res = barrier_construct(
                a.psi.upper.shifted(-1.0),
                a.psi.lower.shifted(-1.0),
                a.theta.lower.clone(),
                *p,
                radius,
                *m_end,
                &BarrierOptions::new(radius),
            );
            match res {
                Ok(o) => {
                    let found = matches!(o, BarrierOutcome::BarrierFound { .. });
                    let ok = (expect == "found") == found && (expect == "found" || expect == "not_found");
                    (exp, report::barrier_json(&o), ok)
                }
                Err(e) => (exp, json!({ "error": e.to_string() }), false),
            }
        }
    }
}

pub fn run_scenario(s: &Scenario, opts: &RunOptions) -> ScenarioReport {
    let path = format!("catalog/{}.toml", s.name);
    let mut out = ScenarioReport {
        name: s.name.clone(),
        title: s.title.clone(),
        anchor: s.anchor.clone(),
        checks: Vec::new(),
        summary: Value::Null,
        error: None,
    };
    let field = match s.field.build(&path) {
        Ok(f) => f,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let analysis = match analyze_field(&field, &opts.sampling, &opts.growth) {
        Ok(a) => a,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let mut summary = Map::new();
    summary.insert("exponent_bounds".into(), report::bounds_json(&analysis.bounds));
    summary.insert("psi".into(), report::psi_json(&analysis.psi, &report::table_radii(field.radius, 12)));
    out.summary = Value::Object(summary);
    for c in &s.claims {
        let (expected, computed, pass) = check_claim(c, &analysis, field.radius);
        out.checks.push(ClaimCheck { kind: c.kind(), anchor: c.anchor().to_string(), expected, computed, pass });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_parses() {
        let all = catalog().unwrap();
        assert_eq!(all.len(), FILES.len());
        for (s, (name, _)) in all.iter().zip(FILES) {
            assert_eq!(&s.name, name);
        }
    }

    #[test]
    fn unknown_claim_field_rejected() {
        let text = "name = \"x\"\ntitle = \"t\"\nanchor = \"a\"\n[field]\nN = 3\nR = 1.0\nfamily = \"gilbarg_serrin\"\n[[claims]]\nkind = \"p_star\"\nvalue = 3.0\ntol = 1e-6\nanchor = \"a\"\nextra = 1\n";
        assert!(Scenario::parse(text, "x.toml").is_err());
    }
}
