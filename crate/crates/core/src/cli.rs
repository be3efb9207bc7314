//! Command-line front end; `critex <command> --config <file> [flags]`.

use std::io::Write;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::catalog::{catalog, run_scenario, scenario, RunOptions, ScenarioReport};
use crate::config::FieldConfig;
use crate::criteria::{analyze_field, coro1_criterion, critical_case_classify, mutual_exclusion_check, FieldAnalysis};
use crate::envelopes::SamplingOptions;
use crate::fields::{CoefficientField, DEFAULT_SEED};
use crate::growth::GrowthOptions;
use crate::report::{self, num};
use crate::shooting::{
    barrier_construct, find_lambda0, solve_fvp, subsolution_power, BarrierOptions, FVPSpec, ShootingOptions, ShootingResult,
};
use crate::verify::{monotone_envelope_check, residual_check, Candidate, ClosedForm, ResidualGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MISMATCH: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Radial envelopes of Ψ and Θ.
    Psi,
    /// Growth functions and upper/lower dimensions.
    Dims,
    /// Bounds on the critical exponent p*.
    Exponent,
    /// Existence / non-existence criteria at a given p.
    Criteria,
    /// Shooting for λ₀ on the existence-side radial equation.
    Shoot,
    /// Search for a blowing-up barrier.
    Barrier,
    /// Residual check of a constructed radial solution.
    Verify,
    /// Run catalog scenarios and diff against expectations.
    Reproduce {
        #[arg(long)]
        all: bool,
        #[arg(long)]
        scenario: Vec<String>,
    },
}

#[derive(Debug, Parser)]
#[command(name = "critex", version, about = "Critical exponents and singular radial solutions of L u >= K u^p")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true)]
    pub config: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub p: Option<f64>,
    /// Overrides `sigma` from the config.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true)]
    pub rmin: Option<f64>,
    #[arg(long = "tol-abs", global = true)]
    pub tol_abs: Option<f64>,
    #[arg(long = "tol-rel", global = true)]
    pub tol_rel: Option<f64>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<String>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,
    /// Final value v(R) for shoot / barrier / verify.
    #[arg(long = "M", global = true)]
    pub m_end: Option<f64>,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Compute(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Compute(e.to_string())
    }
}

fn seed_from_env() -> Result<u64, Failure> {
    match std::env::var("CRITEX_SEED") {
        Err(_) => Ok(DEFAULT_SEED),
        Ok(s) => {
            let t = s.trim();
            let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
                Some(h) => u64::from_str_radix(h, 16),
                None => t.parse::<u64>(),
            };
            parsed.map_err(|_| Failure::Input(format!("CRITEX_SEED must be an unsigned integer, got {s:?}")))
        }
    }
}

struct Context {
    cli: Cli,
    seed: u64,
    sampling: SamplingOptions,
    growth: GrowthOptions,
}

impl Context {
    fn config(&self) -> Result<(FieldConfig, CoefficientField), Failure> {
        let path = self.cli.config.as_deref().ok_or_else(|| Failure::Input("--config <path> is required".into()))?;
        let mut cfg = FieldConfig::load(path).map_err(|e| Failure::Input(e.to_string()))?;
        if let Some(s) = self.cli.sigma {
            cfg.sigma = Some(s);
        }
        let field = cfg.build(path).map_err(|e| Failure::Input(e.to_string()))?;
        Ok((cfg, field))
    }

    fn p(&self) -> Result<f64, Failure> {
        self.cli.p.ok_or_else(|| Failure::Input("--p <real> is required for this command".into()))
    }

    fn m_end(&self) -> Result<f64, Failure> {
        let m = self.cli.m_end.unwrap_or(1.0);
        if !(m >= 0.0 && m.is_finite()) {
            return Err(Failure::Input(format!("--M must be finite and >= 0, got {m}")));
        }
        Ok(m)
    }

    fn shooting(&self, radius: f64) -> Result<ShootingOptions, Failure> {
        let mut o = ShootingOptions::new(radius);
        if let Some(r) = self.cli.rmin {
            if !(r > 0.0 && r < radius) {
                return Err(Failure::Input(format!("--rmin must lie in (0, R), got {r}")));
            }
            o.r_min = r;
        }
        Ok(o)
    }

    fn input_echo(&self, cfg: Option<&FieldConfig>) -> Value {
        json!({
            "config_path": self.cli.config,
            "field": cfg.map_or(Value::Null, |c| serde_json::to_value(c).unwrap_or(Value::Null)),
            "p": report::opt_num(self.cli.p),
            "M": report::opt_num(self.cli.m_end),
            "rmin": report::opt_num(self.cli.rmin),
            "seed": self.seed,
            "tolerances": {
                "quad_abs": num(self.growth.abs_tol),
                "quad_rel": num(self.growth.rel_tol),
                "growth_step": num(self.growth.step),
                "envelope_rel": num(self.sampling.rel_tol),
                "envelope_half_width": num(self.sampling.half_width),
                "initial_directions": self.sampling.initial_directions,
                "max_directions": self.sampling.max_directions,
                "residual_rel": num(1e-8),
                "ode_rtol": num(1e-9),
                "ode_atol": num(1e-12),
            },
        })
    }

    fn analysis(&self, field: &CoefficientField) -> Result<FieldAnalysis, Failure> {
        Ok(analyze_field(field, &self.sampling, &self.growth)?)
    }
}

enum Output {
    Doc(Value, i32),
    Csv(String),
}

fn sections(pairs: Vec<(&str, Value)>) -> Map<String, Value> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn require_json(ctx: &Context, cmd: &str) -> Result<(), Failure> {
    if ctx.cli.format == Format::Csv {
        return Err(Failure::Input(format!("--format csv is not available for `{cmd}`")));
    }
    Ok(())
}

fn cmd_psi(ctx: &Context) -> Result<Output, Failure> {
    let (cfg, field) = ctx.config()?;
    let a = ctx.analysis(&field)?;
    let radii = report::table_radii(field.radius, 12);
    if ctx.cli.format == Format::Csv {
        let mut s = String::from("r,env_psi,env_psi_lower,env_theta,env_theta_lower\n");
        for &r in &radii {
            s.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e}\n",
                r,
                a.psi.upper.eval(r),
                a.psi.lower.eval(r),
                a.theta.upper.eval(r),
                a.theta.lower.eval(r)
            ));
        }
        return Ok(Output::Csv(s));
    }
    let psi = report::psi_json(&a.psi, &radii);
    let theta = report::psi_json(&a.theta, &radii);
    let doc = report::document("psi", ctx.input_echo(Some(&cfg)), sections(vec![("psi", psi), ("theta", theta)]));
    Ok(Output::Doc(doc, EXIT_OK))
}

fn cmd_dims(ctx: &Context) -> Result<Output, Failure> {
    let (cfg, field) = ctx.config()?;
    let a = ctx.analysis(&field)?;
    let radii = report::table_radii(field.radius, 12);
    if ctx.cli.format == Format::Csv {
        let mut s = String::from("r,ln_M,ln_m\n");
        for &r in &radii {
            if (field.radius / r).ln() <= a.growth.u_max {
                s.push_str(&format!("{:e},{:e},{:e}\n", r, a.growth.ln_big_m.at_r(r), a.growth.ln_small_m.at_r(r)));
            }
        }
        return Ok(Output::Csv(s));
    }
    let doc = report::document(
        "dims",
        ctx.input_echo(Some(&cfg)),
        sections(vec![("growth", report::growth_json(&a.growth, &radii)), ("dimensions", report::dims_json(&a.growth.dims))]),
    );
    Ok(Output::Doc(doc, EXIT_OK))
}

fn cmd_exponent(ctx: &Context) -> Result<Output, Failure> {
    require_json(ctx, "exponent")?;
    let (cfg, field) = ctx.config()?;
    let a = ctx.analysis(&field)?;
    let doc = report::document(
        "exponent",
        ctx.input_echo(Some(&cfg)),
        sections(vec![("exponent_bounds", report::bounds_json(&a.bounds)), ("dimensions", report::dims_json(&a.growth.dims))]),
    );
    Ok(Output::Doc(doc, EXIT_OK))
}

fn cmd_criteria(ctx: &Context) -> Result<Output, Failure> {
    require_json(ctx, "criteria")?;
    let (cfg, field) = ctx.config()?;
    let p = ctx.p()?;
    let a = ctx.analysis(&field)?;
    let ex = mutual_exclusion_check(&a.growth, &a.theta, p)?;
    let coro = coro1_criterion(&a.growth, &a.theta.upper, p)?;
    let d = &a.growth.dims;
    let critical = if (d.upper_central - d.lower_central).abs() <= 1e-3 {
        let dim = 0.5 * (d.upper_central + d.lower_central);
        match critical_case_classify(&a.growth, &a.psi, dim, a.bounds.sigma) {
            Ok(c) => report::critical_json(&c),
            Err(e) => json!({ "error": e.to_string() }),
        }
    } else {
        json!({ "skipped": "upper and lower dimensions differ" })
    };
    let doc = report::document(
        "criteria",
        ctx.input_echo(Some(&cfg)),
        sections(vec![
            ("exist", report::verdict_json(&ex.exist)),
            ("nonexist", report::verdict_json(&ex.nonexist)),
            ("coro1", report::verdict_json(&coro)),
            ("conflict", json!(ex.conflict)),
            ("critical_case", critical),
            ("exponent_bounds", report::bounds_json(&a.bounds)),
        ]),
    );
    Ok(Output::Doc(doc, EXIT_OK))
}

fn shoot(ctx: &Context, field: &CoefficientField, a: &FieldAnalysis, p: f64) -> Result<ShootingResult, Failure> {
    let opts = ctx.shooting(field.radius)?;
    Ok(find_lambda0(a.psi.upper.shifted(-1.0), a.theta.upper.clone(), p, field.radius, ctx.m_end()?, -1.0, 0.0, &opts)?)
}

fn cmd_shoot(ctx: &Context) -> Result<Output, Failure> {
    let (cfg, field) = ctx.config()?;
    let p = ctx.p()?;
    let a = ctx.analysis(&field)?;
    let res = shoot(ctx, &field, &a, p)?;
    if ctx.cli.format == Format::Csv {
        let t = res.trajectory.as_ref().ok_or_else(|| Failure::Compute("no extending trajectory to export".into()))?;
        let mut buf = Vec::new();
        t.write_csv(&mut buf)?;
        return Ok(Output::Csv(String::from_utf8(buf)?));
    }
    let doc = report::document("shoot", ctx.input_echo(Some(&cfg)), sections(vec![("shooting", report::shooting_json(&res))]));
    Ok(Output::Doc(doc, EXIT_OK))
}

fn cmd_barrier(ctx: &Context) -> Result<Output, Failure> {
    require_json(ctx, "barrier")?;
    let (cfg, field) = ctx.config()?;
    let p = ctx.p()?;
    let a = ctx.analysis(&field)?;
    let mut opts = BarrierOptions::new(field.radius);
    if let Some(r) = ctx.cli.rmin {
        opts.r_min = ctx.shooting(field.radius).map(|_| r)?;
    }
    let b = barrier_construct(
        a.psi.upper.shifted(-1.0),
        a.psi.lower.shifted(-1.0),
        a.theta.lower.clone(),
        p,
        field.radius,
        ctx.m_end()?,
        &opts,
    )?;
    let doc = report::document("barrier", ctx.input_echo(Some(&cfg)), sections(vec![("barrier", report::barrier_json(&b))]));
    Ok(Output::Doc(doc, EXIT_OK))
}

fn cmd_verify(ctx: &Context) -> Result<Output, Failure> {
    require_json(ctx, "verify")?;
    let (cfg, field) = ctx.config()?;
    let p = ctx.p()?;
    let mut grid = ResidualGrid::new(field.radius * 1e-12, field.radius);
    grid.seed = ctx.seed;
    let mut secs = Vec::new();
    if p < 1.0 {
        let sub = subsolution_power(&field, p, field.sigma(), &ctx.sampling)?;
        let rep = residual_check(&field, Candidate::Closed(&ClosedForm::power(sub.m, sub.alpha)), p, &grid)?;
        secs.push((
            "subsolution",
            json!({ "m": num(sub.m), "m_threshold": num(sub.m_threshold), "alpha": num(sub.alpha), "c": num(sub.c) }),
        ));
        secs.push(("residual", report::residual_json(&rep)));
    } else {
        let a = ctx.analysis(&field)?;
        let res = shoot(ctx, &field, &a, p)?;
        let lam = res
            .rerun_lambda
            .ok_or_else(|| Failure::Compute(format!("shooting found no extending trajectory ({})", res.outcome.label())))?;
        // verification grid: dense samples and tight tolerances for the stencils
        let mut so = ShootingOptions::new(field.radius).solve;
        so.samples_per_decade = 1000;
        so.ode.rtol = 1e-12;
        so.ode.atol = 1e-14;
        let spec = FVPSpec::new(a.psi.upper.shifted(-1.0), a.theta.upper.clone(), p, field.radius, ctx.m_end()?, lam);
        let t = solve_fvp(&spec, res.r_min, &so)?;
        grid.r_lo = res.r_min;
        let rep = residual_check(&field, Candidate::Numeric(&t), p, &grid)?;
        secs.push(("shooting", report::shooting_json(&res)));
        secs.push(("verified_trajectory", report::trajectory_summary(&t)));
        secs.push(("residual", report::residual_json(&rep)));
        secs.push(("monotone_envelope", json!(monotone_envelope_check(&t))));
    }
    let doc = report::document("verify", ctx.input_echo(Some(&cfg)), sections(secs));
    Ok(Output::Doc(doc, EXIT_OK))
}

fn cmd_reproduce(ctx: &Context, all: bool, names: &[String]) -> Result<Output, Failure> {
    require_json(ctx, "reproduce")?;
    let scenarios = if all {
        catalog().map_err(|e| Failure::Input(e.to_string()))?
    } else if !names.is_empty() {
        names
            .iter()
            .map(|n| match scenario(n) {
                Some(Ok(s)) => Ok(s),
                Some(Err(e)) => Err(Failure::Input(e.to_string())),
                None => Err(Failure::Input(format!("unknown scenario `{n}`"))),
            })
            .collect::<Result<Vec<_>, _>>()?
    } else {
        return Err(Failure::Input("reproduce needs --all or --scenario <name>".into()));
    };
    let opts = RunOptions { sampling: ctx.sampling, growth: ctx.growth };
    let reports: Vec<ScenarioReport> = scenarios.par_iter().map(|s| run_scenario(s, &opts)).collect();
    let passed = reports.iter().filter(|r| r.pass()).count();
    let mismatches: usize = reports.iter().map(|r| r.mismatches()).sum();
    let diff: Vec<Value> = reports
        .iter()
        .filter(|r| !r.pass())
        .map(|r| json!({ "name": r.name, "error": r.error, "failed": r.checks.iter().filter(|c| !c.pass).map(|c| c.kind).collect::<Vec<_>>() }))
        .collect();
    let summary = json!({ "scenarios": reports.len(), "passed": passed, "mismatches": mismatches, "diff": diff });
    let doc = report::document(
        "reproduce",
        ctx.input_echo(None),
        sections(vec![("summary", summary), ("scenarios", Value::Array(reports.iter().map(|r| r.to_json()).collect()))]),
    );
    let code = if mismatches == 0 { EXIT_OK } else { EXIT_MISMATCH };
    Ok(Output::Doc(doc, code))
}

fn dispatch(ctx: &Context) -> Result<Output, Failure> {
    match &ctx.cli.command {
        Command::Psi => cmd_psi(ctx),
        Command::Dims => cmd_dims(ctx),
        Command::Exponent => cmd_exponent(ctx),
        Command::Criteria => cmd_criteria(ctx),
        Command::Shoot => cmd_shoot(ctx),
        Command::Barrier => cmd_barrier(ctx),
        Command::Verify => cmd_verify(ctx),
        Command::Reproduce { all, scenario } => cmd_reproduce(ctx, *all, scenario),
    }
}

fn emit(ctx: &Context, text: &str) -> Result<(), Failure> {
    match &ctx.cli.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Input(format!("{path}: {e}"))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Parses `args` (including the program name) and runs the command;
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let seed = match seed_from_env() {
        Ok(s) => s,
        Err(Failure::Input(m)) | Err(Failure::Compute(m)) => {
            eprintln!("error: {m}");
            return EXIT_INPUT;
        }
    };
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return EXIT_INPUT;
        }
        // a second initialisation in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let mut growth = GrowthOptions::default();
    if let Some(t) = cli.tol_abs {
        growth.abs_tol = t;
    }
    if let Some(t) = cli.tol_rel {
        growth.rel_tol = t;
    }
    if !(growth.abs_tol > 0.0 && growth.rel_tol > 0.0) {
        eprintln!("error: tolerances must be positive");
        return EXIT_INPUT;
    }
    let sampling = SamplingOptions { seed, ..SamplingOptions::default() };
    let ctx = Context { cli, seed, sampling, growth };
    let result = dispatch(&ctx).and_then(|out| match out {
        Output::Doc(doc, code) => emit(&ctx, &report::render(&doc)).map(|_| code),
        Output::Csv(text) => emit(&ctx, &text).map(|_| EXIT_OK),
    });
    match result {
        Ok(code) => code,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            EXIT_INPUT
        }
        Err(Failure::Compute(m)) => {
            eprintln!("error: {m}");
            EXIT_INPUT
        }
    }
}
