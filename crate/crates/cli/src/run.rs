//! Command execution and artifact writing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use schouten_core::certify::{self, CertReport, SampleSpec, TrialRecord};
use schouten_core::functional;
use schouten_core::grid::{self, Background, GridField, Lattice, Mode};
use schouten_core::solver::{self, SolverTrace};
use schouten_core::symfun;
use schouten_core::Error;

use crate::config::{Boundary, Command, RunConfig};

/// One checked invariant.  `anchor` names the mathematical statement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub anchor: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

/// Timestamps and host details; excluded from determinism comparisons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub started_unix: f64,
    pub finished_unix: f64,
    pub elapsed_seconds: BTreeMap<String, f64>,
    pub version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub command: Command,
    pub config: RunConfig,
    pub passed: bool,
    pub assertions: Vec<Assertion>,
    pub results: BTreeMap<String, Value>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub metadata: Metadata,
}

#[derive(Debug)]
pub enum RunError {
    /// Exit status 2.
    Config(String),
    /// Exit status 3.
    Internal(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Internal(_) => 3,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "configuration error: {m}"),
            RunError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::Argument(m) => RunError::Config(m),
            other => RunError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        RunError::Internal(e.to_string())
    }
}

type Res<T> = std::result::Result<T, RunError>;

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    assertions: Vec<Assertion>,
    results: BTreeMap<String, Value>,
    artifacts: Vec<String>,
    timings: BTreeMap<String, f64>,
}

impl Ctx<'_> {
    fn check(&mut self, name: &str, anchor: &str, passed: bool, value: f64, tolerance: f64) {
        self.assertions.push(Assertion {
            name: name.into(),
            anchor: anchor.into(),
            passed,
            value,
            tolerance,
        });
    }

    fn write(&mut self, rel: &str, contents: &[u8]) -> Res<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, contents)?;
        self.artifacts.push(rel.into());
        Ok(())
    }

    fn write_trials(&mut self, suite: &str, records: &[TrialRecord]) -> Res<()> {
        let mut s = String::from("trial,defect,margin\n");
        for r in records {
            let _ = writeln!(s, "{},{},{}", r.trial, r.defect, r.margin);
        }
        self.write(&format!("{suite}.csv"), s.as_bytes())
    }

    fn write_field(&mut self, name: &str, u: &GridField, bg: &Background) -> Res<()> {
        let dir = self.out.join("fields");
        fs::create_dir_all(&dir)?;
        u.write(&dir.join(format!("{name}.bin")), bg)?;
        self.artifacts.push(format!("fields/{name}.bin"));
        self.artifacts.push(format!("fields/{name}.json"));
        Ok(())
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Executes the configured command and writes `summary.json` into the output
/// directory.  Assertion failures are reported through `Summary::passed`.
pub fn run(cfg: &RunConfig) -> Res<Summary> {
    let command = cfg.command.ok_or_else(|| RunError::Config("no command given".into()))?;
    cfg.validate().map_err(RunError::Config)?;
    fs::create_dir_all(&cfg.out)?;
    let started = unix_now();
    let mut ctx = Ctx {
        cfg,
        out: cfg.out.clone(),
        assertions: Vec::new(),
        results: BTreeMap::new(),
        artifacts: Vec::new(),
        timings: BTreeMap::new(),
    };
    match command {
        Command::Certify => certify_cmd(&mut ctx)?,
        Command::Identities => identities_cmd(&mut ctx)?,
        Command::Solve => solve_cmd(&mut ctx)?,
        Command::Geodesic => geodesic_cmd(&mut ctx)?,
        Command::Report => report_cmd(&mut ctx)?,
    }
    ctx.artifacts.push("summary.json".into());
    ctx.artifacts.sort();
    let summary = Summary {
        command,
        config: cfg.clone(),
        passed: ctx.assertions.iter().all(|a| a.passed),
        assertions: ctx.assertions,
        results: ctx.results,
        artifacts: ctx.artifacts,
        metadata: Metadata {
            started_unix: started,
            finished_unix: unix_now(),
            elapsed_seconds: ctx.timings,
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: rayon::current_num_threads(),
        },
    };
    fs::write(cfg.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// One suite run as it enters the summary.
struct SuiteRun {
    report: CertReport,
    records: Vec<TrialRecord>,
    anchor: &'static str,
    /// Reporting suites record completion only.
    asserted: bool,
    seconds: f64,
}

const FD_INTERIOR_MARGIN: f64 = 0.05;

fn suite_jobs(cfg: &RunConfig) -> Vec<&'static str> {
    let n = cfg.default_n();
    match cfg.suite.as_str() {
        "all" => {
            let mut v = vec!["log_f2_midpoint", "log_f2_hessian", "h2_midpoint", "h2_hessian", "lorentz_midpoint", "lorentz_hessian", "mixed_bounds", "grad"];
            if n >= 4 {
                v.push("positivity");
            }
            v
        }
        "concavity" => vec!["log_f2_midpoint", "log_f2_hessian"],
        "convexity" => vec!["h2_midpoint", "h2_hessian"],
        "lorentz" => vec!["lorentz_midpoint", "lorentz_hessian"],
        "mixed_bounds" => vec!["mixed_bounds"],
        "positivity" => vec!["positivity"],
        "grad" => vec!["grad"],
        "conjecture" => vec!["conjecture"],
        _ => Vec::new(),
    }
}

fn run_job(cfg: &RunConfig, job: &str) -> schouten_core::Result<SuiteRun> {
    let n = cfg.default_n();
    let spec = cfg.spec(n, 2);
    let fd_spec = SampleSpec {
        trials: cfg.hessian_trials(),
        interior_margin: spec.interior_margin.max(FD_INTERIOR_MARGIN),
        ..spec.clone()
    };
    let start = Instant::now();
    let (res, anchor, asserted) = match job {
        "log_f2_midpoint" => (certify::concavity_midpoint_suite(&spec, 1e-9), "log-concavity of F_2 on its domain (midpoint)", true),
        "log_f2_hessian" => (certify::concavity_hessian_suite(&fd_spec, 1e-6), "log-concavity of F_2 on its domain (Hessian)", true),
        "h2_midpoint" => (certify::convexity_midpoint_suite(&spec, 1e-9), "convexity of T_1(r)(Y,Y)/σ_2(r) on Γ_2⁺ × ℝⁿ (midpoint)", true),
        "h2_hessian" => (certify::convexity_hessian_suite(&fd_spec, 1e-6), "convexity of T_1(r)(Y,Y)/σ_2(r) on Γ_2⁺ × ℝⁿ (Hessian)", true),
        "lorentz_midpoint" => (certify::lorentz_midpoint_suite(&spec, 1e-9), "log-concavity of xy − |z|² on the Lorentz cone (midpoint)", true),
        "lorentz_hessian" => (certify::lorentz_hessian_suite(&fd_spec, 1e-6), "log-concavity of xy − |z|² on the Lorentz cone (Hessian)", true),
        "mixed_bounds" => (certify::mixed_bounds_suite(&spec, 1e-10), "mixed lower bounds for σ_1σ̃_1 − (r, r̃) on Γ_2⁺ pairs", true),
        "positivity" => (certify::positivity_suite(&spec, 1e-10), "positivity of ⟨T_1(E), −v⊗v + ½|v|² I⟩ on Γ_2⁺", true),
        "grad" => (certify::grad_suite(&spec, 1e-6), "closed-form gradient of F_2 against central differences", true),
        "conjecture" => (
            certify::conjecture_search(&cfg.spec(n, cfg.default_k())),
            "midpoint convexity of T_{k−1}(r)(Y,Y)/σ_k(r) for k ≥ 3 (open question, reported only)",
            false,
        ),
        other => unreachable!("unknown job {other}"),
    };
    let (report, records) = res?;
    Ok(SuiteRun {
        report,
        records,
        anchor,
        asserted,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn certify_cmd(ctx: &mut Ctx) -> Res<()> {
    if ctx.cfg.suite == "identities" {
        return identities_cmd(ctx);
    }
    let jobs = suite_jobs(ctx.cfg);
    let cfg = ctx.cfg;
    let runs: Vec<(&str, schouten_core::Result<SuiteRun>)> = jobs.par_iter().map(|&j| (j, run_job(cfg, j))).collect();
    // Merge by suite name so the summary does not depend on scheduling.
    let mut merged: BTreeMap<&str, SuiteRun> = BTreeMap::new();
    for (job, r) in runs {
        merged.insert(job, r?);
    }
    if cfg.suite == "all" {
        identities_cmd(ctx)?;
    }
    for (job, run) in merged {
        let name = run.report.suite.clone();
        ctx.write_trials(&name, &run.records)?;
        if run.asserted {
            ctx.check(&name, run.anchor, run.report.passed(), run.report.worst_defect, -run.report.tolerance);
        } else {
            ctx.check(&format!("{name}_completed"), run.anchor, run.report.valid_trials > 0, run.report.valid_trials as f64, 1.0);
            if !run.report.candidates.is_empty() {
                ctx.write(&format!("{name}_candidates.json"), serde_json::to_string_pretty(&run.report.candidates)?.as_bytes())?;
            }
        }
        ctx.timings.insert(job.to_string(), run.seconds);
        ctx.results.insert(name, serde_json::to_value(&run.report)?);
    }
    Ok(())
}

fn identities_cmd(ctx: &mut Ctx) -> Res<()> {
    let dims: Vec<usize> = match ctx.cfg.n {
        Some(n) => vec![n],
        None => (3..=6).collect(),
    };
    for n in dims {
        let start = Instant::now();
        let rep = certify::identity_suite(n, ctx.cfg.trials, ctx.cfg.seed)?;
        let name = format!("identities_n{n}");
        ctx.check(&name, "polynomial identities of σ_k, T_k and F_k", rep.max_defect() <= 1e-10, rep.max_defect(), 1e-10);
        ctx.check(
            &format!("{name}_eigen_route"),
            "σ_k from the trace recursion against σ_k of the eigenvalues",
            rep.recursion_vs_eigen <= 1e-10,
            rep.recursion_vs_eigen,
            1e-10,
        );
        ctx.timings.insert(name.clone(), start.elapsed().as_secs_f64());
        ctx.results.insert(name, serde_json::to_value(&rep)?);
    }
    Ok(())
}

/// Boundary data and right-hand side of the configured problem.
fn problem_data(cfg: &RunConfig, bg: &Background) -> (Vec<f64>, Vec<f64>, GridField) {
    let p = &cfg.problem;
    let lat = Lattice::new(p.nx, bg.d, bg.l);
    let x1: Vec<f64> = (0..lat.len()).map(|i| lat.coords(i)[0]).collect();
    let (u0, u1) = match p.boundary {
        Boundary::Constant => (vec![p.value; lat.len()], vec![p.value; lat.len()]),
        Boundary::Sinusoidal => (
            x1.iter().map(|x| p.amplitude * x.sin()).collect(),
            x1.iter().map(|x| p.amplitude * x.cos()).collect(),
        ),
    };
    let a = p.rhs_amplitude;
    let f = GridField::from_fn(p.nt, p.nx, bg.d, bg.l, |t, x| 1.0 + a * t * x[0].cos());
    (u0, u1, f)
}

/// Whether a solver error is a numerical failure rather than a bug.
fn solver_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::Stall(_) | Error::NonConvergence(_) | Error::LinearSolve(_) | Error::Linearization { .. } | Error::Domain { .. } | Error::Setup(_)
    )
}

fn trace_summary(trace: &SolverTrace) -> Value {
    json!({
        "barrier_a": trace.barrier_a,
        "stages": trace.stages.len(),
        "max_stage_iterations": trace.max_stage_iterations(),
        "final_proxies": trace.final_proxies(),
        "final_residual": trace.stages.last().and_then(|s| s.residual_history.last()),
    })
}

fn bounds_check(ctx: &mut Ctx, name: &str, u: &GridField, u0: &[f64], u1: &[f64], trace: &SolverTrace, bg: &Background) -> Res<()> {
    let b = solver::verify_bounds(u, u0, u1, trace, bg)?;
    let worst = [b.c0_lower, b.c0_upper, b.ut_lower, b.ut_upper, b.gamma3].into_iter().fold(f64::INFINITY, f64::min);
    ctx.check(name, "C⁰ sandwich, u_t bounds and admissibility slack of the solution", b.passed, worst, -b.tolerance);
    ctx.results.insert(name.into(), serde_json::to_value(&b)?);
    Ok(())
}

fn solve_cmd(ctx: &mut Ctx) -> Res<()> {
    let cfg = ctx.cfg;
    let bg = cfg.background.build().map_err(RunError::Config)?;
    let (u0, u1, f) = problem_data(cfg, &bg);
    let s = cfg.problem.s;
    let start = Instant::now();
    let solved = solver::solve_perturbed(&u0, &u1, &bg, &f, s, &cfg.solver);
    ctx.timings.insert("solve".into(), start.elapsed().as_secs_f64());
    let (u, trace) = match solved {
        Ok(v) => v,
        Err(e) if solver_failure(&e) => {
            ctx.check("solver_converged", "Newton continuity method reaches the target", false, f64::NAN, cfg.solver.newton_tol);
            ctx.results.insert("solver_error".into(), Value::String(e.to_string()));
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let residual = trace.stages.last().and_then(|st| st.residual_history.last().copied()).unwrap_or(f64::NAN);
    ctx.check("solver_converged", "Newton continuity method reaches the target", true, residual, cfg.solver.newton_tol);
    ctx.results.insert("trace".into(), trace_summary(&trace));
    ctx.write_field("u", &u, &bg)?;
    ctx.write_field("f", &f, &bg)?;
    bounds_check(ctx, "order_relations", &u, &u0, &u1, &trace, &bg)?;

    // Constant data with f ≡ 1 has the solution c + (s / 2σ_2(A0)) t(t−1).
    let sigma2 = symfun::sigma2(&bg.a0);
    if cfg.problem.boundary == Boundary::Constant && cfg.problem.rhs_amplitude == 0.0 && bg.mode == Mode::Synthetic && sigma2 > 0.0 {
        let c = cfg.problem.value;
        let alpha = s / (2.0 * sigma2);
        let exact = GridField::from_fn(u.nt, u.nx, u.d, bg.l, |t, _| c + alpha * t * (t - 1.0));
        let err = u.lin_comb(1.0, &exact, -1.0).sup_norm();
        ctx.check("closed_form", "explicit solution for constant boundary data", err <= 1e-10, err, 1e-10);
    }
    let even = u.nt % 2 == 0 && u.nx % 2 == 0 && u.nt >= 8;
    if even && bg.n == 4 {
        match solver::linearization_report(&u, &bg, cfg.seed) {
            Ok(rep) => {
                ctx.results.insert("linearization".into(), serde_json::to_value(&rep)?);
            }
            Err(e) => {
                ctx.results.insert("linearization".into(), Value::String(e.to_string()));
            }
        }
    }
    Ok(())
}

fn geodesic_cmd(ctx: &mut Ctx) -> Res<()> {
    let cfg = ctx.cfg;
    let bg = cfg.background.build().map_err(RunError::Config)?;
    let (u0, u1, _) = problem_data(cfg, &bg);
    let start = Instant::now();
    let path = match solver::approximate_geodesic(&u0, &u1, &bg, cfg.problem.nt, cfg.problem.nx, &cfg.solver) {
        Ok(p) => p,
        Err(e) if solver_failure(&e) => {
            ctx.check("schedule_completed", "march along the s schedule", false, 0.0, cfg.solver.s_schedule.len() as f64);
            ctx.results.insert("solver_error".into(), Value::String(e.to_string()));
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    ctx.timings.insert("geodesic".into(), start.elapsed().as_secs_f64());
    ctx.check(
        "schedule_completed",
        "march along the s schedule",
        path.completed,
        path.points.len() as f64,
        cfg.solver.s_schedule.len() as f64,
    );
    let mut csv = String::from("s,max_u_tt,max_hess_u,max_grad_u_t,max_u_t,osc_u,stages,max_newton_iterations\n");
    let mut points = Vec::new();
    for (j, p) in path.points.iter().enumerate() {
        ctx.write_field(&format!("u_{j:02}"), &p.u, &bg)?;
        bounds_check(ctx, &format!("order_relations_{j:02}"), &p.u, &u0, &u1, &p.trace, &bg)?;
        if let Some(x) = p.trace.final_proxies() {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                p.s,
                x.max_u_tt,
                x.max_hess_u,
                x.max_grad_u_t,
                x.max_u_t,
                x.osc_u,
                p.trace.stages.len(),
                p.trace.max_stage_iterations()
            );
        }
        points.push(json!({ "s": p.s, "trace": trace_summary(&p.trace) }));
    }
    ctx.write("proxies.csv", csv.as_bytes())?;

    // Second-derivative proxies below s = 1/4 stay within 3× their value there.
    let reference = path.points.iter().find(|p| p.s == 0.25).and_then(|p| p.trace.final_proxies().cloned());
    if let Some(r) = reference {
        let mut ratio = 0.0f64;
        for p in path.points.iter().filter(|p| p.s < 0.25) {
            if let Some(x) = p.trace.final_proxies() {
                ratio = ratio
                    .max(x.max_u_tt / r.max_u_tt)
                    .max(x.max_hess_u / r.max_hess_u)
                    .max(x.max_grad_u_t / r.max_grad_u_t);
            }
        }
        ctx.check("c11_plateau", "s-independent bound on second derivatives", ratio <= 3.0, ratio, 3.0);
    }
    ctx.results.insert(
        "path".into(),
        json!({ "completed": path.completed, "barrier_a": path.barrier_a, "stopped_by": path.stopped_by, "points": points }),
    );
    Ok(())
}

fn order(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn report_cmd(ctx: &mut Ctx) -> Res<()> {
    let cfg = ctx.cfg;
    let start = Instant::now();
    let g3 = Background::geometric(3, 2.0 * std::f64::consts::PI)?;
    let div = [8, 16, 32]
        .iter()
        .map(|&nx| {
            let u = GridField::from_fn(1, nx, 3, g3.l, |_, x| {
                0.15 * x[0].sin() * x[1].cos() + 0.1 * x[2].sin() + 0.05 * (x[0] + x[2]).cos()
            });
            grid::divergence_defect(&u, 0, &g3).map(|r| r.defect)
        })
        .collect::<schouten_core::Result<Vec<f64>>>()?;
    let g4 = Background::geometric(4, 2.0 * std::f64::consts::PI)?;
    let tot = [6, 12, 24]
        .iter()
        .map(|&nx| {
            let u = GridField::from_fn(1, nx, 4, g4.l, |_, x| {
                0.2 * x[0].sin() * x[1].cos() + 0.1 * (x[2] - x[3]).sin() + 0.05 * (x[0] + x[3]).cos()
            });
            grid::total_sigma2(&u, 0, &g4).map(f64::abs)
        })
        .collect::<schouten_core::Result<Vec<f64>>>()?;
    let (od, ot) = (order(&div), order(&tot));
    let min_od = od.iter().copied().fold(f64::INFINITY, f64::min);
    let min_ot = ot.iter().copied().fold(f64::INFINITY, f64::min);
    ctx.check("divergence_order", "T_1(A_u) is divergence free on flat T³", min_od >= 1.5, min_od, 1.5);
    ctx.check("total_sigma2_order", "∫σ_2 dV is conformally invariant on flat T⁴", min_ot >= 1.5, min_ot, 1.5);
    ctx.results.insert(
        "geometry".into(),
        json!({ "divergence_defects": div, "divergence_orders": od, "total_sigma2_defects": tot, "total_sigma2_orders": ot }),
    );

    let kappa = functional::calibrate_kappa()?;
    let nx = 16;
    let lat = Lattice::new(nx, 4, g4.l);
    let (u, v): (Vec<f64>, Vec<f64>) = (0..lat.len())
        .map(|i| {
            let x = lat.coords(i);
            (
                0.15 * (x[0].sin() + 0.5 * x[1].cos()).exp() * (1.0 + 0.3 * x[2].cos()) + 0.1 * (x[3] - x[0]).sin(),
                0.2 * (x[1] + x[2]).cos() / (1.5 + x[3].sin()),
            )
        })
        .unzip();
    let fv = functional::first_variation_check(&u, &v, &g4, nx, kappa)?;
    let drift = ((-fv.fd / fv.pairing - kappa) / kappa).abs();
    ctx.check("first_variation", "first variation of the conformal functional", fv.defect <= 1e-4, fv.defect, 1e-4);
    ctx.check("kappa_stability", "normalisation constant is case independent", drift <= 1e-6, drift, 1e-6);
    ctx.results.insert("first_variation".into(), serde_json::to_value(&fv)?);
    ctx.timings.insert("geometry".into(), start.elapsed().as_secs_f64());

    // Functional along a solved path; diagnostics only.
    let bg = cfg.background.build().map_err(RunError::Config)?;
    if bg.n == 4 {
        let start = Instant::now();
        let (u0, u1, f) = problem_data(cfg, &bg);
        match solver::solve_perturbed(&u0, &u1, &bg, &f, cfg.problem.s, &cfg.solver) {
            Ok((u, _)) => {
                let rep = functional::path_diagnostic(&u, &bg, cfg.problem.s, kappa)?;
                ctx.write("functional.csv", rep.to_csv().as_bytes())?;
                ctx.results.insert("functional".into(), serde_json::to_value(&rep)?);
            }
            Err(e) if solver_failure(&e) => {
                ctx.results.insert("functional".into(), Value::String(e.to_string()));
            }
            Err(e) => return Err(e.into()),
        }
        ctx.timings.insert("functional".into(), start.elapsed().as_secs_f64());
    }
    Ok(())
}

/// Summary JSON without the metadata block, for determinism comparisons.
pub fn deterministic_part(summary_json: &str) -> serde_json::Result<Value> {
    let mut v: Value = serde_json::from_str(summary_json)?;
    if let Some(o) = v.as_object_mut() {
        o.remove("metadata");
    }
    Ok(v)
}
