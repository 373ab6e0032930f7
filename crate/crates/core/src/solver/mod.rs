//! Damped-Newton continuity method for the perturbed geodesic equation
//! `F(u_tt, A_u, ∇u_t) = s·f` on `[0,1] × T^d` with Dirichlet data in `t`.
//!
//! Newton runs on `G = log F`.  The linearized operator is the exact
//! derivative of the discrete map `u ↦ F(jet(u))`, assembled per point from
//! the closed-form gradient of `F_2`:
//! `ℒ_F v = F^{00} v_tt + 2 F^{a0} ∂_a v_t + F^{ab} ∂_ab v + b^a ∂_a v` with
//! `b = 2 F^{ab}∇u − tr(F^{··})∇u` coming from the quadratic terms of `A_u`.

pub mod linear;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::grid::{self, Background, GridField, JetField, Lattice};
use crate::gsop;
use crate::symfun::{self, SymMatrix};
use linear::{Csr, GmresInfo, Preconditioner, PreconditionerKind};

/// Solver parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Target for `sup |log F − log target|`.
    pub newton_tol: f64,
    /// Newton iterations per stage.
    pub max_newton: usize,
    pub damping_shrink: f64,
    pub min_step: f64,
    /// Every pointwise `σ_1(A_u)`, `σ_2(A_u)`, `u_tt`, `F` must stay above
    /// this fraction of its current value.
    pub cone_margin: f64,
    /// Minimum number of homotopy stages.
    pub homotopy_steps: usize,
    /// Largest ratio of mean right-hand sides between consecutive stages.
    pub homotopy_ratio: f64,
    /// Maximum recursive halvings of a failed homotopy stage.
    pub max_bisections: usize,
    pub s_schedule: Vec<f64>,
    pub linear_tol: f64,
    pub gmres_restart: usize,
    pub gmres_max_iter: usize,
    pub preconditioner: PreconditionerKind,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            newton_tol: 1e-10,
            max_newton: 50,
            damping_shrink: 0.5,
            min_step: 2f64.powi(-16),
            cone_margin: 1e-3,
            homotopy_steps: 4,
            homotopy_ratio: 1.5,
            max_bisections: 8,
            s_schedule: (0..=8).map(|j| 2f64.powi(-j)).collect(),
            linear_tol: 1e-12,
            gmres_restart: 200,
            gmres_max_iter: 2000,
            preconditioner: PreconditionerKind::TimeLine,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("newton_tol", self.newton_tol),
            ("min_step", self.min_step),
            ("cone_margin", self.cone_margin),
            ("linear_tol", self.linear_tol),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return arg(format!("{name} must be positive"));
            }
        }
        if !(self.damping_shrink > 0.0 && self.damping_shrink < 1.0) {
            return arg("damping_shrink must lie in (0, 1)");
        }
        if self.cone_margin >= 1.0 {
            return arg("cone_margin must be below 1");
        }
        if self.max_newton == 0 || self.homotopy_steps == 0 || self.gmres_restart == 0 {
            return arg("iteration counts must be positive");
        }
        if !(self.homotopy_ratio > 1.0) {
            return arg("homotopy_ratio must exceed 1");
        }
        if self.s_schedule.is_empty()
            || self.s_schedule.iter().any(|&s| !(s > 0.0))
            || self.s_schedule.windows(2).any(|w| w[1] >= w[0])
        {
            return arg("s_schedule must be positive and strictly decreasing");
        }
        Ok(())
    }
}

/// Grid maxima mirroring the second-order estimate list.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Proxies {
    pub max_u_tt: f64,
    /// Largest Frobenius norm of the spatial Hessian.
    pub max_hess_u: f64,
    pub max_grad_u_t: f64,
    pub max_u_t: f64,
    pub osc_u: f64,
}

/// Record of one Newton stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    /// Homotopy parameter of this stage (1 is the final target).
    pub tau: f64,
    /// `sup |log F − log target|` before the first and after each accepted step.
    pub residual_history: Vec<f64>,
    pub step_sizes: Vec<f64>,
    /// Rejected trial steps per accepted step.
    pub backtracks: Vec<usize>,
    /// Smallest pointwise value of `σ_1(A_u)`, `σ_2(A_u)`, `u_tt`, `F` after each step.
    pub min_margins: Vec<f64>,
    pub linear_solves: Vec<GmresInfo>,
    pub converged: bool,
    pub proxies: Proxies,
}

impl StageTrace {
    pub fn iterations(&self) -> usize {
        self.step_sizes.len()
    }
}

/// Record of a full solve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub s: Option<f64>,
    /// Barrier parameter `a` of the initial guess.
    pub barrier_a: Option<f64>,
    pub stages: Vec<StageTrace>,
}

impl SolverTrace {
    pub fn max_stage_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations()).max().unwrap_or(0)
    }

    pub fn final_proxies(&self) -> Option<&Proxies> {
        self.stages.iter().rev().find(|s| s.converged).map(|s| &s.proxies)
    }
}

/// Per-point coefficients of the linearized operator.
#[derive(Clone, Debug)]
struct PointCoeffs {
    c_tt: f64,
    gy: Vec<f64>,
    gr: SymMatrix,
    b: Vec<f64>,
}

fn coefficients(jf: &JetField) -> Vec<PointCoeffs> {
    let d = jf.d;
    jf.jets
        .par_iter()
        .map(|j| {
            let g = gsop::grad_f(&j.extended());
            let tr = g.r.trace();
            let gu = g.r.mat_vec(&j.grad_u);
            let b = (0..d).map(|a| 2.0 * gu[a] - tr * j.grad_u[a]).collect();
            PointCoeffs {
                c_tt: g.r00,
                gy: g.y[..d].to_vec(),
                gr: g.r,
                b,
            }
        })
        .collect()
}

/// Stencil weights `(it', ix', w)` of the linearization at `(it, ix)`.
fn stencil(c: &PointCoeffs, lat: &Lattice, dt: f64, it: usize, ix: usize) -> Vec<(usize, usize, f64)> {
    let d = lat.d;
    let h = lat.h;
    let mut out = Vec::with_capacity(3 + 4 * d + 3 * d + 2 * d * d + 2 * d);
    let ct = c.c_tt / (dt * dt);
    out.push((it - 1, ix, ct));
    out.push((it, ix, -2.0 * ct));
    out.push((it + 1, ix, ct));
    for a in 0..d {
        let w = c.gy[a] / (2.0 * dt * h);
        let (f, b) = (lat.fwd(ix, a), lat.back(ix, a));
        out.push((it + 1, f, w));
        out.push((it + 1, b, -w));
        out.push((it - 1, f, -w));
        out.push((it - 1, b, w));
        let waa = c.gr.get(a, a) / (h * h);
        out.push((it, f, waa));
        out.push((it, ix, -2.0 * waa));
        out.push((it, b, waa));
        let wg = c.b[a] / (2.0 * h);
        out.push((it, f, wg));
        out.push((it, b, -wg));
        for bb in a + 1..d {
            let w = 2.0 * c.gr.get(a, bb) / (4.0 * h * h);
            out.push((it, lat.fwd(f, bb), w));
            out.push((it, lat.back(f, bb), -w));
            out.push((it, lat.fwd(b, bb), -w));
            out.push((it, lat.back(b, bb), w));
        }
    }
    out
}

/// Checks strict admissibility and returns the worst point otherwise.
fn require_admissible(jf: &JetField) -> Result<()> {
    let mut worst = (f64::INFINITY, 0usize);
    for (idx, j) in jf.jets.iter().enumerate() {
        let m = point_margins(j).into_iter().fold(f64::INFINITY, f64::min);
        if m < worst.0 {
            worst = (m, idx);
        }
    }
    if worst.0 > 0.0 {
        Ok(())
    } else {
        Err(Error::Linearization {
            point: jf.location(worst.1),
            margin: worst.0,
            detail: "iterate is not strictly admissible (A_u ∈ Γ_2⁺, u_tt > 0, F > 0)".into(),
        })
    }
}

fn point_margins(j: &grid::Jet) -> [f64; 4] {
    [j.a_u.trace(), symfun::sigma2(&j.a_u), j.u_tt, j.f()]
}

/// Discrete linearized operator `ℒ_F` at `u` applied to `v` (all of whose
/// values, including the boundary slices, enter the stencils).  The result
/// vanishes on the boundary slices.
pub fn apply_linearization(u: &GridField, bg: &Background, v: &GridField) -> Result<GridField> {
    if !u.same_shape(v) {
        return arg("u and v have different shapes");
    }
    let jf = grid::differentiate(u, bg)?;
    require_admissible(&jf)?;
    let coeffs = coefficients(&jf);
    let lat = Lattice::new(u.nx, u.d, bg.l);
    let ns = lat.len();
    let dt = u.dt();
    let mut out = GridField::zeros(u.nt, u.nx, u.d);
    for (idx, c) in coeffs.iter().enumerate() {
        let (it, ix) = jf.location(idx);
        out.values[it * ns + ix] = stencil(c, &lat, dt, it, ix)
            .into_iter()
            .map(|(a, b, w)| w * v.at(a, b))
            .sum();
    }
    Ok(out)
}

/// Pointwise quadratic form `F^{ij} w_i w_j` with `w = (w_t, ∇w)` for each
/// interior point, where `w` is the discrete `(t, x)` gradient of `v`.
pub fn q_form(u: &GridField, bg: &Background, v: &GridField) -> Result<GridField> {
    let jf = grid::differentiate(u, bg)?;
    let lat = Lattice::new(u.nx, u.d, bg.l);
    let ns = lat.len();
    let mut out = GridField::zeros(u.nt, u.nx, u.d);
    for (idx, j) in jf.jets.iter().enumerate() {
        let (it, ix) = jf.location(idx);
        let g = gsop::grad_f(&j.extended());
        let wt = (v.at(it + 1, ix) - v.at(it - 1, ix)) / (2.0 * u.dt());
        let wx = lat.gradient(v.slice(it), ix, bg.n);
        out.values[it * ns + ix] = g.r00 * wt * wt
            + 2.0 * wt * g.y.iter().zip(&wx).map(|(a, b)| a * b).sum::<f64>()
            + g.r.quad_form(&wx);
    }
    Ok(out)
}

fn assemble(coeffs: &[PointCoeffs], jf: &JetField, lat: &Lattice, dt: f64) -> Csr {
    let ns = lat.len();
    let nt = jf.nt;
    let rows = coeffs
        .par_iter()
        .enumerate()
        .map(|(idx, c)| {
            let (it, ix) = jf.location(idx);
            stencil(c, lat, dt, it, ix)
                .into_iter()
                .filter(|&(a, _, _)| a >= 1 && a < nt)
                .map(|(a, b, w)| ((a - 1) * ns + b, w))
                .collect()
        })
        .collect();
    Csr::from_rows(rows)
}

struct State {
    u: GridField,
    jf: JetField,
    margins: Vec<[f64; 4]>,
    log_res: Vec<f64>,
    sup: f64,
}

fn evaluate(u: GridField, bg: &Background, log_target: &[f64]) -> Result<State> {
    let jf = grid::differentiate(&u, bg)?;
    let margins: Vec<[f64; 4]> = jf.jets.iter().map(point_margins).collect();
    let log_res: Vec<f64> = margins
        .iter()
        .zip(log_target)
        .map(|(m, lt)| if m[3] > 0.0 { m[3].ln() - lt } else { f64::INFINITY })
        .collect();
    let sup = log_res.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(State {
        u,
        jf,
        margins,
        log_res,
        sup,
    })
}

/// Grid maxima of the second-order quantities and of `u_t`, `osc u`.
pub fn proxies(u: &GridField, jf: &JetField) -> Proxies {
    let mut p = Proxies::default();
    for j in &jf.jets {
        p.max_u_tt = p.max_u_tt.max(j.u_tt);
        p.max_hess_u = p.max_hess_u.max(j.hess_u.norm_sq().sqrt());
        p.max_grad_u_t = p.max_grad_u_t.max(j.grad_u_t.iter().map(|v| v * v).sum::<f64>().sqrt());
        p.max_u_t = p.max_u_t.max(j.u_t.abs());
    }
    let (lo, hi) = u
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    p.osc_u = hi - lo;
    p
}

/// Newton iteration on `log F(jet(u)) = log(target)` with the boundary slices
/// of `u_init` held fixed.
pub fn newton_stage(u_init: &GridField, bg: &Background, target: &GridField, cfg: &SolverConfig) -> Result<(GridField, StageTrace)> {
    newton_stage_tau(u_init, bg, target, cfg, 1.0)
}

fn newton_stage_tau(
    u_init: &GridField,
    bg: &Background,
    target: &GridField,
    cfg: &SolverConfig,
    tau: f64,
) -> Result<(GridField, StageTrace)> {
    cfg.validate()?;
    if !u_init.same_shape(target) {
        return arg("target has a different shape from u");
    }
    let ns = u_init.spatial_len();
    let nt = u_init.nt;
    let interior = &target.values[ns..nt * ns];
    if interior.iter().any(|&v| !(v > 0.0)) {
        return arg("target right-hand side must be positive");
    }
    let log_target: Vec<f64> = interior.iter().map(|v| v.ln()).collect();
    let lat = Lattice::new(u_init.nx, u_init.d, bg.l);
    let dt = u_init.dt();

    let mut st = evaluate(u_init.clone(), bg, &log_target)?;
    require_admissible(&st.jf)?;
    let mut trace = StageTrace {
        tau,
        residual_history: vec![st.sup],
        ..Default::default()
    };
    let fail = |trace: StageTrace, stall: bool| {
        let t = Box::new(SolverTrace {
            stages: vec![trace],
            ..Default::default()
        });
        if stall {
            Error::Stall(t)
        } else {
            Error::NonConvergence(t)
        }
    };
    loop {
        if st.sup <= cfg.newton_tol {
            trace.converged = true;
            trace.proxies = proxies(&st.u, &st.jf);
            return Ok((st.u, trace));
        }
        if trace.iterations() >= cfg.max_newton {
            trace.proxies = proxies(&st.u, &st.jf);
            return Err(fail(trace, false));
        }
        let coeffs = coefficients(&st.jf);
        let a = assemble(&coeffs, &st.jf, &lat, dt);
        // ℒ_F h = F (log target − log F), i.e. ℒ_G h = −residual.
        let rhs: Vec<f64> = st.margins.iter().zip(&st.log_res).map(|(m, r)| -m[3] * r).collect();
        let pre = Preconditioner::build(cfg.preconditioner, &a, ns)?;
        let (h, info) = linear::gmres(&a, &pre, &rhs, cfg.linear_tol, cfg.gmres_restart, cfg.gmres_max_iter, 1e-6)?;
        trace.linear_solves.push(info);

        let mut alpha = 1.0;
        let mut backtracks = 0;
        loop {
            if alpha < cfg.min_step {
                trace.proxies = proxies(&st.u, &st.jf);
                return Err(fail(trace, true));
            }
            let mut cand = st.u.clone();
            for (i, hv) in h.iter().enumerate() {
                cand.values[ns + i] += alpha * hv;
            }
            let next = evaluate(cand, bg, &log_target)?;
            let margins_ok = next
                .margins
                .iter()
                .zip(&st.margins)
                .all(|(m, cur)| (0..4).all(|q| m[q] >= cfg.cone_margin * cur[q] && m[q] > 0.0));
            if margins_ok && next.sup < st.sup {
                trace.step_sizes.push(alpha);
                trace.backtracks.push(backtracks);
                trace.residual_history.push(next.sup);
                trace
                    .min_margins
                    .push(next.margins.iter().flat_map(|m| m.iter()).fold(f64::INFINITY, |a, &v| a.min(v)));
                st = next;
                break;
            }
            alpha *= cfg.damping_shrink;
            backtracks += 1;
        }
    }
}

/// `F(jet(u))` at interior points; boundary slices copy the nearest
/// interior level so the field is positive everywhere.
pub fn operator_field(u: &GridField, bg: &Background) -> Result<GridField> {
    let jf = grid::differentiate(u, bg)?;
    let ns = u.spatial_len();
    let mut out = GridField::zeros(u.nt, u.nx, u.d);
    for (idx, j) in jf.jets.iter().enumerate() {
        out.values[ns + idx] = j.f();
    }
    for ix in 0..ns {
        out.values[ix] = out.values[ns + ix];
        out.values[u.nt * ns + ix] = out.values[(u.nt - 1) * ns + ix];
    }
    Ok(out)
}

fn check_boundary(u0: &[f64], u1: &[f64], bg: &Background, f: &GridField) -> Result<()> {
    bg.validate()?;
    if f.d != bg.d {
        return arg("f has the wrong spatial dimension");
    }
    let ns = f.spatial_len();
    if u0.len() != ns || u1.len() != ns {
        return arg("boundary slices do not match the grid");
    }
    let lat = Lattice::new(f.nx, f.d, bg.l);
    for (name, slice) in [("u0", u0), ("u1", u1)] {
        for ix in 0..ns {
            let a = grid::schouten(&bg.a0, &lat.gradient(slice, ix, bg.n), &lat.hessian(slice, ix, bg.n));
            if !(a.trace() > 0.0 && symfun::sigma2(&a) > 0.0) {
                return Err(Error::Setup(format!("{name} is not admissible at spatial point {ix}")));
            }
        }
    }
    if f.values.iter().any(|&v| !(v > 0.0)) {
        return arg("f must be positive");
    }
    Ok(())
}

/// `w = (1−t) u0 + t u1 + a t(t−1)` with `a` doubled from 1 until
/// `min F(jet(w)) ≥ 2 s max f` over the interior and `w` is admissible.
pub fn initial_barrier(u0: &[f64], u1: &[f64], bg: &Background, f: &GridField, s: f64) -> Result<(GridField, f64)> {
    check_boundary(u0, u1, bg, f)?;
    if !(s > 0.0) {
        return arg("s must be positive");
    }
    let ns = f.spatial_len();
    let fmax = f.values[ns..f.nt * ns].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lin = GridField::linear_interpolation(f.nt, u0, u1, f.nx, f.d);
    let mut a = 1.0;
    while a <= 2f64.powi(30) {
        let w = barrier_field(&lin, a);
        let jf = grid::differentiate(&w, bg)?;
        let adm = grid::admissibility(&jf);
        let fmin = adm.f.iter().cloned().fold(f64::INFINITY, f64::min);
        if adm.all_admissible() && fmin >= 2.0 * s * fmax {
            return Ok((w, a));
        }
        a *= 2.0;
    }
    Err(Error::Setup(
        "barrier parameter exceeded 2^30; boundary data incompatible at this resolution".into(),
    ))
}

fn barrier_field(lin: &GridField, a: f64) -> GridField {
    let mut w = lin.clone();
    let ns = w.spatial_len();
    for it in 0..=w.nt {
        let t = it as f64 / w.nt as f64;
        for ix in 0..ns {
            w.values[it * ns + ix] += a * t * (t - 1.0);
        }
    }
    w
}

fn interior_mean(g: &GridField) -> f64 {
    let ns = g.spatial_len();
    let v = &g.values[ns..g.nt * ns];
    v.iter().sum::<f64>() / v.len() as f64
}

/// Continues from `u_start` (whose operator values are `f_start`) to the
/// right-hand side `target` along `τ ↦ τ·target + (1−τ)·f_start`.
///
/// The stage parameters are spaced so that consecutive mean right-hand sides
/// differ by at most `homotopy_ratio`; a failed stage is halved recursively
/// up to `max_bisections` times.
pub fn continuation(
    u_start: &GridField,
    f_start: &GridField,
    target: &GridField,
    bg: &Background,
    cfg: &SolverConfig,
    trace: &mut SolverTrace,
) -> Result<GridField> {
    let (m0, m1) = (interior_mean(f_start), interior_mean(target));
    let log_ratio = (m1 / m0).ln();
    let steps = cfg
        .homotopy_steps
        .max((log_ratio.abs() / cfg.homotopy_ratio.ln()).ceil() as usize);
    let taus: Vec<f64> = (0..=steps)
        .map(|j| {
            let x = j as f64 / steps as f64;
            if log_ratio.abs() < 1e-12 {
                x
            } else {
                (m0 * (x * log_ratio).exp() - m0) / (m1 - m0)
            }
        })
        .collect();
    let rhs = |tau: f64| f_start.lin_comb(1.0 - tau, target, tau);

    let (mut u, st) = newton_stage_tau(u_start, bg, &rhs(0.0), cfg, 0.0)?;
    trace.stages.push(st);
    for w in taus.windows(2) {
        u = advance(u, w[0], w[1], 0, &rhs, bg, cfg, trace)?;
    }
    Ok(u)
}

#[allow(clippy::too_many_arguments)]
fn advance(
    u: GridField,
    from: f64,
    to: f64,
    depth: usize,
    rhs: &dyn Fn(f64) -> GridField,
    bg: &Background,
    cfg: &SolverConfig,
    trace: &mut SolverTrace,
) -> Result<GridField> {
    match newton_stage_tau(&u, bg, &rhs(to), cfg, to) {
        Ok((next, st)) => {
            trace.stages.push(st);
            Ok(next)
        }
        Err(e @ (Error::Stall(_) | Error::NonConvergence(_) | Error::LinearSolve(_))) => {
            if let Error::Stall(t) | Error::NonConvergence(t) = &e {
                trace.stages.extend(t.stages.iter().cloned());
            }
            if depth >= cfg.max_bisections {
                return Err(match e {
                    Error::Stall(_) => Error::Stall(Box::new(trace.clone())),
                    Error::NonConvergence(_) => Error::NonConvergence(Box::new(trace.clone())),
                    other => other,
                });
            }
            let mid = 0.5 * (from + to);
            let half = advance(u, from, mid, depth + 1, rhs, bg, cfg, trace)?;
            advance(half, mid, to, depth + 1, rhs, bg, cfg, trace)
        }
        Err(e) => Err(e),
    }
}

/// Solves `F(jet(u)) = s·f` with `u = u0` at `t = 0` and `u = u1` at `t = 1`,
/// starting from the barrier and continuing from `f0 = F(jet(w))`.
pub fn solve_perturbed(
    u0: &[f64],
    u1: &[f64],
    bg: &Background,
    f: &GridField,
    s: f64,
    cfg: &SolverConfig,
) -> Result<(GridField, SolverTrace)> {
    cfg.validate()?;
    let (w, a) = initial_barrier(u0, u1, bg, f, s)?;
    let f0 = operator_field(&w, bg)?;
    let mut trace = SolverTrace {
        s: Some(s),
        barrier_a: Some(a),
        stages: Vec::new(),
    };
    let u = continuation(&w, &f0, &f.map(|v| s * v), bg, cfg, &mut trace)?;
    Ok((u, trace))
}

/// One converged point of an approximate geodesic.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeodesicPoint {
    pub s: f64,
    pub u: GridField,
    pub trace: SolverTrace,
}

/// Solutions along the `s` schedule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeodesicPath {
    pub points: Vec<GeodesicPoint>,
    /// False when the march stalled before the end of the schedule.
    pub completed: bool,
    pub barrier_a: f64,
    /// Message of the error that ended an incomplete march.
    pub stopped_by: Option<String>,
}

/// Marches `s` down `cfg.s_schedule` with `f ≡ 1`, warm-starting each value
/// from the previous solution.  A failing step is retried through the
/// geometric midpoint of the two `s` values; if that fails too the converged
/// prefix is returned.
pub fn approximate_geodesic(
    u0: &[f64],
    u1: &[f64],
    bg: &Background,
    nt: usize,
    nx: usize,
    cfg: &SolverConfig,
) -> Result<GeodesicPath> {
    cfg.validate()?;
    let ones = GridField::from_fn(nt, nx, bg.d, bg.l, |_, _| 1.0);
    let s_first = cfg.s_schedule[0];
    let (u, trace) = solve_perturbed(u0, u1, bg, &ones, s_first, cfg)?;
    let a = trace.barrier_a.unwrap_or(f64::NAN);
    let mut path = GeodesicPath {
        points: vec![GeodesicPoint { s: s_first, u, trace }],
        completed: true,
        barrier_a: a,
        stopped_by: None,
    };
    for &s in &cfg.s_schedule[1..] {
        let prev = path.points.last().unwrap().clone();
        match step_s(&prev.u, s, prev.s, bg, &ones, cfg, 2) {
            Ok((u, mut trace)) => {
                trace.barrier_a = Some(a);
                path.points.push(GeodesicPoint { s, u, trace });
            }
            Err(e) => {
                path.completed = false;
                path.stopped_by = Some(e.to_string());
                break;
            }
        }
    }
    Ok(path)
}

fn step_s(
    u: &GridField,
    s: f64,
    s_prev: f64,
    bg: &Background,
    ones: &GridField,
    cfg: &SolverConfig,
    splits: usize,
) -> Result<(GridField, SolverTrace)> {
    let mut trace = SolverTrace {
        s: Some(s),
        ..Default::default()
    };
    let f_start = operator_field(u, bg)?;
    match continuation(u, &f_start, &ones.map(|v| s * v), bg, cfg, &mut trace) {
        Ok(next) => Ok((next, trace)),
        Err(e) if splits > 0 => {
            let mid = (s * s_prev).sqrt();
            let (half, _) = step_s(u, mid, s_prev, bg, ones, cfg, splits - 1).map_err(|_| e)?;
            step_s(&half, s, mid, bg, ones, cfg, splits - 1)
        }
        Err(e) => Err(e),
    }
}

/// Worst slacks of the order relations satisfied by a converged solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    /// `min (u − U_{−a})` with `U_{−a} = (1−t)u0 + t u1 + a t(t−1)`.
    pub c0_lower: f64,
    /// `min ((1−t)u0 + t u1 − u)`.
    pub c0_upper: f64,
    /// `min (u_t − (u1 − u0 − a))`.
    pub ut_lower: f64,
    /// `min ((u1 − u0 + a) − u_t)`.
    pub ut_upper: f64,
    /// `min (σ_1(E_u) − F σ_1(A_u)/σ_2(A_u))`.
    pub gamma3: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks the `C⁰` sandwich, the `u_t` bounds and the pointwise lower bound
/// on `σ_1(E_u)`.  `u_t` uses central differences inside and second-order
/// one-sided differences on the boundary slices.
pub fn verify_bounds(u: &GridField, u0: &[f64], u1: &[f64], trace: &SolverTrace, bg: &Background) -> Result<BoundsReport> {
    let a = trace
        .barrier_a
        .ok_or_else(|| Error::Argument("trace carries no barrier parameter".into()))?;
    let ns = u.spatial_len();
    if u0.len() != ns || u1.len() != ns {
        return arg("boundary slices do not match the grid");
    }
    let dt = u.dt();
    let nt = u.nt;
    let mut rep = BoundsReport {
        c0_lower: f64::INFINITY,
        c0_upper: f64::INFINITY,
        ut_lower: f64::INFINITY,
        ut_upper: f64::INFINITY,
        gamma3: f64::INFINITY,
        tolerance: 1e-8,
        passed: false,
    };
    for it in 0..=nt {
        let t = it as f64 / nt as f64;
        for ix in 0..ns {
            let lin = (1.0 - t) * u0[ix] + t * u1[ix];
            let v = u.at(it, ix);
            rep.c0_lower = rep.c0_lower.min(v - (lin + a * t * (t - 1.0)));
            rep.c0_upper = rep.c0_upper.min(lin - v);
            let ut = if it == 0 {
                (-3.0 * u.at(0, ix) + 4.0 * u.at(1, ix) - u.at(2, ix)) / (2.0 * dt)
            } else if it == nt {
                (3.0 * u.at(nt, ix) - 4.0 * u.at(nt - 1, ix) + u.at(nt - 2, ix)) / (2.0 * dt)
            } else {
                (u.at(it + 1, ix) - u.at(it - 1, ix)) / (2.0 * dt)
            };
            let du = u1[ix] - u0[ix];
            rep.ut_lower = rep.ut_lower.min(ut - (du - a));
            rep.ut_upper = rep.ut_upper.min(du + a - ut);
        }
    }
    rep.gamma3 = grid::admissibility(&grid::differentiate(u, bg)?).gamma3_min_slack();
    rep.passed = [rep.c0_lower, rep.c0_upper, rep.ut_lower, rep.ut_upper, rep.gamma3]
        .iter()
        .all(|&v| v >= -rep.tolerance);
    Ok(rep)
}

/// Defects of the linearization identities at a converged solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearizationReport {
    /// `max |ℒ_F(t²) − 2σ_2(A_u)| / max |2σ_2(A_u)|`.
    pub t_squared: f64,
    /// `max |ℒ_F(u_t) − ∂_t F|` over levels `2..=nt−2`.
    pub u_t: f64,
    /// The same defect on the grid with every other time level, divided by 4.
    pub u_t_estimate: f64,
    /// `max |ℒ_F(u_t²) − 2u_t ∂_t F − 2F u_tt|`.
    pub u_t_squared: f64,
    /// The same defect on the grid coarsened in time and space, divided by 4.
    pub u_t_squared_estimate: f64,
    /// `max |ℒ_F v − (F(u+εv) − F(u−εv))/2ε| / max |ℒ_F v|` for a random `v`.
    pub directional: f64,
    /// Smallest `Q_u(Dv, Dv) / |Dv|²` over interior points for a random `v`.
    pub q_min: f64,
}

impl LinearizationReport {
    /// Truncation-limited identities hold within `factor` times their
    /// estimate, with an absolute floor `floor` for roundoff-level defects.
    pub fn within_truncation(&self, factor: f64, floor: f64) -> bool {
        self.u_t <= (factor * self.u_t_estimate).max(floor)
            && self.u_t_squared <= (factor * self.u_t_squared_estimate).max(floor)
    }
}

/// `∂_t u` with central differences inside and second-order one-sided
/// differences on the boundary slices.
pub fn time_derivative_full(u: &GridField) -> GridField {
    let mut out = grid::time_derivative(u);
    let ns = u.spatial_len();
    let (nt, dt) = (u.nt, u.dt());
    for ix in 0..ns {
        out.values[ix] = (-3.0 * u.at(0, ix) + 4.0 * u.at(1, ix) - u.at(2, ix)) / (2.0 * dt);
        out.values[nt * ns + ix] = (3.0 * u.at(nt, ix) - 4.0 * u.at(nt - 1, ix) + u.at(nt - 2, ix)) / (2.0 * dt);
    }
    out
}

/// Keeps every other time level and, if `space` is set, every other point
/// in each spatial direction.
pub fn coarsen(u: &GridField, space: bool) -> Result<GridField> {
    if u.nt % 2 != 0 || (space && u.nx % 2 != 0) {
        return arg("coarsening needs even grid sizes");
    }
    let step = if space { 2 } else { 1 };
    let nx = u.nx / step;
    let coarse = Lattice::new(nx, u.d, 1.0);
    let mut out = GridField::zeros(u.nt / 2, nx, u.d);
    let ns = coarse.len();
    for it in 0..=out.nt {
        for ix in 0..ns {
            let mi = coarse.multi_index(ix);
            let fi = mi.iter().fold(0, |acc, &m| acc * u.nx + m * step);
            out.values[it * ns + ix] = u.at(2 * it, fi);
        }
    }
    Ok(out)
}

fn ut_defect(u: &GridField, bg: &Background) -> Result<f64> {
    let ut = time_derivative_full(u);
    let l = apply_linearization(u, bg, &ut)?;
    let ft = grid::time_derivative(&operator_field(u, bg)?);
    let ns = u.spatial_len();
    let mut worst = 0.0f64;
    for it in 2..=u.nt - 2 {
        for ix in 0..ns {
            worst = worst.max((l.at(it, ix) - ft.at(it, ix)).abs());
        }
    }
    Ok(worst)
}

fn ut_squared_defect(u: &GridField, bg: &Background) -> Result<f64> {
    let ut = time_derivative_full(u);
    let l = apply_linearization(u, bg, &ut.map(|v| v * v))?;
    let fv = operator_field(u, bg)?;
    let ft = grid::time_derivative(&fv);
    let jf = grid::differentiate(u, bg)?;
    let ns = u.spatial_len();
    let mut worst = 0.0f64;
    for it in 2..=u.nt - 2 {
        for ix in 0..ns {
            let j = jf.at(it, ix);
            let want = 2.0 * ut.at(it, ix) * ft.at(it, ix) + 2.0 * fv.at(it, ix) * j.u_tt;
            worst = worst.max((l.at(it, ix) - want).abs());
        }
    }
    Ok(worst)
}

/// Random field with zero boundary slices, uniform in `[−1, 1]` inside.
pub fn random_interior_field(nt: usize, nx: usize, d: usize, seed: u64) -> GridField {
    use rand::Rng;
    let mut rng = crate::certify::trial_rng(seed, 0);
    let mut v = GridField::zeros(nt, nx, d);
    let ns = v.spatial_len();
    for x in &mut v.values[ns..nt * ns] {
        *x = rng.random_range(-1.0..1.0);
    }
    v
}

/// Evaluates every linearization identity at `u` (which should be a
/// converged solution).  Needs even `nt` and `nx` with `nt ≥ 8`.
pub fn linearization_report(u: &GridField, bg: &Background, seed: u64) -> Result<LinearizationReport> {
    if u.nt < 8 {
        return arg("linearization report needs nt ≥ 8");
    }
    let jf = grid::differentiate(u, bg)?;
    require_admissible(&jf)?;

    let t2 = GridField::from_fn(u.nt, u.nx, u.d, bg.l, |t, _| t * t);
    let l = apply_linearization(u, bg, &t2)?;
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for (idx, j) in jf.jets.iter().enumerate() {
        let (it, ix) = jf.location(idx);
        let want = 2.0 * symfun::sigma2(&j.a_u);
        err = err.max((l.at(it, ix) - want).abs());
        scale = scale.max(want.abs());
    }

    let v = random_interior_field(u.nt, u.nx, u.d, seed);
    let lv = apply_linearization(u, bg, &v)?;
    let eps = 1e-6;
    let fp = operator_field(&u.lin_comb(1.0, &v, eps), bg)?;
    let fm = operator_field(&u.lin_comb(1.0, &v, -eps), bg)?;
    let ns = u.spatial_len();
    let (mut derr, mut dscale) = (0.0f64, 0.0f64);
    for i in ns..u.nt * ns {
        derr = derr.max(((fp.values[i] - fm.values[i]) / (2.0 * eps) - lv.values[i]).abs());
        dscale = dscale.max(lv.values[i].abs());
    }

    let q = q_form(u, bg, &v)?;
    let lat = Lattice::new(u.nx, u.d, bg.l);
    let mut q_min = f64::INFINITY;
    for it in 1..u.nt {
        for ix in 0..ns {
            let wt = (v.at(it + 1, ix) - v.at(it - 1, ix)) / (2.0 * u.dt());
            let wx = lat.gradient(v.slice(it), ix, bg.n);
            let w2 = wt * wt + wx.iter().map(|x| x * x).sum::<f64>();
            if w2 > 0.0 {
                q_min = q_min.min(q.at(it, ix) / w2);
            }
        }
    }

    Ok(LinearizationReport {
        t_squared: err / scale,
        u_t: ut_defect(u, bg)?,
        u_t_estimate: ut_defect(&coarsen(u, false)?, bg)? / 4.0,
        u_t_squared: ut_squared_defect(u, bg)?,
        u_t_squared_estimate: ut_squared_defect(&coarsen(u, true)?, bg)? / 4.0,
        directional: derr / dscale,
        q_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn homogeneous(nt: usize, nx: usize, c: f64) -> (Background, Vec<f64>, GridField) {
        let bg = Background::half_identity(4, 1).unwrap();
        let u0 = vec![c; nx];
        let f = GridField::from_fn(nt, nx, 1, bg.l, |_, _| 1.0);
        (bg, u0, f)
    }

    #[test]
    fn barrier_homogeneous() {
        let (bg, u0, f) = homogeneous(16, 8, 0.2);
        let (w, a) = initial_barrier(&u0, &u0, &bg, &f, 1.0).unwrap();
        assert_eq!(a, 1.0);
        let fw = operator_field(&w, &bg).unwrap();
        assert!((fw.at(5, 3) - 3.0).abs() < 1e-12);
        let (_, a) = initial_barrier(&u0, &u0, &bg, &f, 1e-3).unwrap();
        assert_eq!(a, 1.0);
    }

    #[test]
    fn barrier_needs_larger_a_for_large_s() {
        let (bg, u0, f) = homogeneous(16, 8, 0.0);
        let (_, a) = initial_barrier(&u0, &u0, &bg, &f, 5.0).unwrap();
        assert_eq!(a, 4.0);
    }

    #[test]
    fn linearization_of_t_squared() {
        let bg = Background::half_identity(4, 1).unwrap();
        let u = GridField::from_fn(16, 8, 1, bg.l, |t, x| 0.05 * x[0].sin() + 0.4 * t * (t - 1.0));
        let t2 = GridField::from_fn(16, 8, 1, bg.l, |t, _| t * t);
        let l = apply_linearization(&u, &bg, &t2).unwrap();
        let jf = grid::differentiate(&u, &bg).unwrap();
        for (idx, j) in jf.jets.iter().enumerate() {
            let (it, ix) = jf.location(idx);
            let want = 2.0 * symfun::sigma2(&j.a_u);
            assert!((l.at(it, ix) - want).abs() <= 1e-9 * want.abs());
        }
    }

    #[test]
    fn linearization_matches_fd_in_two_dimensions() {
        let bg = Background::half_identity(4, 2).unwrap();
        let u = GridField::from_fn(8, 6, 2, bg.l, |t, x| {
            0.05 * x[0].sin() * x[1].cos() + 0.5 * t * (t - 1.0) + 0.02 * t * x[1].sin()
        });
        let v = GridField::from_fn(8, 6, 2, bg.l, |t, x| (3.0 * t + x[0]).sin() * (x[1] - t).cos());
        let l = apply_linearization(&u, &bg, &v).unwrap();
        let eps = 1e-6;
        let fp = operator_field(&u.lin_comb(1.0, &v, eps), &bg).unwrap();
        let fm = operator_field(&u.lin_comb(1.0, &v, -eps), &bg).unwrap();
        let ns = u.spatial_len();
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for i in ns..u.nt * ns {
            let fd = (fp.values[i] - fm.values[i]) / (2.0 * eps);
            err = err.max((fd - l.values[i]).abs());
            scale = scale.max(l.values[i].abs());
        }
        assert!(err <= 1e-6 * scale, "{err} vs {scale}");
    }

    #[test]
    fn linearization_rejects_inadmissible() {
        let bg = Background::half_identity(4, 1).unwrap();
        let u = GridField::from_fn(8, 8, 1, bg.l, |t, _| -t * (t - 1.0));
        assert!(matches!(apply_linearization(&u, &bg, &u), Err(Error::Linearization { .. })));
    }

    #[test]
    fn homogeneous_solution_is_exact() {
        let (bg, u0, f) = homogeneous(32, 8, 0.3);
        let cfg = SolverConfig::default();
        let (u, trace) = solve_perturbed(&u0, &u0, &bg, &f, 1.0, &cfg).unwrap();
        let exact = GridField::from_fn(32, 8, 1, bg.l, |t, _| 0.3 + t * (t - 1.0) / 3.0);
        assert!(u.lin_comb(1.0, &exact, -1.0).sup_norm() <= 1e-10);
        assert!(trace.max_stage_iterations() <= 6);
        for st in &trace.stages {
            assert!(st.residual_history.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn exact_start_needs_no_iterations() {
        let (bg, _, f) = homogeneous(16, 8, 0.3);
        let exact = GridField::from_fn(16, 8, 1, bg.l, |t, _| 0.3 + t * (t - 1.0) / 3.0);
        let (_, st) = newton_stage(&exact, &bg, &f, &SolverConfig::default()).unwrap();
        assert!(st.iterations() <= 1);
    }

    #[test]
    fn scaled_target_scales_parabola() {
        let (bg, _, f) = homogeneous(16, 8, 0.0);
        let start = GridField::from_fn(16, 8, 1, bg.l, |t, _| t * (t - 1.0) / 3.0);
        let lam = 1.4;
        let (u, _) = newton_stage(&start, &bg, &f.map(|v| lam * v), &SolverConfig::default()).unwrap();
        let want = GridField::from_fn(16, 8, 1, bg.l, |t, _| lam * t * (t - 1.0) / 3.0);
        assert!(u.lin_comb(1.0, &want, -1.0).sup_norm() < 1e-10);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.s_schedule = vec![1.0, 1.0];
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig {
            damping_shrink: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
    fn wavy(nt: usize, nx: usize) -> (Background, Vec<f64>, Vec<f64>, GridField) {
        let bg = Background::half_identity(4, 1).unwrap();
        let lat = Lattice::new(nx, 1, bg.l);
        let u0: Vec<f64> = (0..nx).map(|i| 0.05 * lat.coords(i)[0].sin()).collect();
        let u1: Vec<f64> = (0..nx).map(|i| 0.1 + 0.05 * lat.coords(i)[0].cos()).collect();
        let f = GridField::from_fn(nt, nx, 1, bg.l, |t, x| 1.0 + 0.2 * t * x[0].cos());
        (bg, u0, u1, f)
    }

    #[test]
    fn nonhomogeneous_solution_diagnostics() {
        let (bg, u0, u1, f) = wavy(32, 16);
        let cfg = SolverConfig::default();
        let (u, trace) = solve_perturbed(&u0, &u1, &bg, &f, 0.5, &cfg).unwrap();
        let res = grid::residual(&u, &bg, 0.5, &f).unwrap();
        assert!(res.sup_norm() < 1e-9);
        for st in trace.stages.iter().filter(|s| s.converged) {
            assert!(st.residual_history.windows(2).all(|w| w[1] < w[0]));
        }
        let rep = linearization_report(&u, &bg, 3).unwrap();
        assert!(rep.t_squared < 1e-9, "{rep:?}");
        assert!(rep.directional < 1e-5, "{rep:?}");
        assert!(rep.q_min > 0.0, "{rep:?}");
        assert!(rep.within_truncation(5.0, 1e-9), "{rep:?}");
        let b = verify_bounds(&u, &u0, &u1, &trace, &bg).unwrap();
        assert!(b.passed, "{b:?}");
    }

    #[test]
    fn shifted_data_gives_shifted_solution() {
        let (bg, u0, u1, f) = wavy(16, 8);
        let cfg = SolverConfig::default();
        let (u, _) = solve_perturbed(&u0, &u1, &bg, &f, 1.0, &cfg).unwrap();
        let (c1, c2) = (0.3, -0.2);
        let v0: Vec<f64> = u0.iter().map(|v| v + c2).collect();
        let v1: Vec<f64> = u1.iter().map(|v| v + c1 + c2).collect();
        let (v, _) = solve_perturbed(&v0, &v1, &bg, &f, 1.0, &cfg).unwrap();
        let shift = GridField::from_fn(16, 8, 1, bg.l, |t, _| c1 * t + c2);
        assert!(v.lin_comb(1.0, &u, -1.0).lin_comb(1.0, &shift, -1.0).sup_norm() < 1e-9);
    }

    #[test]
    fn different_start_same_solution_and_comparison() {
        let (bg, u0, u1, f) = wavy(16, 8);
        let cfg = SolverConfig::default();
        let (u, _) = solve_perturbed(&u0, &u1, &bg, &f, 1.0, &cfg).unwrap();
        let lin = GridField::linear_interpolation(16, &u0, &u1, 8, 1);
        let start = barrier_field(&lin, 8.0);
        let mut trace = SolverTrace::default();
        let f_start = operator_field(&start, &bg).unwrap();
        let w = continuation(&start, &f_start, &f, &bg, &cfg, &mut trace).unwrap();
        assert!(w.lin_comb(1.0, &u, -1.0).sup_norm() < 1e-8);

        let (big, _) = solve_perturbed(&u0, &u1, &bg, &f.map(|v| 1.5 * v), 1.0, &cfg).unwrap();
        assert!(big.values.iter().zip(&u.values).all(|(b, s)| *b <= s + 1e-8));
    }

    #[test]
    fn homogeneous_geodesic_closed_form() {
        let bg = Background::half_identity(4, 1).unwrap();
        let u0 = vec![0.2; 4];
        let cfg = SolverConfig {
            s_schedule: vec![1.0, 0.5, 0.25, 0.125],
            ..Default::default()
        };
        let path = approximate_geodesic(&u0, &u0, &bg, 16, 4, &cfg).unwrap();
        assert!(path.completed);
        for p in &path.points {
            let exact = GridField::from_fn(16, 4, 1, bg.l, |t, _| 0.2 + p.s / 3.0 * t * (t - 1.0));
            assert!(p.u.lin_comb(1.0, &exact, -1.0).sup_norm() < 1e-10);
            let px = p.trace.final_proxies().unwrap();
            assert!((px.max_u_tt - 2.0 * p.s / 3.0).abs() < 1e-9);
            let b = verify_bounds(&p.u, &u0, &u0, &p.trace, &bg).unwrap();
            assert!(b.passed && b.c0_upper >= 0.0);
        }
    }

    #[test]
    fn coarsening_keeps_even_points() {
        let u = GridField::from_fn(8, 4, 2, 1.0, |t, x| t + 10.0 * x[0] + 100.0 * x[1]);
        let c = coarsen(&u, true).unwrap();
        let want = GridField::from_fn(4, 2, 2, 1.0, |t, x| t + 10.0 * x[0] + 100.0 * x[1]);
        assert!(c.lin_comb(1.0, &want, -1.0).sup_norm() < 1e-12);
        assert!(coarsen(&GridField::zeros(7, 4, 1), false).is_err());
    }
}
