//! End-to-end acceptance run: twelve criteria, one PASS/FAIL line each.
//! Exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::time::Instant;

use schouten_core::certify::{self, SampleSpec};
use schouten_core::functional;
use schouten_core::grid::{self, Background, GridField, Lattice};
use schouten_core::solver::{self, SolverConfig};
use schouten_core::Result;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn identities() -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut eig = 0.0f64;
    for n in 3..=6 {
        let rep = certify::identity_suite(n, 1000, 11 + n as u64)?;
        worst = worst.max(rep.max_defect());
        eig = eig.max(rep.recursion_vs_eigen);
    }
    outcome(
        worst <= 1e-10,
        format!("max identity defect {worst:.2e} over n = 3..6; recursion vs eigen {eig:.2e}"),
    )
}

fn log_concavity() -> Result<Outcome> {
    let (mid, _) = certify::concavity_midpoint_suite(&SampleSpec::new(4, 2, 100_000, 21), 1e-9)?;
    let spec = SampleSpec::new(4, 2, 1000, 22).with_interior_margin(0.05);
    let (hess, _) = certify::concavity_hessian_suite(&spec, 1e-6)?;
    outcome(
        mid.passed() && hess.passed(),
        format!(
            "midpoint min defect {:.2e} ({} valid); Hessian max eigenvalue {:.2e} ({} valid)",
            mid.worst_defect, mid.valid_trials, -hess.worst_defect, hess.valid_trials
        ),
    )
}

fn quotient_convexity() -> Result<Outcome> {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in 3..=5 {
        let spec = SampleSpec::new(n, 2, 10_000, 30 + n as u64).with_interior_margin(0.05);
        let (hess, _) = certify::convexity_hessian_suite(&spec, 1e-6)?;
        let (mid, _) = certify::convexity_midpoint_suite(&SampleSpec::new(n, 2, 100_000, 40 + n as u64), 1e-9)?;
        ok &= hess.passed() && mid.passed();
        parts.push(format!("n={n}: min eig {:.2e}, midpoint {:.2e}", hess.worst_defect, mid.worst_defect));
    }
    outcome(ok, parts.join("; "))
}

fn mixed_bounds() -> Result<Outcome> {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in 3..=6 {
        let (rep, _) = certify::mixed_bounds_suite(&SampleSpec::new(n, 2, 10_000, 50 + n as u64), 1e-10)?;
        ok &= rep.passed();
        parts.push(format!("n={n}: {:.2e}", rep.worst_defect));
    }
    outcome(ok, format!("min slack {}", parts.join(", ")))
}

fn positivity() -> Result<Outcome> {
    let (four, _) = certify::positivity_suite(&SampleSpec::new(4, 2, 10_000, 61), 1e-10)?;
    let (five, _) = certify::positivity_suite(&SampleSpec::new(5, 2, 10_000, 62), 1e-10)?;
    outcome(
        four.passed() && five.passed(),
        format!("n=4 min slack {:.2e}; n=5 min slack {:.2e}", four.worst_defect, five.worst_defect),
    )
}

fn gradient() -> Result<Outcome> {
    let mut ok = true;
    let mut worst = 0.0f64;
    for n in 3..=5 {
        let (rep, _) = certify::grad_suite(&SampleSpec::new(n, 2, 1000, 70 + n as u64), 1e-6)?;
        ok &= rep.passed();
        worst = worst.max(-rep.worst_defect);
    }
    outcome(ok, format!("max relative error {worst:.2e} over n = 3..5"))
}

fn homogeneous() -> Result<Outcome> {
    let bg = Background::half_identity(4, 1)?;
    let (nt, nx, c) = (64, 16, 0.3);
    let u0 = vec![c; nx];
    let f = GridField::from_fn(nt, nx, 1, bg.l, |_, _| 1.0);
    let mut err = 0.0f64;
    let mut iters = 0;
    for s in [1.0, 0.5, 0.25] {
        let (u, trace) = solver::solve_perturbed(&u0, &u0, &bg, &f, s, &SolverConfig::default())?;
        let exact = GridField::from_fn(nt, nx, 1, bg.l, |t, _| c + s / 3.0 * t * (t - 1.0));
        err = err.max(u.lin_comb(1.0, &exact, -1.0).sup_norm());
        iters = iters.max(trace.max_stage_iterations());
    }
    outcome(
        err <= 1e-10 && iters <= 6,
        format!("sup error {err:.2e}; max Newton iterations per stage {iters}"),
    )
}

/// Boundary data and right-hand sides used by the nonhomogeneous criteria.
fn wavy(kind: usize, nt: usize, nx: usize) -> Result<(Background, Vec<f64>, Vec<f64>, GridField)> {
    let bg = Background::half_identity(4, 1)?;
    let lat = Lattice::new(nx, 1, bg.l);
    let x: Vec<f64> = (0..nx).map(|i| lat.coords(i)[0]).collect();
    let (u0, u1, f) = match kind {
        0 => (
            x.iter().map(|x| 0.05 * x.sin()).collect(),
            x.iter().map(|x| 0.05 * x.cos()).collect(),
            GridField::from_fn(nt, nx, 1, bg.l, |_, _| 1.0),
        ),
        1 => (
            x.iter().map(|x| 0.05 * x.sin()).collect(),
            x.iter().map(|x| 0.2 + 0.05 * (2.0 * x).sin()).collect(),
            GridField::from_fn(nt, nx, 1, bg.l, |t, x| 1.0 + 0.3 * t * x[0].cos()),
        ),
        _ => {
            let v: Vec<f64> = x.iter().map(|x| 0.05 * x.cos()).collect();
            (v.clone(), v, GridField::from_fn(nt, nx, 1, bg.l, |t, x| 1.0 + 0.2 * (x[0] + t).sin()))
        }
    };
    Ok((bg, u0, u1, f))
}

fn linearization() -> Result<Outcome> {
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in 0..2 {
        let (bg, u0, u1, f) = wavy(kind, 64, 16)?;
        let (u, _) = solver::solve_perturbed(&u0, &u1, &bg, &f, 1.0, &SolverConfig::default())?;
        let rep = solver::linearization_report(&u, &bg, 80 + kind as u64)?;
        ok &= rep.t_squared <= 1e-9 && rep.directional <= 1e-5 && rep.q_min > 0.0 && rep.within_truncation(5.0, 1e-12);
        parts.push(format!(
            "case {kind}: t² {:.1e}, u_t {:.1e} (est {:.1e}), u_t² {:.1e} (est {:.1e}), FD {:.1e}",
            rep.t_squared, rep.u_t, rep.u_t_estimate, rep.u_t_squared, rep.u_t_squared_estimate, rep.directional
        ));
    }
    outcome(ok, parts.join("; "))
}

fn order_relations() -> Result<Outcome> {
    let cfg = SolverConfig::default();
    let (nt, nx) = (32, 16);
    let mut worst_bound = f64::INFINITY;
    let mut worst_cmp = f64::INFINITY;
    let mut all = true;
    for kind in 0..3 {
        let (bg, u0, u1, f) = wavy(kind, nt, nx)?;
        let (small, ts) = solver::solve_perturbed(&u0, &u1, &bg, &f, 1.0, &cfg)?;
        let (large, tl) = solver::solve_perturbed(&u0, &u1, &bg, &f.map(|v| 1.5 * v), 1.0, &cfg)?;
        for (u, t) in [(&small, &ts), (&large, &tl)] {
            let b = solver::verify_bounds(u, &u0, &u1, t, &bg)?;
            all &= b.passed;
            worst_bound = worst_bound.min([b.c0_lower, b.c0_upper, b.ut_lower, b.ut_upper, b.gamma3].into_iter().fold(f64::INFINITY, f64::min));
        }
        // Larger right-hand side, smaller solution.
        let cmp = small.values.iter().zip(&large.values).map(|(s, l)| s - l).fold(f64::INFINITY, f64::min);
        worst_cmp = worst_cmp.min(cmp);
    }
    let (bg, u0, u1, _) = wavy(0, nt, nx)?;
    let scfg = SolverConfig {
        s_schedule: vec![1.0, 0.5, 0.25, 0.125],
        ..cfg
    };
    let path = solver::approximate_geodesic(&u0, &u1, &bg, nt, nx, &scfg)?;
    let mut worst_s = f64::INFINITY;
    for w in path.points.windows(2) {
        let d = w[1].u.values.iter().zip(&w[0].u.values).map(|(lo, hi)| lo - hi).fold(f64::INFINITY, f64::min);
        worst_s = worst_s.min(d);
        let b = solver::verify_bounds(&w[1].u, &u0, &u1, &w[1].trace, &bg)?;
        all &= b.passed;
    }
    let passed = all && path.completed && worst_cmp >= -1e-8 && worst_s >= -1e-8;
    outcome(
        passed,
        format!(
            "6 instances: worst bound slack {worst_bound:.2e}; f-comparison slack {worst_cmp:.2e}; s-monotonicity slack {worst_s:.2e}"
        ),
    )
}

fn plateau() -> Result<Outcome> {
    let (bg, u0, u1, _) = wavy(0, 64, 16)?;
    let path = solver::approximate_geodesic(&u0, &u1, &bg, 64, 16, &SolverConfig::default())?;
    let proxies: Vec<(f64, solver::Proxies)> = path
        .points
        .iter()
        .filter_map(|p| p.trace.final_proxies().map(|x| (p.s, x.clone())))
        .collect();
    let Some((_, r)) = proxies.iter().find(|(s, _)| *s == 0.25) else {
        return outcome(false, "schedule stopped before s = 1/4".into());
    };
    let mut ratio = 0.0f64;
    for (_, p) in proxies.iter().filter(|(s, _)| *s < 0.25) {
        ratio = ratio
            .max(p.max_u_tt / r.max_u_tt)
            .max(p.max_hess_u / r.max_hess_u)
            .max(p.max_grad_u_t / r.max_grad_u_t);
    }
    let last = proxies.last().map(|x| x.0).unwrap_or(f64::NAN);
    outcome(
        path.completed && ratio <= 3.0,
        format!("reached s = {last}; worst proxy ratio to s = 1/4: {ratio:.3}"),
    )
}

fn order(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn geometry() -> Result<Outcome> {
    let g3 = Background::geometric(3, 2.0 * PI)?;
    let div: Vec<f64> = [8, 16, 32]
        .iter()
        .map(|&nx| {
            let u = GridField::from_fn(1, nx, 3, g3.l, |_, x| {
                0.15 * x[0].sin() * x[1].cos() + 0.1 * x[2].sin() + 0.05 * (x[0] + x[2]).cos()
            });
            grid::divergence_defect(&u, 0, &g3).map(|r| r.defect)
        })
        .collect::<Result<_>>()?;
    let g4 = Background::geometric(4, 2.0 * PI)?;
    let tot: Vec<f64> = [6, 12, 24]
        .iter()
        .map(|&nx| {
            let u = GridField::from_fn(1, nx, 4, g4.l, |_, x| {
                0.2 * x[0].sin() * x[1].cos() + 0.1 * (x[2] - x[3]).sin() + 0.05 * (x[0] + x[3]).cos()
            });
            grid::total_sigma2(&u, 0, &g4).map(f64::abs)
        })
        .collect::<Result<_>>()?;
    let (od, ot) = (order(&div), order(&tot));

    let kappa = functional::calibrate_kappa()?;
    let nx = 24;
    let lat = Lattice::new(nx, 4, g4.l);
    let u: Vec<f64> = (0..lat.len())
        .map(|i| {
            let x = lat.coords(i);
            0.15 * (x[0].sin() + 0.5 * x[1].cos()).exp() * (1.0 + 0.3 * x[2].cos()) + 0.1 * (x[3] - x[0]).sin()
        })
        .collect();
    let v: Vec<f64> = (0..lat.len())
        .map(|i| {
            let x = lat.coords(i);
            0.2 * (x[1] + x[2]).cos() / (1.5 + x[3].sin())
        })
        .collect();
    let fv = functional::first_variation_check(&u, &v, &g4, nx, kappa)?;
    let kappa_case = -fv.fd / fv.pairing;
    let stable = ((kappa_case - kappa) / kappa).abs();

    let passed = od.iter().chain(&ot).all(|&p| p >= 1.5) && fv.defect <= 1e-4 && stable <= 1e-6;
    outcome(
        passed,
        format!(
            "divergence orders {od:.2?}; total σ_2 orders {ot:.2?}; first variation defect {:.2e} (κ = {kappa:.8}, case κ drift {stable:.1e})",
            fv.defect
        ),
    )
}

fn conjecture() -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut deterministic = true;
    for (n, k) in [(5, 3), (6, 3), (6, 4)] {
        let spec = SampleSpec::new(n, k, 10_000, 90 + n as u64 + k as u64);
        let (a, _) = certify::conjecture_search(&spec)?;
        let (b, _) = certify::conjecture_search(&spec)?;
        deterministic &= serde_json::to_string(&a).ok() == serde_json::to_string(&b).ok();
        parts.push(format!(
            "H_{k} n={n}: worst {:.2e}, {} valid, {} candidates",
            a.worst_defect,
            a.valid_trials,
            a.candidates.len()
        ));
    }
    outcome(deterministic, parts.join("; "))
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome>); 12] = [
        ("polynomial identities", identities),
        ("log F_2 concavity", log_concavity),
        ("H_2 convexity", quotient_convexity),
        ("mixed bounds on Γ_2⁺ pairs", mixed_bounds),
        ("positivity of the T_1 pairing", positivity),
        ("closed-form gradient", gradient),
        ("homogeneous solver exactness", homogeneous),
        ("linearization identities", linearization),
        ("order relations", order_relations),
        ("C^{1,1} plateau", plateau),
        ("geometry identities", geometry),
        ("conjecture search", conjecture),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (passed, detail) = match run() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failures += 1;
        }
        println!(
            "criterion {:02} {:<32} {} ({:.1} s) {}",
            i + 1,
            name,
            if passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            detail
        );
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
