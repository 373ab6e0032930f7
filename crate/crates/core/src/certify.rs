//! Sampling-based certification of the concavity and convexity statements
//! for `log F_2`, `H_k` and the Lorentz form, exact checks of the algebraic
//! identities, and a reporting-only search over the open `H_k` convexity
//! question for `3 ≤ k ≤ n−1`.
//!
//! Every trial draws from its own ChaCha stream `(seed, trial)`, trials run as
//! a parallel map and are reduced in trial order, so reports are bit-identical
//! for a fixed [`SampleSpec`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{arg, Error, Result};
use crate::gsop::{self, ExtendedMatrix};
use crate::symfun::{self, elementary_symmetric, SymMatrix};

/// Rejection budget for cone sampling.
pub const SAMPLING_BUDGET: usize = 10_000;

/// Sampling parameters shared by all suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSpec {
    pub n: usize,
    pub k: usize,
    pub trials: usize,
    pub seed: u64,
    /// Spread of the sampled eigenvalues.
    pub eigen_scale: f64,
    /// Finite-difference step for Hessians, relative to the point scale.
    pub step_h: f64,
    /// Lower bound on the scale-free cone margin
    /// `min_j σ_j(λ)/σ_j(|λ|)` and on `F/(r00 σ_k)`.  Zero admits samples
    /// arbitrarily close to the boundary; finite-difference Hessian suites
    /// need a positive value.
    pub interior_margin: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            n: 4,
            k: 2,
            trials: 1000,
            seed: 0,
            eigen_scale: 1.0,
            step_h: 1e-4,
            interior_margin: 0.0,
        }
    }
}

impl SampleSpec {
    pub fn new(n: usize, k: usize, trials: usize, seed: u64) -> Self {
        SampleSpec {
            n,
            k,
            trials,
            seed,
            ..Default::default()
        }
    }

    pub fn with_interior_margin(mut self, m: f64) -> Self {
        self.interior_margin = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n > 16 {
            return arg(format!("dimension {} outside [2, 16]", self.n));
        }
        if self.k == 0 || self.k > self.n {
            return arg(format!("order {} outside [1, {}]", self.k, self.n));
        }
        if self.trials == 0 {
            return arg("trials must be at least 1");
        }
        if !(self.eigen_scale > 0.0 && self.eigen_scale.is_finite()) {
            return arg("eigen_scale must be positive");
        }
        if !(1e-8..=1e-2).contains(&self.step_h) {
            return arg("step_h must lie in [1e-8, 1e-2]");
        }
        if !(0.0..1.0).contains(&self.interior_margin) {
            return arg("interior_margin must lie in [0, 1)");
        }
        Ok(())
    }
}

/// RNG stream for one trial.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * normal(rng)).collect()
}

/// Uniformly distributed unit vector.
pub fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, n, 1.0);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Random orthogonal matrix (row-major) from modified Gram-Schmidt on a
/// Gaussian matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let mut cols: Vec<Vec<f64>> = (0..n).map(|_| gaussian_vec(rng, n, 1.0)).collect();
        let mut ok = true;
        for j in 0..n {
            for i in 0..j {
                let d: f64 = cols[j].iter().zip(&cols[i]).map(|(a, b)| a * b).sum();
                let ci = cols[i].clone();
                for (x, c) in cols[j].iter_mut().zip(&ci) {
                    *x -= d * c;
                }
            }
            let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for x in cols[j].iter_mut() {
                *x /= norm;
            }
        }
        if ok {
            let mut q = vec![0.0; n * n];
            for (j, c) in cols.iter().enumerate() {
                for i in 0..n {
                    q[i * n + j] = c[i];
                }
            }
            return q;
        }
    }
}

/// `min_{j≤k} σ_j(λ)/σ_j(|λ|)`, a scale-free distance to `∂Γ_k⁺`.
pub fn normalized_margin(lams: &[f64], k: usize) -> f64 {
    let e = elementary_symmetric(lams);
    let abs: Vec<f64> = lams.iter().map(|l| l.abs()).collect();
    let ea = elementary_symmetric(&abs);
    (1..=k)
        .map(|j| if ea[j] > 0.0 { e[j] / ea[j] } else { 0.0 })
        .fold(f64::INFINITY, f64::min)
}

fn sample_eigenvalues(rng: &mut ChaCha8Rng, spec: &SampleSpec) -> Vec<f64> {
    let (n, k, s) = (spec.n, spec.k, spec.eigen_scale);
    let mode: f64 = rng.random();
    if mode < 0.35 || (k == n && mode < 0.8) {
        (0..n).map(|_| s * (0.8 * normal(rng)).exp()).collect()
    } else if mode < 0.8 {
        // One negative eigenvalue pushed towards the boundary of Γ_k⁺:
        // σ_j(rest, −m) = σ_j(rest) − m σ_{j−1}(rest) stays positive for
        // m < min_j σ_j(rest)/σ_{j−1}(rest).
        let mut lams: Vec<f64> = (0..n - 1).map(|_| s * (0.8 * normal(rng)).exp()).collect();
        let e = elementary_symmetric(&lams);
        let m_max = (1..=k).map(|j| e[j] / e[j - 1]).fold(f64::INFINITY, f64::min);
        let u: f64 = rng.random();
        let gap = 10f64.powf(-4.0 * u);
        lams.push(-(1.0 - gap) * m_max);
        lams
    } else {
        (0..n).map(|_| s * (normal(rng) + 1.0)).collect()
    }
}

/// Γ_k⁺ sample with an explicit RNG.
pub fn sample_cone_with(rng: &mut ChaCha8Rng, spec: &SampleSpec) -> Result<SymMatrix> {
    for _ in 0..SAMPLING_BUDGET {
        let lams = sample_eigenvalues(rng, spec);
        if normalized_margin(&lams, spec.k) <= spec.interior_margin {
            continue;
        }
        let q = random_orthogonal(rng, spec.n);
        let a = SymMatrix::from_diag(&lams).congruence(&transpose(&q, spec.n));
        if symfun::cone_membership(&a, spec.k)?.in_cone() {
            return Ok(a);
        }
    }
    Err(Error::Sampling {
        attempts: SAMPLING_BUDGET,
    })
}

fn transpose(q: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = q[i * n + j];
        }
    }
    t
}

/// Seeded `Γ_k⁺` sample `Q diag(λ) Qᵀ`.
pub fn sample_cone(spec: &SampleSpec) -> Result<SymMatrix> {
    spec.validate()?;
    sample_cone_with(&mut trial_rng(spec.seed, 0), spec)
}

/// Domain sample with an explicit RNG: `r ∈ Γ_k⁺`, Gaussian `Y`, and
/// `r00 = (⟨T_{k−1}(r), Y⊗Y⟩ + δ)/σ_k(r)` so that `F_k = δ > 0`.
pub fn sample_domain_with(rng: &mut ChaCha8Rng, spec: &SampleSpec) -> Result<ExtendedMatrix> {
    let r = sample_cone_with(rng, spec)?;
    let y = gaussian_vec(rng, spec.n, spec.eigen_scale.sqrt());
    let sk = symfun::sigma(&r, spec.k)?;
    let tyy = symfun::newton_transform(&r, spec.k - 1)?.quad_form(&y);
    let base = tyy.max(sk * spec.eigen_scale);
    for _ in 0..SAMPLING_BUDGET {
        let u: f64 = rng.random();
        let delta = base * 10f64.powf(-3.0 + 3.5 * u);
        if delta / (tyy + delta) > spec.interior_margin {
            return ExtendedMatrix::new((tyy + delta) / sk, y, r);
        }
    }
    Err(Error::Sampling {
        attempts: SAMPLING_BUDGET,
    })
}

pub fn sample_domain(spec: &SampleSpec) -> Result<ExtendedMatrix> {
    spec.validate()?;
    sample_domain_with(&mut trial_rng(spec.seed, 0), spec)
}

/// Concavity defect `f((P1+P2)/2) − (f(P1)+f(P2))/2`; concavity means `d ≥ 0`.
pub fn midpoint_concavity<F>(f: F, p1: &[f64], p2: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if p1.len() != p2.len() {
        return arg("points have different lengths");
    }
    let mid: Vec<f64> = p1.iter().zip(p2).map(|(a, b)| 0.5 * (a + b)).collect();
    let f1 = f(p1)?;
    let f2 = f(p2)?;
    Ok(f(&mid)? - 0.5 * (f1 + f2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extremal {
    Min,
    Max,
}

/// Central finite-difference Hessian over flattened coordinates with
/// absolute step `h`.
pub fn fd_hessian<F>(f: &F, x: &[f64], h: f64) -> Result<SymMatrix>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let m = x.len();
    let f0 = f(x)?;
    let mut p = x.to_vec();
    let mut hess = SymMatrix::zeros(m);
    let mut fp = vec![0.0; m];
    let mut fm = vec![0.0; m];
    for i in 0..m {
        p[i] = x[i] + h;
        fp[i] = f(&p)?;
        p[i] = x[i] - h;
        fm[i] = f(&p)?;
        p[i] = x[i];
        hess.set(i, i, (fp[i] - 2.0 * f0 + fm[i]) / (h * h));
    }
    for i in 0..m {
        for j in i + 1..m {
            p[i] = x[i] + h;
            p[j] = x[j] + h;
            let fpp = f(&p)?;
            p[j] = x[j] - h;
            let fpm = f(&p)?;
            p[i] = x[i] - h;
            let fmm = f(&p)?;
            p[j] = x[j] + h;
            let fmp = f(&p)?;
            p[i] = x[i];
            p[j] = x[j];
            hess.set(i, j, (fpp - fpm - fmp + fmm) / (4.0 * h * h));
        }
    }
    Ok(hess)
}

fn extremal(h: &SymMatrix, mode: Extremal) -> f64 {
    let e = symfun::eigenvalues(h);
    match mode {
        Extremal::Min => e[0],
        Extremal::Max => e[e.len() - 1],
    }
}

/// Halvings allowed while refining the FD Hessian step.
pub const MAX_STEP_HALVINGS: usize = 8;

/// Extremal eigenvalue of the Richardson-extrapolated central-FD Hessian at
/// `x`, `(4 H(h/2) − H(h))/3`.
///
/// The initial step is `step_h·max(1, |x|∞)`, and the point must be
/// interior: `f` has to be defined at `x ± 10·step` along every coordinate.
/// The step is halved until the extrapolated eigenvalue agrees with the plain
/// one at `h/2` to within `max(tol, 10⁻³|λ|)`, at most
/// [`MAX_STEP_HALVINGS`] times; the value from the level with the smallest
/// disagreement is returned.
pub fn fd_hessian_extremal_eig<F>(f: F, x: &[f64], step_h: f64, mode: Extremal, tol: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    refined_hessian(f, x, step_h, mode, tol, false).map(|(e, _)| e)
}

/// Like [`fd_hessian_extremal_eig`] but with the stopping test relative to
/// the spectral radius `ρ`: the step is refined until the two estimates agree
/// to `max(tol·max(1, ρ), 10⁻³|λ|)`.  Returns `(λ, ρ)`.
pub fn fd_hessian_extremal_eig_scaled<F>(f: F, x: &[f64], step_h: f64, mode: Extremal, tol: f64) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    refined_hessian(f, x, step_h, mode, tol, true)
}

fn refined_hessian<F>(f: F, x: &[f64], step_h: f64, mode: Extremal, tol: f64, scaled: bool) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut h = step_h * scale;
    let mut p = x.to_vec();
    for i in 0..x.len() {
        for s in [-10.0, 10.0] {
            p[i] = x[i] + s * h;
            f(&p)?;
        }
        p[i] = x[i];
    }
    let mut coarse = fd_hessian(&f, x, h)?;
    // (gap, λ, ρ) of the best-agreeing level; once roundoff dominates the
    // gap grows again, so the last level is not necessarily the best.
    let mut best = (f64::INFINITY, f64::NAN, f64::NAN);
    for _ in 0..=MAX_STEP_HALVINGS {
        let fine = fd_hessian(&f, x, 0.5 * h)?;
        let plain = extremal(&fine, mode);
        let rich = fine.lin_comb(4.0 / 3.0, &coarse, -1.0 / 3.0);
        let e = symfun::eigenvalues(&rich);
        let rho = e[0].abs().max(e[e.len() - 1].abs());
        let lam = extremal(&rich, mode);
        let gap = (lam - plain).abs();
        if gap < best.0 {
            best = (gap, lam, rho);
        }
        let t = if scaled { tol * rho.max(1.0) } else { tol };
        if gap <= t.max(1e-3 * lam.abs()) {
            break;
        }
        coarse = fine;
        h *= 0.5;
    }
    Ok((best.1, best.2))
}

fn domain_err(detail: &str) -> Error {
    Error::Domain {
        detail: detail.into(),
        cone_margin: f64::NAN,
        f_value: f64::NAN,
    }
}

/// Unpacks upper-triangular coordinates `c` of an `n × n` symmetric matrix
/// into `(σ_1, |r|², r)`.
fn coords_sym(n: usize, c: &[f64]) -> SymMatrix {
    SymMatrix::from_coords(n, c)
}

/// `log F_2` on the coordinates of [`ExtendedMatrix::to_coords`].
pub fn log_f2_coords(n: usize, c: &[f64]) -> Result<f64> {
    let r = coords_sym(n, &c[n + 1..]);
    let s1 = r.trace();
    let s2 = symfun::sigma2(&r);
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(domain_err("r left Γ_2⁺"));
    }
    let y = &c[1..=n];
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let f = c[0] * s2 - s1 * yy + r.quad_form(y);
    if f > 0.0 {
        Ok(f.ln())
    } else {
        Err(domain_err("F_2 is not positive"))
    }
}

/// `H_k` on coordinates `(upper triangle of r, Y)`.
pub fn h_coords(n: usize, k: usize, c: &[f64]) -> Result<f64> {
    let m = SymMatrix::coord_len(n);
    let r = coords_sym(n, &c[..m]);
    let y = &c[m..];
    if k == 2 {
        let s1 = r.trace();
        let s2 = symfun::sigma2(&r);
        if !(s1 > 0.0 && s2 > 0.0) {
            return Err(domain_err("r left Γ_2⁺"));
        }
        let yy: f64 = y.iter().map(|v| v * v).sum();
        return Ok((s1 * yy - r.quad_form(y)) / s2);
    }
    gsop::h(&r, y, k)
}

fn h_point(r: &SymMatrix, y: &[f64]) -> Vec<f64> {
    let mut c = r.to_coords();
    c.extend_from_slice(y);
    c
}

/// `log(x·y − |z|²)` on `x > 0`, `xy − |z|² > 0`; point layout `(x, y, z…)`.
pub fn lorentz_log(p: &[f64]) -> Result<f64> {
    let (x, y) = (p[0], p[1]);
    let zz: f64 = p[2..].iter().map(|v| v * v).sum();
    let q = x * y - zz;
    if x > 0.0 && q > 0.0 {
        Ok(q.ln())
    } else {
        Err(domain_err("outside the Lorentz cone"))
    }
}

/// Midpoint concavity defect of the Lorentz log between two points.
pub fn verify_lorentz(p1: &[f64], p2: &[f64]) -> Result<f64> {
    midpoint_concavity(lorentz_log, p1, p2)
}

/// Defects of the two identities relating `σ_1σ̃_1` to `σ_2`, `σ̃_2`.
///
/// The second one uses `T(V, V) = σ_1 − r(V, V)`; it is skipped (reported as
/// `NaN`) unless both matrices lie in `Γ_2⁺`.
pub fn verify_product_identities(r: &SymMatrix, rt: &SymMatrix, v: &[f64]) -> Result<(f64, f64)> {
    if r.n() != rt.n() || v.len() != r.n() {
        return arg("dimension mismatch");
    }
    let (s1, t1) = (r.trace(), rt.trace());
    if !(s1 > 0.0 && t1 > 0.0) {
        return Err(domain_err("σ_1 must be positive for both matrices"));
    }
    let (s2, t2) = (symfun::sigma2(r), symfun::sigma2(rt));
    let (nr, nt) = (r.norm_sq(), rt.norm_sq());
    let lhs = s1 * t1;
    let rhs1 = s2 * t1 / s1 + t2 * s1 / t1 + 0.5 * (nr * t1 / s1 + nt * s1 / t1);
    let d1 = (lhs - rhs1).abs();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    if (vv - 1.0).abs() > 1e-12 {
        return Err(domain_err("V must be a unit vector"));
    }
    if !(s2 > 0.0 && t2 > 0.0) {
        return Ok((d1, f64::NAN));
    }
    let (r11, rt11) = (r.quad_form(v), rt.quad_form(v));
    let (tv, ttv) = (s1 - r11, t1 - rt11);
    let rhs2 = (s2 + 0.5 * (nr - r11 * r11)) * ttv / tv + (t2 + 0.5 * (nt - rt11 * rt11)) * tv / ttv + r11 * rt11;
    Ok((d1, (lhs - rhs2).abs()))
}

/// Slacks of the two one-sided bounds on `Q = σ_1σ̃_1 − (r, r̃)`:
/// `Q − σ_2 T̃(V,V)/T(V,V) − σ̃_2 T(V,W)²/(T(V,V) T̃(W,W))` and the same with
/// the roles of `r` and `r̃` exchanged.
pub fn verify_mixed_bounds(r: &SymMatrix, rt: &SymMatrix, v: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    if r.n() != rt.n() || v.len() != r.n() || w.len() != r.n() {
        return arg("dimension mismatch");
    }
    for u in [v, w] {
        let uu: f64 = u.iter().map(|x| x * x).sum();
        if (uu - 1.0).abs() > 1e-12 {
            return Err(domain_err("V and W must be unit vectors"));
        }
    }
    let (s1, t1) = (r.trace(), rt.trace());
    let (s2, t2) = (symfun::sigma2(r), symfun::sigma2(rt));
    if !(s1 > 0.0 && s2 > 0.0 && t1 > 0.0 && t2 > 0.0) {
        return Err(domain_err("both matrices must lie in Γ_2⁺"));
    }
    let q = s1 * t1 - symfun::pair_unchecked(r, rt);
    let tm = symfun::t1(r);
    let ttm = symfun::t1(rt);
    let (tvv, ttvv) = (tm.quad_form(v), ttm.quad_form(v));
    let (tww, ttww) = (tm.quad_form(w), ttm.quad_form(w));
    let (tvw, ttvw) = (tm.bilinear(v, w), ttm.bilinear(v, w));
    let slack_first = q - s2 * ttvv / tvv - t2 * tvw * tvw / (tvv * ttww);
    let slack_second = q - t2 * tvv / ttvv - s2 * ttvw * ttvw / (ttvv * tww);
    Ok((slack_first, slack_second))
}

/// `|4σ_2((r+r̃)/2) − (σ_2 + σ̃_2 + σ_1σ̃_1 − (r, r̃))|`.
pub fn verify_parallelogram(r: &SymMatrix, rt: &SymMatrix) -> Result<f64> {
    if r.n() != rt.n() {
        return arg("dimension mismatch");
    }
    let mid = r.lin_comb(0.5, rt, 0.5);
    let lhs = 4.0 * symfun::sigma2(&mid);
    let rhs = symfun::sigma2(r) + symfun::sigma2(rt) + r.trace() * rt.trace() - symfun::pair_unchecked(r, rt);
    Ok((lhs - rhs).abs())
}

/// `q = ⟨T_1(E), −v⊗v + ½|v|² I⟩ = ½(n−1)σ_1(E)|v|² − T_1(E)(v, v)`.
pub fn positivity_form(e: &SymMatrix, v: &[f64]) -> f64 {
    let n = e.n() as f64;
    let vv: f64 = v.iter().map(|x| x * x).sum();
    0.5 * (n - 1.0) * e.trace() * vv - symfun::t1(e).quad_form(v)
}

/// `q` minus its lower bound: `0` for `n = 4`, `(2/5)σ_1(E)|v|²` for `n ≥ 5`.
pub fn verify_positivity(e: &SymMatrix, v: &[f64], n: usize) -> Result<f64> {
    if e.n() != n || v.len() != n {
        return arg("dimension mismatch");
    }
    if n < 4 {
        return arg("the positivity bound is stated for n ≥ 4");
    }
    let cone = symfun::cone_membership(e, 2)?;
    if !cone.in_cone() {
        return Err(Error::Domain {
            detail: "E must lie in Γ_2⁺".into(),
            cone_margin: cone.margin,
            f_value: f64::NAN,
        });
    }
    let q = positivity_form(e, v);
    let vv: f64 = v.iter().map(|x| x * x).sum();
    let bound = if n == 4 { 0.0 } else { 0.4 * e.trace() * vv };
    Ok(q - bound)
}

/// Result of one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    /// Defect or slack; `NaN` for discarded trials.
    pub defect: f64,
    /// Scale-free cone margin of the sample.
    pub margin: f64,
}

/// A negative defect that survived the shrinking-segment stability test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub trial: usize,
    pub defect: f64,
    /// Defects at half and quarter segment length, rescaled by 4 and 16.
    pub refined: [f64; 2],
    pub witness: serde_json::Value,
}

/// Aggregate of a suite run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub suite: String,
    pub trials_run: usize,
    pub valid_trials: usize,
    pub discarded: usize,
    pub worst_defect: f64,
    pub worst_trial: Option<usize>,
    pub worst_witness: Option<serde_json::Value>,
    pub tolerance: f64,
    /// Valid trials with `defect < −tolerance`.
    pub violation_count: usize,
    pub candidates: Vec<Candidate>,
}

impl CertReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0 && self.valid_trials > 0
    }
}

/// Output of a trial closure.
pub struct Outcome {
    pub defect: f64,
    pub margin: f64,
    pub witness: Option<serde_json::Value>,
}

/// Runs `trials` independent trials and reduces them in trial order.
///
/// The closure receives the trial RNG and whether a witness is requested; the
/// witness is regenerated only for the worst trial.  Trials returning a
/// domain or sampling error are counted as discarded.
pub fn run_trials<F>(suite: &str, seed: u64, trials: usize, tol: f64, f: F) -> Result<(CertReport, Vec<TrialRecord>)>
where
    F: Fn(&mut ChaCha8Rng, bool) -> Result<Outcome> + Sync,
{
    let results: Vec<Result<Option<(f64, f64)>>> = (0..trials)
        .into_par_iter()
        .map(|t| match f(&mut trial_rng(seed, t as u64), false) {
            Ok(o) => Ok(Some((o.defect, o.margin))),
            Err(Error::Domain { .. }) | Err(Error::Sampling { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut records = Vec::with_capacity(trials);
    let mut worst = f64::INFINITY;
    let mut worst_trial = None;
    let mut valid = 0;
    let mut violations = 0;
    for (t, r) in results.into_iter().enumerate() {
        match r? {
            Some((d, m)) => {
                valid += 1;
                if d < -tol || d.is_nan() {
                    violations += 1;
                }
                if d < worst {
                    worst = d;
                    worst_trial = Some(t);
                }
                records.push(TrialRecord { trial: t, defect: d, margin: m });
            }
            None => records.push(TrialRecord {
                trial: t,
                defect: f64::NAN,
                margin: f64::NAN,
            }),
        }
    }
    let worst_witness = match worst_trial {
        Some(t) => f(&mut trial_rng(seed, t as u64), true)?.witness,
        None => None,
    };
    Ok((
        CertReport {
            suite: suite.to_string(),
            trials_run: trials,
            valid_trials: valid,
            discarded: trials - valid,
            worst_defect: if valid > 0 { worst } else { f64::NAN },
            worst_trial,
            worst_witness,
            tolerance: tol,
            violation_count: violations,
            candidates: Vec::new(),
        },
        records,
    ))
}

fn margin_of(r: &SymMatrix, k: usize) -> f64 {
    normalized_margin(&symfun::eigenvalues(r), k)
}

/// Midpoint concavity of `log F_2` over pairs of domain samples.
pub fn concavity_midpoint_suite(spec: &SampleSpec, tol: f64) -> Result<(CertReport, Vec<TrialRecord>)> {
    spec.validate()?;
    let s = SampleSpec { k: 2, ..spec.clone() };
    let n = s.n;
    run_trials("log_f2_midpoint", s.seed, s.trials, tol, |rng, want| {
        let p1 = sample_domain_with(rng, &s)?;
        let p2 = sample_domain_with(rng, &s)?;
        let (c1, c2) = (p1.to_coords(), p2.to_coords());
        let d = midpoint_concavity(|c| log_f2_coords(n, c), &c1, &c2)?;
        Ok(Outcome {
            defect: d,
            margin: margin_of(&p1.r, 2).min(margin_of(&p2.r, 2)),
            witness: want.then(|| json!({ "p1": p1, "p2": p2 })),
        })
    })
}

/// FD-Hessian maximum eigenvalue of `log F_2` at interior domain samples.
/// The reported defect is `−λ_max`.
pub fn concavity_hessian_suite(spec: &SampleSpec, tol: f64) -> Result<(CertReport, Vec<TrialRecord>)> {
    spec.validate()?;
    let s = SampleSpec { k: 2, ..spec.clone() };
    let n = s.n;
    run_trials("log_f2_hessian", s.seed, s.trials, tol, |rng, want| {
        let p = sample_domain_with(rng, &s)?;
        let c = p.to_coords();
        let e = fd_hessian_extremal_eig(|c| log_f2_coords(n, c), &c, s.step_h, Extremal::Max, tol)?;
        Ok(Outcome {
            defect: -e,
            margin: margin_of(&p.r, 2),
            witness: want.then(|| json!({ "point": p, "max_eig": e })),
        })
    })
}

/// Midpoint convexity of `H_k` over `Γ_k⁺ × ℝⁿ`.  The defect is
/// `(H(P1)+H(P2))/2 − H(mid)`, non-negative for a convex function.
pub fn convexity_midpoint_suite(spec: &SampleSpec, tol: f64) -> Result<(CertReport, Vec<TrialRecord>)> {
    spec.validate()?;
    let (n, k) = (spec.n, spec.k);
    let s = spec.clone();
    run_trials(&format!("h{k}_midpoint"), s.seed, s.trials, tol, |rng, want| {
        let (c1, c2, m) = sample_h_pair(rng, &s)?;
        let d = midpoint_concavity(|c| h_coords(n, k, c).map(|v| -v), &c1, &c2)?;
        Ok(Outcome {
            defect: d,
            margin: m,
            witness: want.then(|| h_pair_witness(n, &c1, &c2)),
        })
    })
}

fn sample_h_pair(rng: &mut ChaCha8Rng, s: &SampleSpec) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let r1 = sample_cone_with(rng, s)?;
    let y1 = gaussian_vec(rng, s.n, s.eigen_scale.sqrt());
    let r2 = sample_cone_with(rng, s)?;
    let y2 = gaussian_vec(rng, s.n, s.eigen_scale.sqrt());
    let m = margin_of(&r1, s.k).min(margin_of(&r2, s.k));
    Ok((h_point(&r1, &y1), h_point(&r2, &y2), m))
}

fn h_pair_witness(n: usize, c1: &[f64], c2: &[f64]) -> serde_json::Value {
    let m = SymMatrix::coord_len(n);
    json!({
        "r1": SymMatrix::from_coords(n, &c1[..m]), "y1": &c1[m..],
        "r2": SymMatrix::from_coords(n, &c2[..m]), "y2": &c2[m..],
    })
}

/// FD-Hessian minimum eigenvalue of `H_k` at interior samples.
///
/// `H_k` is positively homogeneous of degree one in `(r, Y)`, so its Hessian
/// always has a null direction while its spectral radius `ρ` can be large
/// near the cone boundary.  The defect is therefore `λ_min / max(1, ρ)`; the
/// raw `λ_min` and `ρ` are kept in the witness.
pub fn convexity_hessian_suite(spec: &SampleSpec, tol: f64) -> Result<(CertReport, Vec<TrialRecord>)> {
    spec.validate()?;
    let (n, k) = (spec.n, spec.k);
    let s = spec.clone();
    run_trials(&format!("h{k}_hessian"), s.seed, s.trials, tol, |rng, want| {
        let r = sample_cone_with(rng, &s)?;
        let y = gaussian_vec(rng, n, s.eigen_scale.sqrt());
        let c = h_point(&r, &y);
        let (e, rho) = fd_hessian_extremal_eig_scaled(|c| h_coords(n, k, c), &c, s.step_h, Extremal::Min, tol)?;
        Ok(Outcome {
            defect: e / rho.max(1.0),
            margin: margin_of(&r, k),
            witness: want.then(|| json!({ "r": r, "y": y, "min_eig": e, "spectral_radius": rho })),
        })
    })
}

/// Midpoint concavity of the Lorentz log `log(xy − z²)` in `(x, y, z)`.
pub fn lorentz_midpoint_suite(spec: &SampleSpec, tol: f64) -> Result<(CertReport, Vec<TrialRecord>)> {
    spec.validate()?;
    let s = spec.clone();
    run_trials("lorentz_midpoint", s.seed, s.trials, tol, |rng, want| {
        let p1 = sample_lorentz(rng, &s);
        let p2 = sample_lorentz(rng, &s);
        Ok(Outcome {
            defect: verify_lorentz(&p1, &p2)?,
            margin: lorentz_margin(&p1).min(lorentz_margin(&p2)),
            witness: want.then(|| json!({ "p1": p1, "p2": p2 })),
        })
    })
}

/// FD-Hessian maximum eigenvalue of the Lorentz log.  The spectral radius
/// `ρ` grows like `q⁻²` near the cone boundary, so the defect is
/// `−λ_max/max(1, ρ)`.
pub fn lorentz_hessian_suite(spec: &SampleSpec, tol: f64) -> Result<(CertReport, Vec<TrialRecord>)> {
    spec.validate()?;
    let s = spec.clone();
    run_trials("lorentz_hessian", s.seed, s.trials, tol, |rng, want| {
        let p = sample_lorentz(rng, &s);
        let (e, rho) = fd_hessian_extremal_eig_scaled(lorentz_log, &p, s.step_h, Extremal::Max, tol)?;
        Ok(Outcome {
            defect: -e / rho.max(1.0),
            margin: lorentz_margin(&p),
            witness: want.then(|| json!({ "point": p, "max_eig": e, "spectral_radius": rho })),
        })
    })
}

fn lorentz_margin(p: &[f64]) -> f64 {
    (p[0] * p[1] - p[2] * p[2]) / (p[0] * p[1])
}

fn sample_lorentz(rng: &mut ChaCha8Rng, s: &SampleSpec) -> Vec<f64> {
    let x = s.eigen_scale * (0.8 * normal(rng)).exp();
    let y = s.eigen_scale * (0.8 * normal(rng)).exp();
    let u: f64 = rng.random();
    let lo = s.interior_margin.max(1e-4);
    let frac = 1.0 - lo.powf(u);
    let z = (frac * x * y).sqrt() * if rng.random::<bool>() { 1.0 } else { -1.0 };
    vec![x, y, z]
}

/// Both bounds on `Q` for random `Γ_2⁺` pairs and unit vectors; the defect is
/// the smaller slack.
pub fn mixed_bounds_suite(spec: &SampleSpec, tol: f64) -> Result<(CertReport, Vec<TrialRecord>)> {
    spec.validate()?;
    let s = SampleSpec { k: 2, ..spec.clone() };
    run_trials("mixed_bounds", s.seed, s.trials, tol, |rng, want| {
        let r = sample_cone_with(rng, &s)?;
        let rt = sample_cone_with(rng, &s)?;
        let v = unit_vector(rng, s.n);
        let w = unit_vector(rng, s.n);
        let (a, b) = verify_mixed_bounds(&r, &rt, &v, &w)?;
        Ok(Outcome {
            defect: a.min(b),
            margin: margin_of(&r, 2).min(margin_of(&rt, 2)),
            witness: want.then(|| json!({ "r": r, "rt": rt, "v": v, "w": w, "slacks": [a, b] })),
        })
    })
}

/// Positivity bound on `⟨T_1(E), −v⊗v + ½|v|² I⟩` for `E ∈ Γ_2⁺`.
///
/// For `n = 4` every fourth trial uses the near-boundary family
/// `diag(1, 1, 1, −1+ε)`, `ε ∈ {10⁻¹, …, 10⁻⁴}`, conjugated by a random
/// rotation.
pub fn positivity_suite(spec: &SampleSpec, tol: f64) -> Result<(CertReport, Vec<TrialRecord>)> {
    spec.validate()?;
    let s = SampleSpec { k: 2, ..spec.clone() };
    let n = s.n;
    run_trials(&format!("positivity_n{n}"), s.seed, s.trials, tol, |rng, want| {
        let family: f64 = rng.random();
        let e = if n == 4 && family < 0.25 {
            let eps = 10f64.powi(-(rng.random_range(1..=4)));
            let q = random_orthogonal(rng, n);
            SymMatrix::from_diag(&[1.0, 1.0, 1.0, -1.0 + eps]).congruence(&transpose(&q, n))
        } else {
            sample_cone_with(rng, &s)?
        };
        let v = gaussian_vec(rng, n, 1.0);
        let slack = verify_positivity(&e, &v, n)?;
        Ok(Outcome {
            defect: slack,
            margin: margin_of(&e, 2),
            witness: want.then(|| json!({ "e": e, "v": v, "slack": slack })),
        })
    })
}

/// Closed-form `grad F_2` against central finite differences; the defect is
/// `−‖g − g_fd‖∞ / ‖g‖∞`.
pub fn grad_suite(spec: &SampleSpec, tol: f64) -> Result<(CertReport, Vec<TrialRecord>)> {
    spec.validate()?;
    let s = SampleSpec { k: 2, ..spec.clone() };
    run_trials("grad_f2", s.seed, s.trials, tol, |rng, want| {
        let p = sample_domain_with(rng, &s)?;
        let scale = p.to_coords().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let g = gsop::grad_f(&p).to_coords();
        let fd = gsop::grad_f_fd(&p, 2, 1e-6 * scale)?.to_coords();
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let rel = err / gmax.max(f64::MIN_POSITIVE);
        Ok(Outcome {
            defect: -rel,
            margin: margin_of(&p.r, 2),
            witness: want.then(|| json!({ "point": p, "relative_error": rel })),
        })
    })
}

/// Maximum defect of each polynomial identity.  The rank-one and tilde
/// defects are divided by `max(1, scale)`, where `scale` bounds the terms
/// that cancel (`σ_k` of absolute eigenvalues, and for the tilde identity
/// also `r00 σ_k(|r|) + σ_{k−1}(|r|)|Y|²`); the others are absolute.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub n: usize,
    pub trials: usize,
    pub rank_one: f64,
    pub tilde: f64,
    pub t1_pairing: f64,
    pub sigma2_formula: f64,
    pub product_identity: f64,
    pub product_identity_directional: f64,
    pub parallelogram: f64,
    /// Relative gap between the recursion and eigenvalue routes for `σ_k`.
    pub recursion_vs_eigen: f64,
}

impl IdentityReport {
    /// Largest defect among the polynomial identities.
    pub fn max_defect(&self) -> f64 {
        [
            self.rank_one,
            self.tilde,
            self.t1_pairing,
            self.sigma2_formula,
            self.product_identity,
            self.product_identity_directional,
            self.parallelogram,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// `σ_k` of the absolute eigenvalues: the size of the terms whose
/// cancellation produces `σ_k`, used to normalise identity defects.
fn abs_sigma(m: &SymMatrix, k: usize) -> f64 {
    let abs: Vec<f64> = symfun::eigenvalues(m).iter().map(|l| l.abs()).collect();
    elementary_symmetric(&abs)[k]
}

/// Runs every identity checker on `trials` random samples in dimension `n`.
pub fn identity_suite(n: usize, trials: usize, seed: u64) -> Result<IdentityReport> {
    let base = SampleSpec::new(n, 2, trials, seed);
    base.validate()?;
    let rows: Vec<Result<[f64; 8]>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let rng = &mut trial_rng(seed, t as u64);
            let mut out = [0.0f64; 8];
            let r = sample_cone_with(rng, &base)?;
            let rt = sample_cone_with(rng, &base)?;
            let x = gaussian_vec(rng, n, 1.0);
            let xx: f64 = x.iter().map(|v| v * v).sum();
            let b = r.sub(&SymMatrix::outer(&x));
            for k in 1..n {
                let (d1, d2) = symfun::rank_one_defects(&r, &x, k)?;
                let scale = abs_sigma(&r, k) + abs_sigma(&b, k);
                out[0] = out[0].max(d1 / scale.max(1.0)).max(d2 / (scale * xx).max(1.0));
            }
            for k in 1..=n {
                let spec_k = SampleSpec { k, ..base.clone() };
                let p = sample_domain_with(rng, &spec_k)?;
                let yy: f64 = p.y.iter().map(|v| v * v).sum();
                let terms = p.r00 * abs_sigma(&p.r, k) + abs_sigma(&p.r, k - 1) * yy;
                let scale = terms.max(p.r00.powi(1 - k as i32) * abs_sigma(&p.tilde(), k));
                out[1] = out[1].max(gsop::tilde_identity_defect(&p, k)? / scale.max(1.0));
            }
            let e = SymMatrix::from_fn(n, |_, _| normal(rng));
            out[2] = (symfun::pair_unchecked(&symfun::t1(&e), &e) - 2.0 * symfun::sigma2(&e)).abs();
            let s1 = e.trace();
            out[3] = (symfun::sigma(&e, 2)? - 0.5 * (s1 * s1 - e.norm_sq())).abs();
            let v = unit_vector(rng, n);
            let (d1, d2) = verify_product_identities(&r, &rt, &v)?;
            out[4] = d1;
            out[5] = d2;
            out[6] = verify_parallelogram(&e, &SymMatrix::from_fn(n, |_, _| normal(rng)))?;
            for k in 1..=n {
                let a = symfun::sigma(&e, k)?;
                let b = symfun::sigma_via_eigen(&e, k)?;
                out[7] = out[7].max((a - b).abs() / abs_sigma(&e, k).max(f64::MIN_POSITIVE));
            }
            Ok(out)
        })
        .collect();
    let mut rep = IdentityReport {
        n,
        trials,
        ..Default::default()
    };
    for row in rows {
        let o = row?;
        rep.rank_one = rep.rank_one.max(o[0]);
        rep.tilde = rep.tilde.max(o[1]);
        rep.t1_pairing = rep.t1_pairing.max(o[2]);
        rep.sigma2_formula = rep.sigma2_formula.max(o[3]);
        rep.product_identity = rep.product_identity.max(o[4]);
        rep.product_identity_directional = rep.product_identity_directional.max(o[5]);
        rep.parallelogram = rep.parallelogram.max(o[6]);
        rep.recursion_vs_eigen = rep.recursion_vs_eigen.max(o[7]);
    }
    Ok(rep)
}

/// Threshold below which a conjecture defect triggers the stability test.
pub const NEAR_VIOLATION: f64 = -1e-7;

/// Midpoint-convexity search for `H_k`, `3 ≤ k ≤ n−1`.
///
/// Reports the most negative defect without asserting a sign.  A defect below
/// `−1e-7` is re-evaluated on the segment shrunk about its midpoint by 2 and
/// 4; it becomes a candidate only if both rescaled defects (×4, ×16) stay
/// below `−0.5e-7`.
pub fn conjecture_search(spec: &SampleSpec) -> Result<(CertReport, Vec<TrialRecord>)> {
    spec.validate()?;
    let (n, k) = (spec.n, spec.k);
    if n < 4 || k < 3 || k > n - 1 {
        return arg(format!("the search covers 3 ≤ k ≤ n−1 with n ≥ 4; got n = {n}, k = {k}"));
    }
    let s = spec.clone();
    let hk = move |c: &[f64]| h_coords(n, k, c).map(|v| -v);
    let (mut report, records) = run_trials(&format!("conjecture_h{k}_n{n}"), s.seed, s.trials, -NEAR_VIOLATION, |rng, want| {
        let (c1, c2, m) = sample_h_pair(rng, &s)?;
        let d = midpoint_concavity(hk, &c1, &c2)?;
        Ok(Outcome {
            defect: d,
            margin: m,
            witness: want.then(|| h_pair_witness(n, &c1, &c2)),
        })
    })?;
    for rec in records.iter().filter(|r| r.defect < NEAR_VIOLATION) {
        let (c1, c2, _) = sample_h_pair(&mut trial_rng(s.seed, rec.trial as u64), &s)?;
        let mid: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| 0.5 * (a + b)).collect();
        let shrink = |f: f64| -> Result<f64> {
            let a: Vec<f64> = mid.iter().zip(&c1).map(|(m, p)| m + f * (p - m)).collect();
            let b: Vec<f64> = mid.iter().zip(&c2).map(|(m, p)| m + f * (p - m)).collect();
            midpoint_concavity(hk, &a, &b)
        };
        let refined = [4.0 * shrink(0.5)?, 16.0 * shrink(0.25)?];
        if refined.iter().all(|&d| d < 0.5 * NEAR_VIOLATION) {
            report.candidates.push(Candidate {
                trial: rec.trial,
                defect: rec.defect,
                refined,
                witness: h_pair_witness(n, &c1, &c2),
            });
        }
    }
    report.violation_count = report.candidates.len();
    Ok((report, records))
}
