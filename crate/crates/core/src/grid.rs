//! Space-time lattice on `[0,1] × T^d`, second-order stencils, the
//! conformally changed Schouten tensor `A_u`, and tensor identity checks on
//! the flat torus.
//!
//! Spatial points are stored lexicographically with `x₁` slowest; the
//! `d`-dimensional derivatives are embedded into `n × n` matrices whose rows
//! and columns beyond `d` vanish.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::gsop::{self, ExtendedMatrix};
use crate::symfun::{self, SymMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Flat torus with vanishing Schouten tensor; requires `d = n`.
    Geometric,
    /// Constant prescribed background `A0 ∈ Γ_2⁺` on a periodic grid.
    Synthetic,
}

/// Background geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub n: usize,
    pub d: usize,
    /// Period of every spatial coordinate.
    pub l: f64,
    pub a0: SymMatrix,
    pub mode: Mode,
}

impl Background {
    pub fn geometric(n: usize, l: f64) -> Result<Self> {
        let bg = Background {
            n,
            d: n,
            l,
            a0: SymMatrix::zeros(n),
            mode: Mode::Geometric,
        };
        bg.validate()?;
        Ok(bg)
    }

    pub fn synthetic(n: usize, d: usize, l: f64, a0: SymMatrix) -> Result<Self> {
        let bg = Background {
            n,
            d,
            l,
            a0,
            mode: Mode::Synthetic,
        };
        bg.validate()?;
        Ok(bg)
    }

    /// Synthetic background with `A0 = ½ I_n` and period `2π`.
    pub fn half_identity(n: usize, d: usize) -> Result<Self> {
        Self::synthetic(n, d, 2.0 * std::f64::consts::PI, SymMatrix::scaled_identity(n, 0.5))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n > 16 {
            return arg(format!("n = {} outside [2, 16]", self.n));
        }
        if self.d == 0 || self.d > self.n {
            return arg(format!("d = {} outside [1, n]", self.d));
        }
        if !(self.l > 0.0 && self.l.is_finite()) {
            return arg("period must be positive");
        }
        if self.a0.n() != self.n || !self.a0.is_finite() {
            return arg("A0 has the wrong dimension or non-finite entries");
        }
        match self.mode {
            Mode::Geometric => {
                if self.a0.max_abs() != 0.0 || self.d != self.n {
                    return arg("geometric mode requires A0 = 0 and d = n");
                }
            }
            Mode::Synthetic => {
                if !symfun::cone_membership(&self.a0, 2)?.in_cone() {
                    return arg("synthetic mode requires A0 in Γ_2⁺");
                }
            }
        }
        Ok(())
    }

    /// `σ_2(A0)`.
    pub fn sigma2_a0(&self) -> f64 {
        symfun::sigma2(&self.a0)
    }

    /// Ricci tensor consistent with `A0`: `(n−2) A0 + tr(A0) I`.
    pub fn ricci(&self) -> SymMatrix {
        let mut r = self.a0.scale(self.n as f64 - 2.0);
        r.shift_diag(self.a0.trace());
        r
    }

    /// Scalar curvature consistent with `A0`: `2(n−1) tr(A0)`.
    pub fn scalar_curvature(&self) -> f64 {
        2.0 * (self.n as f64 - 1.0) * self.a0.trace()
    }

    /// Spatial volume `L^d`.
    pub fn volume(&self) -> f64 {
        self.l.powi(self.d as i32)
    }
}

/// Periodic lattice with `nx` points per coordinate in `d` dimensions.
#[derive(Clone, Debug)]
pub struct Lattice {
    pub nx: usize,
    pub d: usize,
    /// Spacing `L / nx`.
    pub h: f64,
    /// `nb[ix*2d + 2j + s]` is the neighbour of `ix` in direction `j`,
    /// `s = 0` backward, `s = 1` forward.
    nb: Vec<usize>,
}

impl Lattice {
    pub fn new(nx: usize, d: usize, l: f64) -> Self {
        let len = nx.pow(d as u32);
        let mut nb = vec![0; len * 2 * d];
        for ix in 0..len {
            for j in 0..d {
                let stride = nx.pow((d - 1 - j) as u32);
                let c = (ix / stride) % nx;
                let base = ix - c * stride;
                nb[ix * 2 * d + 2 * j] = base + ((c + nx - 1) % nx) * stride;
                nb[ix * 2 * d + 2 * j + 1] = base + ((c + 1) % nx) * stride;
            }
        }
        Lattice {
            nx,
            d,
            h: l / nx as f64,
            nb,
        }
    }

    pub fn len(&self) -> usize {
        self.nx.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn back(&self, ix: usize, j: usize) -> usize {
        self.nb[ix * 2 * self.d + 2 * j]
    }

    #[inline]
    pub fn fwd(&self, ix: usize, j: usize) -> usize {
        self.nb[ix * 2 * self.d + 2 * j + 1]
    }

    /// Multi-index of a linear spatial index.
    pub fn multi_index(&self, ix: usize) -> Vec<usize> {
        (0..self.d)
            .map(|j| (ix / self.nx.pow((self.d - 1 - j) as u32)) % self.nx)
            .collect()
    }

    /// Coordinates of a linear spatial index.
    pub fn coords(&self, ix: usize) -> Vec<f64> {
        self.multi_index(ix).into_iter().map(|c| c as f64 * self.h).collect()
    }

    /// Central gradient (length `n`, zero beyond `d`).
    pub fn gradient(&self, v: &[f64], ix: usize, n: usize) -> Vec<f64> {
        let mut g = vec![0.0; n];
        for (j, gj) in g.iter_mut().enumerate().take(self.d) {
            *gj = (v[self.fwd(ix, j)] - v[self.back(ix, j)]) / (2.0 * self.h);
        }
        g
    }

    /// Central Hessian embedded in `n × n`.
    pub fn hessian(&self, v: &[f64], ix: usize, n: usize) -> SymMatrix {
        let mut hm = SymMatrix::zeros(n);
        let h2 = self.h * self.h;
        for j in 0..self.d {
            let (b, f) = (self.back(ix, j), self.fwd(ix, j));
            hm.set(j, j, (v[f] - 2.0 * v[ix] + v[b]) / h2);
            for k in j + 1..self.d {
                let pp = v[self.fwd(f, k)];
                let pm = v[self.back(f, k)];
                let mp = v[self.fwd(b, k)];
                let mm = v[self.back(b, k)];
                hm.set(j, k, (pp - pm - mp + mm) / (4.0 * h2));
            }
        }
        hm
    }
}

/// Scalar field on `(Nt+1) × Nx^d` lattice points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub nt: usize,
    pub nx: usize,
    pub d: usize,
    /// Time-major values, `values[it * Nx^d + ix]`.
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(nt: usize, nx: usize, d: usize) -> Self {
        GridField {
            nt,
            nx,
            d,
            values: vec![0.0; (nt + 1) * nx.pow(d as u32)],
        }
    }

    /// Samples `f(t, x)` at `t = it/Nt`, `x_j = c_j L/Nx`.
    pub fn from_fn(nt: usize, nx: usize, d: usize, l: f64, f: impl Fn(f64, &[f64]) -> f64) -> Self {
        let lat = Lattice::new(nx, d, l);
        let ns = lat.len();
        let mut values = Vec::with_capacity((nt + 1) * ns);
        for it in 0..=nt {
            let t = it as f64 / nt as f64;
            for ix in 0..ns {
                values.push(f(t, &lat.coords(ix)));
            }
        }
        GridField { nt, nx, d, values }
    }

    /// Boundary-interpolating field `(1−t) u0 + t u1`.
    pub fn linear_interpolation(nt: usize, u0: &[f64], u1: &[f64], nx: usize, d: usize) -> Self {
        let mut g = Self::zeros(nt, nx, d);
        for it in 0..=nt {
            let t = it as f64 / nt as f64;
            let s = g.slice_mut(it);
            for ix in 0..s.len() {
                s[ix] = (1.0 - t) * u0[ix] + t * u1[ix];
            }
        }
        g
    }

    pub fn spatial_len(&self) -> usize {
        self.nx.pow(self.d as u32)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.nt as f64
    }

    #[inline]
    pub fn at(&self, it: usize, ix: usize) -> f64 {
        self.values[it * self.spatial_len() + ix]
    }

    pub fn slice(&self, it: usize) -> &[f64] {
        let ns = self.spatial_len();
        &self.values[it * ns..(it + 1) * ns]
    }

    pub fn slice_mut(&mut self, it: usize) -> &mut [f64] {
        let ns = self.spatial_len();
        &mut self.values[it * ns..(it + 1) * ns]
    }

    pub fn same_shape(&self, other: &GridField) -> bool {
        self.nt == other.nt && self.nx == other.nx && self.d == other.d
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: f64, other: &GridField, b: f64) -> GridField {
        GridField {
            nt: self.nt,
            nx: self.nx,
            d: self.d,
            values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Writes the binary layout (header `Nt, Nx, d, n` as little-endian
    /// `u64`, `L` as little-endian `f64`, then the values) and a JSON sidecar
    /// holding the background.  Returns the sidecar path.
    pub fn write(&self, path: &Path, bg: &Background) -> Result<PathBuf> {
        let mut buf = Vec::with_capacity(40 + 8 * self.values.len());
        for v in [self.nt, self.nx, self.d, bg.n] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        buf.extend_from_slice(&bg.l.to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::File::create(path)?.write_all(&buf)?;
        let side = path.with_extension("json");
        fs::write(&side, serde_json::to_string_pretty(bg)?)?;
        Ok(side)
    }

    /// Reads a field written by [`GridField::write`], returning the field,
    /// `n` and `L` from the header.
    pub fn read(path: &Path) -> Result<(GridField, usize, f64)> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        if buf.len() < 40 {
            return arg("field file is shorter than its header");
        }
        let word = |i: usize| u64::from_le_bytes(buf[8 * i..8 * i + 8].try_into().unwrap());
        let (nt, nx, d, n) = (word(0) as usize, word(1) as usize, word(2) as usize, word(3) as usize);
        let l = f64::from_le_bytes(buf[32..40].try_into().unwrap());
        let count = (nt + 1) * nx.pow(d as u32);
        if buf.len() != 40 + 8 * count {
            return arg("field file length does not match its header");
        }
        let values = buf[40..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((GridField { nt, nx, d, values }, n, l))
    }
}

/// `A_u = A0 + ∇²u + ∇u⊗∇u − ½|∇u|² I`.
pub fn schouten(a0: &SymMatrix, grad: &[f64], hess: &SymMatrix) -> SymMatrix {
    let n = a0.n();
    let gg: f64 = grad.iter().map(|v| v * v).sum();
    let mut a = a0.add(hess);
    for i in 0..n {
        for j in i..n {
            a.add_at(i, j, grad[i] * grad[j]);
        }
    }
    a.shift_diag(-0.5 * gg);
    a
}

/// Derivative data at one interior lattice point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jet {
    pub u_tt: f64,
    pub u_t: f64,
    pub grad_u_t: Vec<f64>,
    pub grad_u: Vec<f64>,
    pub hess_u: SymMatrix,
    pub a_u: SymMatrix,
    pub e_u: SymMatrix,
}

impl Jet {
    pub fn extended(&self) -> ExtendedMatrix {
        ExtendedMatrix {
            r00: self.u_tt,
            y: self.grad_u_t.clone(),
            r: self.a_u.clone(),
        }
    }

    /// `F = u_tt σ_2(A_u) − ⟨T_1(A_u), ∇u_t⊗∇u_t⟩`.
    pub fn f(&self) -> f64 {
        gsop::f2(&self.extended())
    }
}

/// Jets at all interior time levels `1 ≤ it ≤ Nt−1`.
#[derive(Clone, Debug)]
pub struct JetField {
    pub nt: usize,
    pub nx: usize,
    pub d: usize,
    pub n: usize,
    pub jets: Vec<Jet>,
}

impl JetField {
    pub fn spatial_len(&self) -> usize {
        self.nx.pow(self.d as u32)
    }

    /// Jet at time level `it ∈ [1, Nt−1]`.
    pub fn at(&self, it: usize, ix: usize) -> &Jet {
        &self.jets[(it - 1) * self.spatial_len() + ix]
    }

    /// `(it, ix)` of a flat jet index.
    pub fn location(&self, idx: usize) -> (usize, usize) {
        (idx / self.spatial_len() + 1, idx % self.spatial_len())
    }
}

fn check_field(u: &GridField, bg: &Background) -> Result<()> {
    if u.nt < 2 || u.nx < 4 {
        return arg(format!("grid too small: Nt = {}, Nx = {} (need Nt ≥ 2, Nx ≥ 4)", u.nt, u.nx));
    }
    if u.d != bg.d {
        return arg(format!("field has d = {} but the background has d = {}", u.d, bg.d));
    }
    if u.values.len() != (u.nt + 1) * u.spatial_len() {
        return arg("field storage does not match its shape");
    }
    Ok(())
}

/// Second-order jets of `u` at every interior point.
pub fn differentiate(u: &GridField, bg: &Background) -> Result<JetField> {
    check_field(u, bg)?;
    let lat = Lattice::new(u.nx, u.d, bg.l);
    let ns = lat.len();
    let n = bg.n;
    let dt = u.dt();
    let jets = (ns..u.nt * ns)
        .into_par_iter()
        .map(|flat| {
            let (it, ix) = (flat / ns, flat % ns);
            let (prev, cur, next) = (u.slice(it - 1), u.slice(it), u.slice(it + 1));
            let u_tt = (next[ix] - 2.0 * cur[ix] + prev[ix]) / (dt * dt);
            let u_t = (next[ix] - prev[ix]) / (2.0 * dt);
            let gn = lat.gradient(next, ix, n);
            let gp = lat.gradient(prev, ix, n);
            let grad_u_t: Vec<f64> = gn.iter().zip(&gp).map(|(a, b)| (a - b) / (2.0 * dt)).collect();
            let grad_u = lat.gradient(cur, ix, n);
            let hess_u = lat.hessian(cur, ix, n);
            let a_u = schouten(&bg.a0, &grad_u, &hess_u);
            let e_u = a_u.scale(u_tt).sub(&SymMatrix::outer(&grad_u_t));
            Jet {
                u_tt,
                u_t,
                grad_u_t,
                grad_u,
                hess_u,
                a_u,
                e_u,
            }
        })
        .collect();
    Ok(JetField {
        nt: u.nt,
        nx: u.nx,
        d: u.d,
        n,
        jets,
    })
}

/// `F(jet) − s·f` at interior points, zero on the boundary slices.
pub fn residual(u: &GridField, bg: &Background, s: f64, f: &GridField) -> Result<GridField> {
    if !u.same_shape(f) {
        return arg("u and f have different shapes");
    }
    let jf = differentiate(u, bg)?;
    let ns = u.spatial_len();
    let mut out = GridField::zeros(u.nt, u.nx, u.d);
    for (idx, j) in jf.jets.iter().enumerate() {
        out.values[ns + idx] = j.f() - s * f.values[ns + idx];
    }
    Ok(out)
}

/// Pointwise admissibility data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Admissibility {
    pub a_in_cone: Vec<bool>,
    pub u_tt_positive: Vec<bool>,
    pub f_positive: Vec<bool>,
    pub e_in_cone: Vec<bool>,
    pub sigma1_a: Vec<f64>,
    pub sigma2_a: Vec<f64>,
    pub u_tt: Vec<f64>,
    pub f: Vec<f64>,
    pub sigma1_e: Vec<f64>,
    pub sigma2_e: Vec<f64>,
}

impl Admissibility {
    /// `A_u ∈ Γ_2⁺`, `u_tt > 0` and `F > 0` everywhere.
    pub fn all_admissible(&self) -> bool {
        (0..self.f.len()).all(|i| self.a_in_cone[i] && self.u_tt_positive[i] && self.f_positive[i])
    }

    /// Points where the first three flags hold but `E_u ∉ Γ_2⁺`.
    pub fn implication_failures(&self) -> usize {
        (0..self.f.len())
            .filter(|&i| self.a_in_cone[i] && self.u_tt_positive[i] && self.f_positive[i] && !self.e_in_cone[i])
            .count()
    }

    /// Minimum over admissible points of `σ_1(E_u) − F σ_1(A_u)/σ_2(A_u)`.
    pub fn gamma3_min_slack(&self) -> f64 {
        (0..self.f.len())
            .filter(|&i| self.a_in_cone[i] && self.u_tt_positive[i] && self.f_positive[i])
            .map(|i| self.sigma1_e[i] - self.f[i] * self.sigma1_a[i] / self.sigma2_a[i])
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest value among `σ_1(A_u)`, `σ_2(A_u)`, `u_tt` and `F`.
    pub fn min_margin(&self) -> f64 {
        [&self.sigma1_a, &self.sigma2_a, &self.u_tt, &self.f]
            .iter()
            .flat_map(|v| v.iter())
            .fold(f64::INFINITY, |m, &v| m.min(v))
    }
}

pub fn admissibility(jf: &JetField) -> Admissibility {
    let m = jf.jets.len();
    let mut out = Admissibility {
        a_in_cone: Vec::with_capacity(m),
        u_tt_positive: Vec::with_capacity(m),
        f_positive: Vec::with_capacity(m),
        e_in_cone: Vec::with_capacity(m),
        sigma1_a: Vec::with_capacity(m),
        sigma2_a: Vec::with_capacity(m),
        u_tt: Vec::with_capacity(m),
        f: Vec::with_capacity(m),
        sigma1_e: Vec::with_capacity(m),
        sigma2_e: Vec::with_capacity(m),
    };
    for j in &jf.jets {
        let (s1a, s2a) = (j.a_u.trace(), symfun::sigma2(&j.a_u));
        let (s1e, s2e) = (j.e_u.trace(), symfun::sigma2(&j.e_u));
        let f = j.f();
        out.a_in_cone.push(s1a > 0.0 && s2a > 0.0);
        out.u_tt_positive.push(j.u_tt > 0.0);
        out.f_positive.push(f > 0.0);
        out.e_in_cone.push(s1e > 0.0 && s2e > 0.0);
        out.sigma1_a.push(s1a);
        out.sigma2_a.push(s2a);
        out.u_tt.push(j.u_tt);
        out.f.push(f);
        out.sigma1_e.push(s1e);
        out.sigma2_e.push(s2e);
    }
    out
}

fn require_geometric(bg: &Background, dims: &[usize]) -> Result<()> {
    bg.validate()?;
    if bg.mode != Mode::Geometric {
        return arg("this identity is only meaningful in geometric mode");
    }
    if !dims.contains(&bg.n) {
        return arg(format!("dimension {} not supported here (allowed: {dims:?})", bg.n));
    }
    Ok(())
}

fn slice_of<'a>(u: &'a GridField, it: usize, bg: &Background) -> Result<&'a [f64]> {
    if u.d != bg.d || u.nx < 4 || it > u.nt || u.values.len() != (u.nt + 1) * u.spatial_len() {
        return arg("field shape does not match the background or slice index");
    }
    Ok(u.slice(it))
}

/// Largest discrete covariant divergence on one slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// `max_x |div T(x)|` (Euclidean norm of the covector).
    pub defect: f64,
    /// Spatial index where the maximum is attained.
    pub argmax: usize,
}

/// Covariant divergence of `T_1(g_u⁻¹ A_u)` for `g_u = e^{−2u} δ` on the
/// flat torus, with `A_u = ∇²u + ∇u⊗∇u − ½|∇u|² I`.
///
/// As a `(1,1)` tensor `T = e^{2u} T_1(A_u)`; with the Christoffel symbols of
/// `g_u` its divergence is `∂_i T_ij − n (T∇u)_j + u_j tr T`.
pub fn divergence_defect(u: &GridField, it: usize, bg: &Background) -> Result<DivergenceReport> {
    require_geometric(bg, &[3, 4])?;
    let v = slice_of(u, it, bg)?;
    let lat = Lattice::new(u.nx, u.d, bg.l);
    let n = bg.n;
    let ns = lat.len();
    let fields: Vec<(SymMatrix, Vec<f64>)> = (0..ns)
        .map(|ix| {
            let g = lat.gradient(v, ix, n);
            let a = schouten(&bg.a0, &g, &lat.hessian(v, ix, n));
            (symfun::t1(&a).scale((2.0 * v[ix]).exp()), g)
        })
        .collect();
    let mut best = DivergenceReport { defect: 0.0, argmax: 0 };
    for ix in 0..ns {
        let (t, g) = &fields[ix];
        let tu = t.mat_vec(g);
        let tr = t.trace();
        let mut norm2 = 0.0;
        for j in 0..n {
            let mut dv = 0.0;
            for i in 0..n {
                let f = &fields[lat.fwd(ix, i)].0;
                let b = &fields[lat.back(ix, i)].0;
                dv += (f.get(i, j) - b.get(i, j)) / (2.0 * lat.h);
            }
            dv += -(n as f64) * tu[j] + g[j] * tr;
            norm2 += dv * dv;
        }
        let nrm = norm2.sqrt();
        if nrm > best.defect {
            best = DivergenceReport { defect: nrm, argmax: ix };
        }
    }
    Ok(best)
}

/// `∫ σ_2(g_u⁻¹ A_u) dV_u` on one slice of the flat `T⁴`, evaluated in the
/// conformal form `σ_2(e^{2u} A_u) e^{−4u}` with the rectangle rule.
pub fn total_sigma2(u: &GridField, it: usize, bg: &Background) -> Result<f64> {
    require_geometric(bg, &[4])?;
    let v = slice_of(u, it, bg)?;
    let lat = Lattice::new(u.nx, u.d, bg.l);
    let n = bg.n;
    let cell = lat.h.powi(n as i32);
    let sum: f64 = (0..lat.len())
        .map(|ix| {
            let a = schouten(&bg.a0, &lat.gradient(v, ix, n), &lat.hessian(v, ix, n));
            symfun::sigma2(&a.scale((2.0 * v[ix]).exp())) * (-4.0 * v[ix]).exp()
        })
        .sum();
    Ok(sum * cell)
}

/// `∫_0^1 ∫ g dx dt` with the trapezoidal rule in `t` and the rectangle rule
/// in space.
pub fn integrate(g: &GridField, l: f64) -> f64 {
    let cell = (l / g.nx as f64).powi(g.d as i32);
    let mut total = 0.0;
    for it in 0..=g.nt {
        let w = if it == 0 || it == g.nt { 0.5 } else { 1.0 };
        total += w * g.slice(it).iter().sum::<f64>();
    }
    total * cell * g.dt()
}

/// Central time derivative of `f` at interior levels, zero on the boundary.
pub fn time_derivative(f: &GridField) -> GridField {
    let mut out = GridField::zeros(f.nt, f.nx, f.d);
    let ns = f.spatial_len();
    let dt = f.dt();
    for it in 1..f.nt {
        for ix in 0..ns {
            out.values[it * ns + ix] = (f.at(it + 1, ix) - f.at(it - 1, ix)) / (2.0 * dt);
        }
    }
    out
}
