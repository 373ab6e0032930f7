//! Elementary symmetric functions of symmetric matrices, Newton
//! transformations and Gårding cone membership.
//!
//! `σ_k` is evaluated with the trace recursion
//! `σ_j = tr(T_{j-1} A) / j`, `T_j = σ_j I - T_{j-1} A`, `T_0 = I`,
//! which is polynomial in the entries and needs no eigensolver.  A cyclic
//! Jacobi eigensolver is kept for cross-checks.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};

/// Dense symmetric `n × n` matrix stored row-major.
///
/// Every mutating method writes both `(i, j)` and `(j, i)`, so the storage
/// is symmetric at all times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            entries: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, c: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.entries[i * n + i] = c;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.entries[i * d.len() + i] = v;
        }
        m
    }

    /// Builds a matrix from row slices; fails unless the rows form a finite
    /// symmetric square matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return arg("rows do not form a square matrix");
        }
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let v = rows[i][j];
                if !v.is_finite() {
                    return arg(format!("entry ({i},{j}) is not finite"));
                }
                if (v - rows[j][i]).abs() > 1e-14 * (1.0 + v.abs()) {
                    return arg(format!("entries ({i},{j}) and ({j},{i}) differ"));
                }
                m.entries[i * n + j] = 0.5 * (v + rows[j][i]);
            }
        }
        Ok(m)
    }

    /// Symmetric matrix with entries `f(i, j)` for `i ≤ j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// `x ⊗ x`.
    pub fn outer(x: &[f64]) -> Self {
        let n = x.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.entries[i * n + j] = x[i] * x[j];
            }
        }
        m
    }

    /// Symmetric product `(x ⊗ y + y ⊗ x) / 2`.
    pub fn sym_outer(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.entries[i * n + j] = 0.5 * (x[i] * y[j] + y[i] * x[j]);
            }
        }
        m
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.n + j] = v;
        self.entries[j * self.n + i] = v;
    }

    /// Adds `v` to both `(i, j)` and `(j, i)` (once when `i == j`).
    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.n + j] += v;
        if i != j {
            self.entries[j * self.n + i] += v;
        }
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Squared Frobenius norm `|A|²`.
    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, c: f64) -> Self {
        SymMatrix {
            n: self.n,
            entries: self.entries.iter().map(|v| c * v).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.lin_comb(1.0, other, -1.0)
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Self {
        assert_eq!(self.n, other.n, "dimension mismatch");
        SymMatrix {
            n: self.n,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    /// `self += c·I`.
    pub fn shift_diag(&mut self, c: f64) {
        for i in 0..self.n {
            self.entries[i * self.n + i] += c;
        }
    }

    pub fn mat_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| (0..n).map(|j| self.entries[i * n + j] * x[j]).sum())
            .collect()
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            let row = &self.entries[i * n..(i + 1) * n];
            let mut r = 0.0;
            for j in 0..n {
                r += row[j] * x[j];
            }
            s += x[i] * r;
        }
        s
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mat_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    /// `QᵀAQ` for a square matrix `Q` given row-major.
    pub fn congruence(&self, q: &[f64]) -> Self {
        let n = self.n;
        let mut aq = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += self.entries[i * n + k] * q[k * n + j];
                }
                aq[i * n + j] = s;
            }
        }
        Self::from_fn(n, |i, j| (0..n).map(|k| q[k * n + i] * aq[k * n + j]).sum())
    }

    /// Symmetric part of the product `self · other`.  Exact when the two
    /// matrices commute (as `T_k(A)` and `A` do).
    pub fn sym_product(&self, other: &Self) -> Self {
        let n = self.n;
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entries[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    p[i * n + j] += a * other.entries[k * n + j];
                }
            }
        }
        Self::from_fn(n, |i, j| 0.5 * (p[i * n + j] + p[j * n + i]))
    }

    /// Number of independent coordinates `n(n+1)/2`.
    pub fn coord_len(n: usize) -> usize {
        n * (n + 1) / 2
    }

    /// Upper-triangular entries `(i ≤ j)` in row order.
    pub fn to_coords(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::coord_len(self.n));
        for i in 0..self.n {
            for j in i..self.n {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn from_coords(n: usize, c: &[f64]) -> Self {
        let mut m = Self::zeros(n);
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                m.set(i, j, c[idx]);
                idx += 1;
            }
        }
        m
    }
}

/// Cone membership report for `Γ_k⁺`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    /// `σ_1 .. σ_k`.
    pub sigmas: Vec<f64>,
    /// `in_open_cone[j-1]` is `σ_j > ε`.
    pub in_open_cone: Vec<bool>,
    /// `min_j σ_j`.
    pub margin: f64,
}

impl ConeReport {
    pub fn in_cone(&self) -> bool {
        self.in_open_cone.iter().all(|&b| b)
    }
}

fn check_order(n: usize, k: usize, lo: usize, hi: usize) -> Result<()> {
    if k < lo || k > hi {
        return arg(format!("order {k} outside [{lo}, {hi}] for n = {n}"));
    }
    Ok(())
}

/// `σ_0 .. σ_k` together with `T_k` from the trace recursion.
fn recursion(a: &SymMatrix, k: usize) -> (Vec<f64>, SymMatrix) {
    let n = a.n();
    let mut sig = Vec::with_capacity(k + 1);
    sig.push(1.0);
    let mut t = SymMatrix::identity(n);
    for j in 1..=k {
        let ta = t.sym_product(a);
        let s = ta.trace() / j as f64;
        sig.push(s);
        let mut next = ta.scale(-1.0);
        next.shift_diag(s);
        t = next;
    }
    (sig, t)
}

/// `σ_1 .. σ_k` of the eigenvalues of `a`, from the trace recursion.
pub fn sigmas(a: &SymMatrix, k: usize) -> Result<Vec<f64>> {
    check_order(a.n(), k, 1, a.n())?;
    Ok(recursion(a, k).0[1..].to_vec())
}

/// `σ_k(A)`.
pub fn sigma(a: &SymMatrix, k: usize) -> Result<f64> {
    check_order(a.n(), k, 1, a.n())?;
    Ok(recursion(a, k).0[k])
}

/// `σ_1(A)` without validation.
#[inline]
pub fn sigma1(a: &SymMatrix) -> f64 {
    a.trace()
}

/// `σ_2(A) = (σ_1² − |A|²) / 2`, the fast path used by the solver.
#[inline]
pub fn sigma2(a: &SymMatrix) -> f64 {
    let t = a.trace();
    0.5 * (t * t - a.norm_sq())
}

/// `T_1(A) = σ_1 I − A`.
pub fn t1(a: &SymMatrix) -> SymMatrix {
    let mut t = a.scale(-1.0);
    t.shift_diag(a.trace());
    t
}

/// `T_k(A)` for `0 ≤ k ≤ n−1`.
pub fn newton_transform(a: &SymMatrix, k: usize) -> Result<SymMatrix> {
    if a.n() == 0 || k > a.n() - 1 {
        return arg(format!("order {k} outside [0, {}]", a.n().saturating_sub(1)));
    }
    Ok(recursion(a, k).1)
}

/// Cone membership with the reporting threshold `ε = 0`.
pub fn cone_membership(a: &SymMatrix, k: usize) -> Result<ConeReport> {
    cone_membership_eps(a, k, 0.0)
}

/// Cone membership with strict threshold `σ_j > eps`.
pub fn cone_membership_eps(a: &SymMatrix, k: usize, eps: f64) -> Result<ConeReport> {
    let sigmas = sigmas(a, k)?;
    let in_open_cone = sigmas.iter().map(|&s| s > eps).collect();
    let margin = sigmas.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ConeReport {
        sigmas,
        in_open_cone,
        margin,
    })
}

/// Frobenius pairing `Σ T_ij B_ij`.
pub fn pair(t: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    if t.n() != b.n() {
        return arg(format!("pairing {}x{} with {}x{}", t.n(), t.n(), b.n(), b.n()));
    }
    Ok(pair_unchecked(t, b))
}

#[inline]
pub(crate) fn pair_unchecked(t: &SymMatrix, b: &SymMatrix) -> f64 {
    t.entries().iter().zip(b.entries()).map(|(x, y)| x * y).sum()
}

/// Defects of the two rank-one identities
/// `σ_k(A − X⊗X) = σ_k(A) − ⟨T_{k−1}(A), X⊗X⟩` and
/// `⟨T_k(A − X⊗X), X⊗X⟩ = ⟨T_k(A), X⊗X⟩`.
pub fn rank_one_defects(a: &SymMatrix, x: &[f64], k: usize) -> Result<(f64, f64)> {
    let n = a.n();
    if x.len() != n {
        return arg("vector length differs from matrix dimension");
    }
    check_order(n, k, 1, n - 1)?;
    let xx = SymMatrix::outer(x);
    let b = a.sub(&xx);
    let (sa, ta) = recursion(a, k);
    let (sb, tb) = recursion(&b, k);
    let tkm1 = newton_transform(a, k - 1)?;
    let d1 = (sb[k] - sa[k] + pair_unchecked(&tkm1, &xx)).abs();
    let d2 = (pair_unchecked(&tb, &xx) - pair_unchecked(&ta, &xx)).abs();
    Ok((d1, d2))
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Column `j` (row-major `vectors[i*n+j]`) is the eigenvector of `values[j]`.
    pub vectors: Vec<f64>,
}

/// Cyclic Jacobi eigensolver.  Sweeps until the off-diagonal Frobenius norm
/// drops below `1e-13` times the matrix norm.
pub fn sym_eigen(a: &SymMatrix) -> SymEigen {
    let n = a.n();
    let mut m = a.entries().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = a.norm_sq().sqrt();
    let tol = 1e-13 * scale.max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m[i * n + j] * m[i * n + j];
                }
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (newj, &oldj) in order.iter().enumerate() {
        for i in 0..n {
            vectors[i * n + newj] = v[i * n + oldj];
        }
    }
    SymEigen { values, vectors }
}

/// Eigenvalues in ascending order.
pub fn eigenvalues(a: &SymMatrix) -> Vec<f64> {
    sym_eigen(a).values
}

/// Elementary symmetric polynomials `e_0 .. e_n` of `lams`.
pub fn elementary_symmetric(lams: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; lams.len() + 1];
    e[0] = 1.0;
    for (m, &l) in lams.iter().enumerate() {
        for j in (1..=m + 1).rev() {
            e[j] += l * e[j - 1];
        }
    }
    e
}

/// `σ_k(A)` from the Jacobi eigenvalues; the cross-check route.
pub fn sigma_via_eigen(a: &SymMatrix, k: usize) -> Result<f64> {
    check_order(a.n(), k, 1, a.n())?;
    Ok(elementary_symmetric(&eigenvalues(a))[k])
}
