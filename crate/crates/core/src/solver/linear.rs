//! Compressed sparse rows, preconditioners and restarted GMRES for the
//! nonsymmetric Newton systems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square sparse matrix in CSR layout.
#[derive(Clone, Debug)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    /// Builds the matrix from per-row `(column, value)` lists; duplicate
    /// columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut last = usize::MAX;
            for (c, v) in r {
                if c == last {
                    *val.last_mut().unwrap() += v;
                } else {
                    col.push(c);
                    val.push(v);
                    last = c;
                }
            }
            row_ptr.push(col.len());
        }
        Csr { n, row_ptr, col, val }
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.val[p] * x[self.col[p]];
            }
            y[i] = s;
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col[lo..hi].binary_search(&j) {
            Ok(p) => self.val[lo + p],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    /// Inverse diagonal.
    Jacobi,
    /// Exact solve of the tridiagonal coupling along each time line.
    TimeLine,
}

/// Right preconditioner `M⁻¹`.
pub enum Preconditioner {
    Jacobi(Vec<f64>),
    /// Tridiagonal factors for `lines` columns of length `len`; unknown
    /// `(level, column)` sits at index `level * lines + column`.
    TimeLine {
        lines: usize,
        len: usize,
        lower: Vec<f64>,
        diag: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl Preconditioner {
    pub fn build(kind: PreconditionerKind, a: &Csr, lines: usize) -> Result<Self> {
        match kind {
            PreconditionerKind::Jacobi => {
                let d = a.diagonal();
                if d.iter().any(|&v| v == 0.0 || !v.is_finite()) {
                    return Err(Error::LinearSolve("zero or non-finite diagonal".into()));
                }
                Ok(Preconditioner::Jacobi(d.into_iter().map(|v| 1.0 / v).collect()))
            }
            PreconditionerKind::TimeLine => {
                if lines == 0 || a.n % lines != 0 {
                    return Err(Error::LinearSolve("line count does not divide the system".into()));
                }
                let len = a.n / lines;
                let mut lower = vec![0.0; a.n];
                let mut diag = vec![0.0; a.n];
                let mut upper = vec![0.0; a.n];
                for i in 0..a.n {
                    diag[i] = a.get(i, i);
                    if i >= lines {
                        lower[i] = a.get(i, i - lines);
                    }
                    if i + lines < a.n {
                        upper[i] = a.get(i, i + lines);
                    }
                }
                // In-place Thomas factorisation along each line.
                for c in 0..lines {
                    for lv in 1..len {
                        let i = lv * lines + c;
                        let prev = i - lines;
                        if diag[prev] == 0.0 {
                            return Err(Error::LinearSolve("singular time-line block".into()));
                        }
                        lower[i] /= diag[prev];
                        diag[i] -= lower[i] * upper[prev];
                    }
                }
                if diag.iter().any(|&v| v == 0.0 || !v.is_finite()) {
                    return Err(Error::LinearSolve("singular time-line block".into()));
                }
                Ok(Preconditioner::TimeLine {
                    lines,
                    len,
                    lower,
                    diag,
                    upper,
                })
            }
        }
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Preconditioner::Jacobi(inv) => {
                for i in 0..r.len() {
                    z[i] = inv[i] * r[i];
                }
            }
            Preconditioner::TimeLine {
                lines,
                len,
                lower,
                diag,
                upper,
            } => {
                let lines = *lines;
                z.copy_from_slice(r);
                for c in 0..lines {
                    for lv in 1..*len {
                        let i = lv * lines + c;
                        z[i] -= lower[i] * z[i - lines];
                    }
                    let last = (len - 1) * lines + c;
                    z[last] /= diag[last];
                    for lv in (0..len - 1).rev() {
                        let i = lv * lines + c;
                        z[i] = (z[i] - upper[i] * z[i + lines]) / diag[i];
                    }
                }
            }
        }
    }
}

/// Outcome of a GMRES solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmresInfo {
    pub iterations: usize,
    /// `‖b − A x‖ / ‖b‖`, recomputed from the returned iterate.
    pub rel_residual: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Right-preconditioned restarted GMRES with modified Gram-Schmidt.
///
/// Stops when the relative residual reaches `tol` or after `max_iter` inner
/// iterations.  Fails only if the final relative residual exceeds
/// `accept`.
pub fn gmres(
    a: &Csr,
    m: &Preconditioner,
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
    accept: f64,
) -> Result<(Vec<f64>, GmresInfo)> {
    let n = a.n;
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            GmresInfo {
                iterations: 0,
                rel_residual: 0.0,
            },
        ));
    }
    let mut total = 0;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    loop {
        a.mul_vec(&x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm(&r);
        if beta / bnorm <= tol || total >= max_iter {
            break;
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|t| t / beta).collect()];
        let mut hcols: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![beta];
        let mut k = 0;
        while k < restart && total < max_iter {
            m.apply(&v[k], &mut z);
            a.mul_vec(&z, &mut w);
            let mut hcol = vec![0.0; k + 2];
            for (j, vj) in v.iter().enumerate() {
                let hj = dot(&w, vj);
                hcol[j] = hj;
                for i in 0..n {
                    w[i] -= hj * vj[i];
                }
            }
            let wn = norm(&w);
            hcol[k + 1] = wn;
            for j in 0..k {
                let t = cs[j] * hcol[j] + sn[j] * hcol[j + 1];
                hcol[j + 1] = -sn[j] * hcol[j] + cs[j] * hcol[j + 1];
                hcol[j] = t;
            }
            let den = (hcol[k] * hcol[k] + hcol[k + 1] * hcol[k + 1]).sqrt();
            let (c, s) = if den == 0.0 { (1.0, 0.0) } else { (hcol[k] / den, hcol[k + 1] / den) };
            cs.push(c);
            sn.push(s);
            hcol[k] = den;
            hcol[k + 1] = 0.0;
            g.push(-s * g[k]);
            g[k] *= c;
            hcols.push(hcol);
            total += 1;
            k += 1;
            let done = g[k].abs() / bnorm <= tol || wn == 0.0;
            if !done {
                v.push(w.iter().map(|t| t / wn).collect());
            }
            if done {
                break;
            }
        }
        // Back substitution for the least-squares coefficients.
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= hcols[j][i] * y[j];
            }
            y[i] = s / hcols[i][i];
        }
        let mut comb = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                comb[i] += yj * v[j][i];
            }
        }
        m.apply(&comb, &mut z);
        for i in 0..n {
            x[i] += z[i];
        }
    }
    a.mul_vec(&x, &mut r);
    let res = norm(&b.iter().zip(&r).map(|(p, q)| p - q).collect::<Vec<_>>()) / bnorm;
    if !(res <= accept) {
        return Err(Error::LinearSolve(format!(
            "relative residual {res:e} after {total} iterations"
        )));
    }
    Ok((
        x,
        GmresInfo {
            iterations: total,
            rel_residual: res,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, skew: f64) -> Csr {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, -2.0 - 0.1 * i as f64)];
                if i > 0 {
                    r.push((i - 1, 1.0 + skew));
                }
                if i + 1 < n {
                    r.push((i + 1, 1.0 - skew));
                }
                r
            })
            .collect();
        Csr::from_rows(rows)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = Csr::from_rows(vec![vec![(0, 1.0), (1, 2.0), (0, 3.0)], vec![(1, 5.0)]]);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(0, 1), 2.0);
        assert_eq!(a.get(1, 0), 0.0);
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let a = tridiag(60, 0.3);
        let xs: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; 60];
        a.mul_vec(&xs, &mut b);
        for kind in [PreconditionerKind::Jacobi, PreconditionerKind::TimeLine] {
            let m = Preconditioner::build(kind, &a, 1).unwrap();
            let (x, info) = gmres(&a, &m, &b, 1e-12, 100, 500, 1e-10).unwrap();
            assert!(info.rel_residual <= 1e-11, "{kind:?} {info:?}");
            let err = x.iter().zip(&xs).fold(0.0f64, |e, (p, q)| e.max((p - q).abs()));
            assert!(err < 1e-9);
        }
    }

    #[test]
    fn time_line_is_exact_on_tridiagonal_lines() {
        let a = tridiag(30, -0.2);
        let m = Preconditioner::build(PreconditionerKind::TimeLine, &a, 1).unwrap();
        let b: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let (_, info) = gmres(&a, &m, &b, 1e-13, 50, 50, 1e-10).unwrap();
        assert!(info.iterations <= 2);
    }

    #[test]
    fn short_restart_still_converges() {
        let a = tridiag(80, 0.1);
        let m = Preconditioner::build(PreconditionerKind::Jacobi, &a, 1).unwrap();
        let b = vec![1.0; 80];
        let (_, info) = gmres(&a, &m, &b, 1e-10, 10, 5000, 1e-8).unwrap();
        assert!(info.rel_residual <= 1e-10);
    }
}
