//! The operator family `F_k` on extended matrices
//! `R = (r00, Y; Yᵀ, r)`, its gradient for `k = 2`, and the quotient `H_k`.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::symfun::{self, pair_unchecked, SymMatrix};

/// `(n+1) × (n+1)` block matrix with scalar corner `r00`, column `Y` and
/// spatial block `r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedMatrix {
    pub r00: f64,
    pub y: Vec<f64>,
    pub r: SymMatrix,
}

impl ExtendedMatrix {
    pub fn new(r00: f64, y: Vec<f64>, r: SymMatrix) -> Result<Self> {
        if y.len() != r.n() {
            return arg(format!("Y has length {} but r is {}x{}", y.len(), r.n(), r.n()));
        }
        Ok(ExtendedMatrix { r00, y, r })
    }

    pub fn n(&self) -> usize {
        self.r.n()
    }

    /// The full symmetric `(n+1) × (n+1)` matrix.
    pub fn dense(&self) -> SymMatrix {
        let n = self.n();
        SymMatrix::from_fn(n + 1, |i, j| match (i, j) {
            (0, 0) => self.r00,
            (0, j) => self.y[j - 1],
            (i, j) => self.r.get(i - 1, j - 1),
        })
    }

    /// Independent coordinates: `r00`, then `Y`, then the upper triangle of `r`.
    pub fn to_coords(&self) -> Vec<f64> {
        let mut c = vec![self.r00];
        c.extend_from_slice(&self.y);
        c.extend(self.r.to_coords());
        c
    }

    pub fn from_coords(n: usize, c: &[f64]) -> Self {
        ExtendedMatrix {
            r00: c[0],
            y: c[1..=n].to_vec(),
            r: SymMatrix::from_coords(n, &c[n + 1..]),
        }
    }

    pub fn coord_len(n: usize) -> usize {
        1 + n + SymMatrix::coord_len(n)
    }

    pub fn scale(&self, c: f64) -> Self {
        ExtendedMatrix {
            r00: c * self.r00,
            y: self.y.iter().map(|v| c * v).collect(),
            r: self.r.scale(c),
        }
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Self {
        ExtendedMatrix {
            r00: a * self.r00 + b * other.r00,
            y: self.y.iter().zip(&other.y).map(|(x, z)| a * x + b * z).collect(),
            r: self.r.lin_comb(a, &other.r, b),
        }
    }

    pub fn midpoint(&self, other: &Self) -> Self {
        self.lin_comb(0.5, other, 0.5)
    }

    /// `r̃ = r00·r − Y⊗Y`.
    pub fn tilde(&self) -> SymMatrix {
        self.r.scale(self.r00).sub(&SymMatrix::outer(&self.y))
    }

    /// Pairing of a gradient (stored per unordered pair) with a direction:
    /// `G00·D00 + 2 Σ G_i0·D_i0 + Σ_kl G_kl·D_kl`.
    pub fn directional(&self, dir: &ExtendedMatrix) -> f64 {
        self.r00 * dir.r00
            + 2.0 * self.y.iter().zip(&dir.y).map(|(a, b)| a * b).sum::<f64>()
            + pair_unchecked(&self.r, &dir.r)
    }
}

/// Domain status of an extended matrix for `F_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainCheck {
    pub in_domain: bool,
    /// `min_{j≤k} σ_j(r)`.
    pub cone_margin: f64,
    pub f_value: f64,
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return arg(format!("operator order {k} outside [1, {n}]"));
    }
    Ok(())
}

/// `F_k(R) = r00·σ_k(r) − ⟨T_{k−1}(r), Y⊗Y⟩`.  `k = 1` is Donaldson's operator.
pub fn f_k(rm: &ExtendedMatrix, k: usize) -> Result<f64> {
    check_k(rm.n(), k)?;
    if k == 2 {
        return Ok(f2(rm));
    }
    let sk = symfun::sigma(&rm.r, k)?;
    let t = symfun::newton_transform(&rm.r, k - 1)?;
    Ok(rm.r00 * sk - t.quad_form(&rm.y))
}

/// `F_2(R) = r00·σ_2(r) − Yᵀ T_1(r) Y`, expanded as
/// `r00·σ_2(r) − σ_1(r)|Y|² + Yᵀ r Y`.
#[inline]
pub fn f2(rm: &ExtendedMatrix) -> f64 {
    let yy: f64 = rm.y.iter().map(|v| v * v).sum();
    rm.r00 * symfun::sigma2(&rm.r) - rm.r.trace() * yy + rm.r.quad_form(&rm.y)
}

pub fn domain_check(rm: &ExtendedMatrix, k: usize) -> Result<DomainCheck> {
    let cone = symfun::cone_membership(&rm.r, k)?;
    let f_value = f_k(rm, k)?;
    Ok(DomainCheck {
        in_domain: cone.in_cone() && f_value > 0.0,
        cone_margin: cone.margin,
        f_value,
    })
}

fn require_domain(rm: &ExtendedMatrix, k: usize) -> Result<DomainCheck> {
    let dc = domain_check(rm, k)?;
    if !dc.in_domain {
        return Err(Error::Domain {
            detail: format!("R is not in the domain of log F_{k}"),
            cone_margin: dc.cone_margin,
            f_value: dc.f_value,
        });
    }
    Ok(dc)
}

/// `|r00^{1−k}·σ_k(r00·r − Y⊗Y) − F_k(R)|`.
pub fn tilde_identity_defect(rm: &ExtendedMatrix, k: usize) -> Result<f64> {
    check_k(rm.n(), k)?;
    if rm.r00 <= 0.0 {
        return Err(Error::Domain {
            detail: "r00 must be positive".into(),
            cone_margin: f64::NAN,
            f_value: f64::NAN,
        });
    }
    let lhs = rm.r00.powi(1 - k as i32) * symfun::sigma(&rm.tilde(), k)?;
    Ok((lhs - f_k(rm, k)?).abs())
}

/// `H_k(r, Y) = T_{k−1}(r)(Y, Y) / σ_k(r)` on `Γ_k⁺`.
pub fn h(r: &SymMatrix, y: &[f64], k: usize) -> Result<f64> {
    check_k(r.n(), k)?;
    if y.len() != r.n() {
        return arg("Y has the wrong length");
    }
    let cone = symfun::cone_membership(r, k)?;
    if !cone.in_cone() {
        return Err(Error::Domain {
            detail: format!("r is not in the open cone Γ_{k}⁺"),
            cone_margin: cone.margin,
            f_value: f64::NAN,
        });
    }
    let t = symfun::newton_transform(r, k - 1)?;
    Ok(t.quad_form(y) / cone.sigmas[k - 1])
}

/// Closed-form gradient of `F_2` in the per-pair storage convention:
/// `G00 = σ_2(r)`, `G_i0 = −(T_1(r) Y)_i`, `G_kl = T_1(r00·r − Y⊗Y)_kl`.
/// Use [`ExtendedMatrix::directional`] to contract with a direction.
pub fn grad_f(rm: &ExtendedMatrix) -> ExtendedMatrix {
    let t = symfun::t1(&rm.r);
    ExtendedMatrix {
        r00: symfun::sigma2(&rm.r),
        y: t.mat_vec(&rm.y).into_iter().map(|v| -v).collect(),
        r: symfun::t1(&rm.tilde()),
    }
}

/// Central finite-difference gradient of `F_k` in the same convention as
/// [`grad_f`].  Off-diagonal slots are perturbed symmetrically and halved.
pub fn grad_f_fd(rm: &ExtendedMatrix, k: usize, step: f64) -> Result<ExtendedMatrix> {
    check_k(rm.n(), k)?;
    let n = rm.n();
    let base = rm.to_coords();
    let mut g = vec![0.0; base.len()];
    for (idx, gi) in g.iter_mut().enumerate() {
        let mut p = base.clone();
        let mut m = base.clone();
        p[idx] += step;
        m[idx] -= step;
        let fp = f_k(&ExtendedMatrix::from_coords(n, &p), k)?;
        let fm = f_k(&ExtendedMatrix::from_coords(n, &m), k)?;
        *gi = (fp - fm) / (2.0 * step);
    }
    let mut out = ExtendedMatrix::from_coords(n, &g);
    for v in out.y.iter_mut() {
        *v *= 0.5;
    }
    for i in 0..n {
        for j in i + 1..n {
            let v = out.r.get(i, j);
            out.r.set(i, j, 0.5 * v);
        }
    }
    Ok(out)
}

/// `log F_k(R)` on the domain `r ∈ Γ_k⁺`, `F_k(R) > 0`.
pub fn log_f(rm: &ExtendedMatrix, k: usize) -> Result<f64> {
    Ok(require_domain(rm, k)?.f_value.ln())
}

/// `Q(ξ, X) = ⟨T_1(E), Y'⊗Y'⟩ + r00⁻¹σ_2(E)ξ²` with `E = r00·r − Y⊗Y` and
/// `Y' = √r00·X − ξY`.
pub fn ellipticity_form(rm: &ExtendedMatrix, xi: f64, x: &[f64]) -> Result<f64> {
    if x.len() != rm.n() {
        return arg("X has the wrong length");
    }
    require_domain(rm, 2)?;
    if rm.r00 <= 0.0 {
        return Err(Error::Domain {
            detail: "r00 must be positive".into(),
            cone_margin: f64::NAN,
            f_value: f2(rm),
        });
    }
    let e = rm.tilde();
    let sq = rm.r00.sqrt();
    let yp: Vec<f64> = x.iter().zip(&rm.y).map(|(a, b)| sq * a - xi * b).collect();
    Ok(symfun::t1(&e).quad_form(&yp) + symfun::sigma2(&e) * xi * xi / rm.r00)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn em(r00: f64, y: &[f64], r: SymMatrix) -> ExtendedMatrix {
        ExtendedMatrix::new(r00, y.to_vec(), r).unwrap()
    }

    const E1: [f64; 4] = [1.0, 0.0, 0.0, 0.0];
    const Z: [f64; 4] = [0.0; 4];

    #[test]
    fn f_k_examples() {
        let i4 = SymMatrix::identity(4);
        assert_eq!(f_k(&em(1.0, &Z, i4.clone()), 2).unwrap(), 6.0);
        assert_eq!(f_k(&em(2.0, &E1, i4.clone()), 2).unwrap(), 9.0);
        assert_eq!(f_k(&em(2.0, &E1, i4.clone()), 1).unwrap(), 7.0);
        assert!(f_k(&em(2.0, &E1, i4), 5).is_err());
    }

    #[test]
    fn f2_fast_path_matches_generic() {
        let r = SymMatrix::from_fn(4, |i, j| if i == j { 1.0 + i as f64 } else { 0.1 * (i + j) as f64 });
        let rm = em(1.3, &[0.2, -0.4, 0.1, 0.3], r);
        let t = symfun::newton_transform(&rm.r, 1).unwrap();
        let generic = rm.r00 * symfun::sigma(&rm.r, 2).unwrap() - t.quad_form(&rm.y);
        assert!((f2(&rm) - generic).abs() < 1e-13);
    }

    #[test]
    fn tilde_examples() {
        let i4 = SymMatrix::identity(4);
        let rm = em(2.0, &E1, i4.clone());
        assert!((symfun::sigma(&rm.tilde(), 2).unwrap() - 18.0).abs() < 1e-13);
        assert!(tilde_identity_defect(&rm, 2).unwrap() < 1e-13);
        assert!(tilde_identity_defect(&em(1.0, &Z, i4.clone()), 2).unwrap() < 1e-14);
        assert!(matches!(
            tilde_identity_defect(&em(0.0, &Z, i4), 2),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn h_examples() {
        let i4 = SymMatrix::identity(4);
        assert!((h(&i4, &E1, 2).unwrap() - 0.5).abs() < 1e-15);
        assert!((h(&i4.scale(2.0), &E1, 2).unwrap() - 0.25).abs() < 1e-15);
        assert!((h(&i4, &[2.0, 0.0, 0.0, 0.0], 2).unwrap() - 2.0).abs() < 1e-15);
        let bad = SymMatrix::from_diag(&[1.0, 1.0, 1.0, -1.0]);
        assert!(matches!(h(&bad, &E1, 2), Err(Error::Domain { .. })));
    }

    #[test]
    fn grad_examples() {
        let i4 = SymMatrix::identity(4);
        let g = grad_f(&em(1.0, &Z, i4.clone()));
        assert_eq!(g.r00, 6.0);
        assert_eq!(g.y, vec![0.0; 4]);
        assert_eq!(g.r, SymMatrix::scaled_identity(4, 3.0));
        let g = grad_f(&em(1.0, &E1, i4));
        assert_eq!(g.y[0], -3.0);
    }

    #[test]
    fn grad_matches_fd() {
        let r = SymMatrix::from_fn(4, |i, j| if i == j { 2.0 - 0.3 * i as f64 } else { 0.2 - 0.05 * (i * j) as f64 });
        let rm = em(1.7, &[0.3, -0.2, 0.5, 0.1], r);
        let g = grad_f(&rm);
        let fd = grad_f_fd(&rm, 2, 1e-6).unwrap();
        let a = g.to_coords();
        let b = fd.to_coords();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn log_f_examples() {
        let i4 = SymMatrix::identity(4);
        assert!((log_f(&em(1.0, &Z, i4.clone()), 2).unwrap() - 6f64.ln()).abs() < 1e-15);
        assert!((log_f(&em(2.0, &E1, i4), 2).unwrap() - 9f64.ln()).abs() < 1e-15);
        let bad = SymMatrix::from_diag(&[1.0, 1.0, 1.0, -1.0]);
        assert!(matches!(log_f(&em(1.0, &Z, bad), 2), Err(Error::Domain { .. })));
    }

    #[test]
    fn ellipticity_examples() {
        let i4 = SymMatrix::identity(4);
        let rm = em(1.0, &Z, i4);
        assert!((ellipticity_form(&rm, 0.0, &E1).unwrap() - 3.0).abs() < 1e-14);
        assert_eq!(ellipticity_form(&rm, 0.0, &Z).unwrap(), 0.0);
        assert!((ellipticity_form(&rm, 1.0, &Z).unwrap() - 6.0).abs() < 1e-14);
    }

    #[test]
    fn dense_layout() {
        let rm = em(2.0, &[1.0, 2.0], SymMatrix::from_diag(&[3.0, 4.0]));
        let d = rm.dense();
        assert_eq!(d.rows(), vec![vec![2.0, 1.0, 2.0], vec![1.0, 3.0, 0.0], vec![2.0, 0.0, 4.0]]);
        assert_eq!(ExtendedMatrix::from_coords(2, &rm.to_coords()), rm);
    }
}
