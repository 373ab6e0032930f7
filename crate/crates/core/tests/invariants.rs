use proptest::prelude::*;

use schouten_core::gsop::{self, ExtendedMatrix};
use schouten_core::symfun::{self, SymMatrix};

fn sym(n: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| SymMatrix::from_fn(n, |i, j| 0.5 * (v[i * n + j] + v[j * n + i])))
}

/// Symmetric matrix pushed towards the positive cone by a random diagonal
/// shift; callers still filter on cone membership.
fn shifted(n: usize) -> impl Strategy<Value = SymMatrix> {
    (sym(n), 0.0f64..3.0).prop_map(|(mut a, c)| {
        a.shift_diag(c);
        a
    })
}

fn vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, n)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn in_cone(a: &SymMatrix, k: usize) -> bool {
    symfun::cone_membership(a, k).unwrap().in_cone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sigma_is_homogeneous(a in sym(5), c in 0.2f64..3.0, k in 1usize..=5) {
        let lhs = symfun::sigma(&a.scale(c), k).unwrap();
        let rhs = c.powi(k as i32) * symfun::sigma(&a, k).unwrap();
        prop_assert!(rel(lhs, rhs) < 1e-12);
    }

    #[test]
    fn t1_pairing_is_twice_sigma2(e in sym(4)) {
        let p = symfun::pair(&symfun::t1(&e), &e).unwrap();
        prop_assert!((p - 2.0 * symfun::sigma2(&e)).abs() < 1e-12);
    }

    #[test]
    fn sigma2_from_trace_and_norm(e in sym(6)) {
        let s1 = e.trace();
        prop_assert!((symfun::sigma2(&e) - 0.5 * (s1 * s1 - e.norm_sq())).abs() < 1e-12);
    }

    #[test]
    fn recursion_matches_eigenvalues(e in sym(5), k in 1usize..=5) {
        let a = symfun::sigma(&e, k).unwrap();
        let b = symfun::sigma_via_eigen(&e, k).unwrap();
        prop_assert!(rel(a, b) < 1e-10);
    }

    #[test]
    fn sigma_is_invariant_under_congruence(e in sym(3), angle in 0.0f64..6.3, k in 1usize..=3) {
        let (c, s) = (angle.cos(), angle.sin());
        let q = [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0];
        let rotated = e.congruence(&q);
        prop_assert!(rel(symfun::sigma(&rotated, k).unwrap(), symfun::sigma(&e, k).unwrap()) < 1e-12);
    }

    #[test]
    fn cone_is_convex(a in shifted(4), b in shifted(4), w in 0.0f64..1.0, k in 1usize..=4) {
        prop_assume!(in_cone(&a, k) && in_cone(&b, k));
        prop_assert!(in_cone(&a.lin_comb(w, &b, 1.0 - w), k));
    }

    #[test]
    fn newton_transform_is_positive_on_the_cone(a in shifted(5), k in 2usize..=5) {
        prop_assume!(in_cone(&a, k));
        let t = symfun::newton_transform(&a, k - 1).unwrap();
        let lmin = symfun::eigenvalues(&t)[0];
        prop_assert!(lmin > -1e-12 * t.max_abs().max(1.0), "λ_min(T_{}) = {}", k - 1, lmin);
    }

    #[test]
    fn f_k_is_homogeneous(r in shifted(4), y in vector(4), r00 in 0.1f64..3.0, c in 0.2f64..3.0, k in 1usize..=4) {
        let p = ExtendedMatrix::new(r00, y, r).unwrap();
        let lhs = gsop::f_k(&p.scale(c), k).unwrap();
        let rhs = c.powi(k as i32 + 1) * gsop::f_k(&p, k).unwrap();
        prop_assert!(rel(lhs, rhs) < 1e-11);
    }

    #[test]
    fn tilde_identity_holds(r in shifted(4), y in vector(4), r00 in 0.3f64..3.0, k in 1usize..=4) {
        let p = ExtendedMatrix::new(r00, y, r).unwrap();
        let f = gsop::f_k(&p, k).unwrap();
        prop_assert!(gsop::tilde_identity_defect(&p, k).unwrap() <= 1e-10 * f.abs().max(1.0));
    }

    #[test]
    fn ellipticity_form_is_nonnegative(r in shifted(4), y in vector(4), x in vector(4), xi in -2.0f64..2.0, r00 in 0.1f64..5.0) {
        let p = ExtendedMatrix::new(r00, y, r).unwrap();
        prop_assume!(gsop::domain_check(&p, 2).unwrap().in_domain);
        let q = gsop::ellipticity_form(&p, xi, &x).unwrap();
        let scale: f64 = xi * xi + x.iter().map(|v| v * v).sum::<f64>();
        prop_assert!(q >= -1e-10 * scale.max(1.0), "Q = {}", q);
    }

    #[test]
    fn h_scales_correctly(r in shifted(4), y in vector(4), lam in 0.2f64..4.0, c in -2.0f64..2.0) {
        prop_assume!(in_cone(&r, 2));
        let base = gsop::h(&r, &y, 2).unwrap();
        let ry: Vec<f64> = y.iter().map(|v| v * lam.sqrt()).collect();
        prop_assert!(rel(gsop::h(&r.scale(lam), &ry, 2).unwrap(), base) < 1e-10);
        let cy: Vec<f64> = y.iter().map(|v| v * c).collect();
        prop_assert!(rel(gsop::h(&r, &cy, 2).unwrap(), c * c * base) < 1e-10);
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn gradient_matches_central_differences(r in shifted(3), y in vector(3), r00 in 0.5f64..3.0) {
        let p = ExtendedMatrix::new(r00, y, r).unwrap();
        let exact = gsop::grad_f(&p).to_coords();
        let fd = gsop::grad_f_fd(&p, 2, 1e-5).unwrap().to_coords();
        let scale = exact.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in exact.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-6 * scale, "{} vs {}", a, b);
        }
    }
}
