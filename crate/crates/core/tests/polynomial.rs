mod common;

use nalgebra::{Matrix2xX, Matrix3, Matrix3xX};
use proptest::prelude::*;
use rand::Rng;

use shapecert::model::{vec_rotation, DeformableModel, Observation};
use shapecert::poly::{
    archimedean_residual, bound_constraints, build_objective, check_archimedean_identity, objective_support,
    so3_constraints, Monomial, SparsePoly,
};
use shapecert::preprocess::{eliminate_translation, CenteredProblem};

fn point(c: &[f64], r: &Matrix3<f64>) -> Vec<f64> {
    let mut x = c.to_vec();
    x.extend_from_slice(&vec_rotation(r));
    x
}

fn arb_poly(nvars: usize) -> impl Strategy<Value = SparsePoly> {
    prop::collection::vec((prop::collection::vec(0u8..3, nvars), -4i32..5), 0..7).prop_map(move |terms| {
        let mut p = SparsePoly::zero(nvars);
        for (e, c) in terms {
            p.add_term(Monomial::from_exponents(e), c as f64);
        }
        p
    })
}

proptest! {
    #[test]
    fn addition_is_an_abelian_group(a in arb_poly(4), b in arb_poly(4), c in arb_poly(4)) {
        prop_assert_eq!(a.add(&b), b.add(&a));
        prop_assert_eq!(a.add(&b).add(&c), a.add(&b.add(&c)));
        prop_assert_eq!(a.add(&SparsePoly::zero(4)), a.clone());
        prop_assert!(a.sub(&a).is_zero());
    }

    #[test]
    fn multiplication_laws(a in arb_poly(4), b in arb_poly(4), c in arb_poly(4)) {
        let one = SparsePoly::constant(4, 1.0);
        prop_assert_eq!(a.mul(&one), a.clone());
        prop_assert!(a.mul(&SparsePoly::zero(4)).is_zero());
        prop_assert_eq!(a.mul(&b), b.mul(&a));
        prop_assert_eq!(a.mul(&b).mul(&c), a.mul(&b.mul(&c)));
        prop_assert_eq!(a.add(&b).mul(&c), a.mul(&c).add(&b.mul(&c)));
    }

    #[test]
    fn evaluation_is_a_ring_homomorphism(a in arb_poly(3), b in arb_poly(3), x in prop::collection::vec(-1.5f64..1.5, 3)) {
        let tol = 1e-9 * (1.0 + a.eval(&x).abs() * b.eval(&x).abs());
        prop_assert!((a.mul(&b).eval(&x) - a.eval(&x) * b.eval(&x)).abs() < tol);
        prop_assert!((a.add(&b).eval(&x) - a.eval(&x) - b.eval(&x)).abs() < 1e-9);
    }

    #[test]
    fn degree_is_additive(a in arb_poly(3), b in arb_poly(3)) {
        prop_assume!(!a.is_zero() && !b.is_zero());
        prop_assert_eq!(a.mul(&b).degree(), a.degree() + b.degree());
    }
}

#[test]
fn rotation_constraints_vanish_on_expmap_rotations() {
    let mut rng = common::rng(2024);
    for k in [1, 3, 6] {
        let h = so3_constraints(k);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let r = common::expmap_rotation(&mut rng);
            let c: Vec<f64> = (0..k).map(|_| rng.random()).collect();
            let x = point(&c, &r);
            worst = h.iter().map(|p| p.eval(&x).abs()).fold(worst, f64::max);
        }
        assert!(worst < 1e-12, "K={k}: max |h| = {worst:e}");
    }
}

#[test]
fn reflections_violate_handedness() {
    let mut rng = common::rng(7);
    let h = so3_constraints(2);
    for _ in 0..100 {
        let r = -common::expmap_rotation(&mut rng);
        let x = point(&[0.5, 0.5], &r);
        let vals: Vec<f64> = h.iter().map(|p| p.eval(&x)).collect();
        // Orthonormality holds; every cross-product row is off by 2 r_j.
        assert!(vals[..6].iter().all(|v| v.abs() < 1e-12));
        let worst = vals[6..].iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(worst > 0.5, "reflection accepted: {worst}");
    }
}

#[test]
fn archimedean_identity_holds_exactly() {
    for k in 1..=30 {
        assert!(check_archimedean_identity(k), "K={k}");
        assert!(archimedean_residual(k, &so3_constraints(k)).is_zero());
    }
    assert!(!check_archimedean_identity(0));
}

#[test]
fn bounds_hold_on_the_unit_box() {
    let mut rng = common::rng(3);
    let g = bound_constraints(4);
    for _ in 0..200 {
        let (c, r) = common::feasible_point(4, &mut rng);
        assert!(g.iter().all(|p| p.eval(&point(&c, &r)) >= 0.0));
    }
}

/// Direct evaluation of `sum_i |z~_i - (R sum_k c_k B~_ki)_{1:2}|^2 + alpha sum_k c_k`
/// with explicit loops, valid at any point (not only feasible ones).
fn naive_objective(prob: &CenteredProblem, x: &[f64]) -> f64 {
    let k = prob.num_bases();
    let r = |row: usize, col: usize| x[k + 3 * col + row];
    let mut total = 0.0;
    for i in 0..prob.z_tilde.ncols() {
        for a in 0..2 {
            let mut proj = 0.0;
            for (kk, b) in prob.b_tilde.iter().enumerate() {
                for j in 0..3 {
                    proj += x[kk] * r(a, j) * b[(j, i)];
                }
            }
            let e = prob.z_tilde[(a, i)] - proj;
            total += e * e;
        }
    }
    total + prob.alpha * x[..k].iter().sum::<f64>()
}

fn random_problem(k: usize, n: usize, alpha: f64, seed: u64) -> CenteredProblem {
    let mut rng = common::rng(seed);
    let bases = (0..k)
        .map(|_| Matrix3xX::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let z = Matrix2xX::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let model = DeformableModel::new(bases).unwrap();
    let obs = Observation::new(z, Some(w), (1.0, 1.0)).unwrap();
    eliminate_translation(&model, &obs, alpha).unwrap()
}

#[test]
fn objective_polynomial_matches_direct_evaluation() {
    let prob = random_problem(2, 5, 0.1, 11);
    let f = build_objective(&prob);
    let mut rng = common::rng(12);
    for _ in 0..100 {
        let x: Vec<f64> = (0..11).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (got, want) = (f.eval(&x), naive_objective(&prob, &x));
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn objective_support_stays_in_family() {
    for (k, seed) in [(1, 1), (2, 2), (5, 3), (8, 4)] {
        let prob = random_problem(k, 12, 0.05, seed);
        let f = build_objective(&prob);
        let rep = objective_support(&f, k);
        assert!(rep.is_clean(), "K={k}: {:?}", rep.out_of_family);
        assert_eq!(rep.constant, 1);
        assert_eq!(rep.linear_c, k);
        assert!(rep.c_r <= 6 * k);
        assert!(f.degree() <= 4);
    }
}
