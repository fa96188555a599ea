mod common;

use std::collections::BTreeSet;

use rand::Rng;

use shapecert::certify::SolveSettings;
use shapecert::model::vec_rotation;
use shapecert::poly::{bound_constraints, so3_constraints, Monomial, PolyProgram, So3ConstraintSet, SparsePoly};
use shapecert::relax::{assemble_sdp, build_basis, support_union, Variant};
use shapecert::sdp::{SdpSettings, SdpStatus};
use shapecert::Error;

fn binom(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[test]
fn basis_sizes_match_closed_forms() {
    for k in [1, 2, 5, 10] {
        let red = build_basis(k, Variant::Reduced2).unwrap();
        assert_eq!(red.gram_basis.len(), 10 * k + 10);
        assert_eq!(red.ineq_basis.len(), 10);
        assert_eq!(red.eq_basis.len(), binom(k + 2, 2));
        let full = build_basis(k, Variant::Full2).unwrap();
        assert_eq!(full.gram_basis.len(), binom(k + 11, 2));
        assert_eq!(full.ineq_basis.len(), k + 10);
        assert_eq!(full.eq_basis.len(), binom(k + 11, 2));
        assert!(red.gram_basis[0].is_one() && full.gram_basis[0].is_one());
    }
    assert_eq!(build_basis(5, Variant::Full2).unwrap().gram_basis.len(), 120);
    assert_eq!(build_basis(5, Variant::Reduced2).unwrap().gram_basis.len(), 60);
    assert_eq!(build_basis(5, Variant::Reduced2).unwrap().eq_basis.len(), 21);
    assert!(build_basis(0, Variant::Reduced2).is_err());
}

fn program(k: usize, seed: u64) -> PolyProgram {
    let inst = common::instance(k, 12, 0.01, seed);
    PolyProgram::new(&common::centered(&inst, 0.0), So3ConstraintSet::All15)
}

/// Every monomial any product on the right-hand side can produce, by
/// exhaustive enumeration.
fn brute_force_support(prog: &PolyProgram, k: usize, variant: Variant) -> BTreeSet<Monomial> {
    let spec = build_basis(k, variant).unwrap();
    let mut out = BTreeSet::new();
    for a in &spec.gram_basis {
        for b in &spec.gram_basis {
            out.insert(a.mul(b));
        }
    }
    for g in &prog.inequalities {
        for a in &spec.ineq_basis {
            for b in &spec.ineq_basis {
                for (t, _) in g.terms() {
                    out.insert(t.mul(&a.mul(b)));
                }
            }
        }
    }
    for h in &prog.equalities {
        for w in &spec.eq_basis {
            for (t, _) in h.terms() {
                out.insert(t.mul(w));
            }
        }
    }
    for (m, _) in prog.objective.terms() {
        out.insert(m.clone());
    }
    out.insert(Monomial::one(prog.nvars()));
    out
}

#[test]
fn support_matches_brute_force_enumeration() {
    for (k, variant) in [(1, Variant::Reduced2), (2, Variant::Reduced2), (1, Variant::Full2)] {
        let prog = program(k, 3);
        let spec = build_basis(k, variant).unwrap();
        let support = support_union(&prog, &spec);
        let brute: Vec<Monomial> = brute_force_support(&prog, k, variant).into_iter().collect();
        assert_eq!(support, brute, "K={k} {variant:?}");
        let relax = assemble_sdp(&prog, &spec).unwrap();
        assert_eq!(relax.problem.constraints.len(), support.len());
    }
}

#[test]
fn reduced_support_families() {
    let prog = program(1, 4);
    let support = support_union(&prog, &build_basis(1, Variant::Reduced2).unwrap());
    for m in &support {
        assert!(m.r_degree(1) <= 2, "{}", m.display(1));
        assert!(m.c_degree(1) <= 2, "{}", m.display(1));
    }
    let n = 10;
    let c1 = Monomial::var(n, 0);
    let r = |j: usize| Monomial::var(n, 1 + j);
    for expected in [
        Monomial::one(n),
        c1.clone(),
        r(0),
        c1.mul(&r(4)),
        r(2).mul(&r(7)),
        c1.mul(&c1),
        c1.mul(&c1).mul(&r(3)),
        c1.mul(&r(1)).mul(&r(5)),
        c1.mul(&c1).mul(&r(0)).mul(&r(8)),
    ] {
        assert!(support.contains(&expected), "missing {}", expected.display(1));
    }
}

#[test]
fn k1_reduced_layout() {
    let prog = program(1, 5);
    let relax = assemble_sdp(&prog, &build_basis(1, Variant::Reduced2).unwrap()).unwrap();
    assert_eq!(relax.problem.block_sizes, vec![20, 10, 10]);
    assert_eq!(relax.spec.eq_basis.len(), 3);
    assert_eq!(relax.num_equalities, 15);
    assert_eq!(relax.gamma_index, 45);
    // gamma enters only the constant equation
    let with_gamma: Vec<_> = relax
        .problem
        .constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| c.free.iter().any(|(v, _)| *v == relax.gamma_index))
        .collect();
    assert_eq!(with_gamma.len(), 1);
    assert!(relax.support[with_gamma[0].0].is_one());
}

#[test]
fn unrepresentable_objective_is_named() {
    let k = 1;
    let n = k + 9;
    let r1 = SparsePoly::var(n, 1);
    let prog = PolyProgram {
        k,
        objective: r1.mul(&r1).mul(&r1).mul(&r1),
        equalities: so3_constraints(k),
        inequalities: bound_constraints(k),
    };
    match assemble_sdp(&prog, &build_basis(k, Variant::Reduced2).unwrap()) {
        Err(Error::InfeasibleStructure { monomial }) => assert!(monomial.contains("r1"), "{monomial}"),
        other => panic!("expected a structure error, got {other:?}"),
    }
}

#[test]
fn constant_objective_gives_its_value() {
    let k = 1;
    let prog = PolyProgram {
        k,
        objective: SparsePoly::constant(k + 9, 5.0),
        equalities: so3_constraints(k),
        inequalities: bound_constraints(k),
    };
    let relax = assemble_sdp(&prog, &build_basis(k, Variant::Reduced2).unwrap()).unwrap();
    let sol = relax.solve(&SdpSettings::default()).unwrap();
    assert!((sol.gamma - 5.0).abs() < 1e-6, "{}", sol.gamma);
}

#[test]
fn solved_relaxation_is_a_polynomial_identity_and_a_lower_bound() {
    let k = 2;
    let prog = program(k, 6);
    let relax = assemble_sdp(&prog, &build_basis(k, Variant::Reduced2).unwrap()).unwrap();
    let sol = relax.solve(&SdpSettings::default()).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    for block in &sol.gram_blocks {
        assert!(block.clone().symmetric_eigenvalues().min() >= -1e-7);
    }

    let rhs = relax.rhs_polynomial(&sol);
    let diff = prog.objective.sub(&rhs);
    let max_coef = diff.terms().map(|(_, v)| v.abs()).fold(0.0, f64::max);
    assert!(max_coef < 1e-6, "identity residual {max_coef:e}");

    let mut rng = common::rng(60);
    let n = prog.nvars();
    for _ in 0..1000 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gap = prog.objective.eval(&x) - rhs.eval(&x);
        assert!(gap.abs() < 1e-7, "pointwise residual {gap:e}");
    }
    for _ in 0..1000 {
        let (c, r) = common::feasible_point(k, &mut rng);
        let mut x = c.clone();
        x.extend_from_slice(&vec_rotation(&r));
        assert!(sol.gamma <= prog.objective.eval(&x) + 1e-6);
    }
}

#[test]
fn reduced_and_full_agree_on_gamma() {
    let inst = common::instance(2, 40, 0.01, 9);
    let prob = common::centered(&inst, 0.0);
    let red = common::solve(&prob, &SolveSettings::default());
    let full = common::solve(
        &prob,
        &SolveSettings {
            variant: Variant::Full2,
            ..SolveSettings::default()
        },
    );
    let rel = (red.gamma - full.gamma).abs() / red.gamma.abs();
    assert!(rel < 1e-5, "reduced {} full {} rel {rel:e}", red.gamma, full.gamma);
    assert_eq!(red.gram_side, 30);
    assert_eq!(full.gram_side, 78);
}
