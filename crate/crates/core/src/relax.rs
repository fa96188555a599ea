//! Order-2 sums-of-squares relaxation posed as a block semidefinite program.
//!
//! The identity imposed coefficient by coefficient is
//!
//! ```text
//! f(x) - gamma = m(x)^T S_0 m(x) + sum_k g_k(x) v(x)^T S_k v(x) + sum_i h_i(x) lambda_i^T w(x)
//! ```
//!
//! with `m`, `v`, `w` the Gram, inequality-multiplier and equality-multiplier
//! monomial bases. Block 0 of the SDP is `S_0`, blocks `1..=2K` are the `S_k`
//! in the order of the program's inequalities. The free variables are the
//! `lambda_i` stacked in order, followed by `gamma`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::poly::{monomials_up_to, Monomial, PolyProgram, SparsePoly};
use crate::sdp::{self, LinearConstraint, PsdEntry, SdpProblem, SdpSettings, SdpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// Dense bases: `[x]_2` for the Gram block and equality multipliers,
    /// `[x]_1` for inequality multipliers.
    Full2,
    /// Sparse bases `[1, c, r, c (x) r]`, `[1, r]` and `[c]_2`.
    #[default]
    Reduced2,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full2" => Ok(Variant::Full2),
            "reduced" | "reduced2" => Ok(Variant::Reduced2),
            _ => Err(Error::invalid(format!("unknown relaxation variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    pub gram_basis: Vec<Monomial>,
    pub ineq_basis: Vec<Monomial>,
    pub eq_basis: Vec<Monomial>,
    pub variant: Variant,
}

fn c_var(n: usize, k: usize) -> Monomial {
    Monomial::var(n, k)
}

fn r_var(n: usize, k: usize, j: usize) -> Monomial {
    Monomial::var(n, k + j)
}

pub fn build_basis(k: usize, variant: Variant) -> Result<BasisSpec> {
    if k == 0 {
        return Err(Error::invalid("relaxation needs at least one basis shape"));
    }
    let n = k + 9;
    Ok(match variant {
        Variant::Full2 => BasisSpec {
            gram_basis: monomials_up_to(n, 2),
            ineq_basis: monomials_up_to(n, 1),
            eq_basis: monomials_up_to(n, 2),
            variant,
        },
        Variant::Reduced2 => {
            let mut gram = vec![Monomial::one(n)];
            gram.extend((0..k).map(|i| c_var(n, i)));
            gram.extend((0..9).map(|j| r_var(n, k, j)));
            for i in 0..k {
                for j in 0..9 {
                    gram.push(c_var(n, i).mul(&r_var(n, k, j)));
                }
            }
            let mut ineq = vec![Monomial::one(n)];
            ineq.extend((0..9).map(|j| r_var(n, k, j)));
            let mut eq = vec![Monomial::one(n)];
            eq.extend((0..k).map(|i| c_var(n, i)));
            for i in 0..k {
                for j in i..k {
                    eq.push(c_var(n, i).mul(&c_var(n, j)));
                }
            }
            eq.sort();
            BasisSpec {
                gram_basis: gram,
                ineq_basis: ineq,
                eq_basis: eq,
                variant,
            }
        }
    })
}

fn check_arity(prog: &PolyProgram, spec: &BasisSpec) -> Result<()> {
    let n = prog.nvars();
    let all = spec.gram_basis.iter().chain(&spec.ineq_basis).chain(&spec.eq_basis);
    if all.clone().any(|m| m.nvars() != n) {
        return Err(Error::invalid("basis arity does not match the program"));
    }
    if prog.objective.degree() > 4 {
        return Err(Error::invalid("objective degree exceeds 4"));
    }
    Ok(())
}

/// Monomials produced by the right-hand side, mapped to their contributions.
#[derive(Default)]
struct Contributions {
    psd: Vec<PsdEntry>,
    free: Vec<(usize, f64)>,
}

fn rhs_contributions(prog: &PolyProgram, spec: &BasisSpec) -> BTreeMap<Monomial, Contributions> {
    let mut map: BTreeMap<Monomial, Contributions> = BTreeMap::new();
    let gb = &spec.gram_basis;
    for i in 0..gb.len() {
        for j in i..gb.len() {
            let coef = if i == j { 1.0 } else { 2.0 };
            map.entry(gb[i].mul(&gb[j]))
                .or_default()
                .psd
                .push(PsdEntry::new(0, i, j, coef));
        }
    }
    let vb = &spec.ineq_basis;
    for (kk, g) in prog.inequalities.iter().enumerate() {
        for i in 0..vb.len() {
            for j in i..vb.len() {
                let sym = if i == j { 1.0 } else { 2.0 };
                let base = vb[i].mul(&vb[j]);
                for (t, gc) in g.terms() {
                    map.entry(t.mul(&base))
                        .or_default()
                        .psd
                        .push(PsdEntry::new(kk + 1, i, j, sym * gc));
                }
            }
        }
    }
    let wb = &spec.eq_basis;
    for (hi, h) in prog.equalities.iter().enumerate() {
        for (a, w) in wb.iter().enumerate() {
            for (t, hc) in h.terms() {
                map.entry(t.mul(w))
                    .or_default()
                    .free
                    .push((hi * wb.len() + a, hc));
            }
        }
    }
    map
}

/// Sorted union of the objective support and every monomial the
/// right-hand side can produce.
pub fn support_union(prog: &PolyProgram, spec: &BasisSpec) -> Vec<Monomial> {
    let mut all: Vec<Monomial> = rhs_contributions(prog, spec).into_keys().collect();
    all.extend(prog.objective.terms().map(|(m, _)| m.clone()));
    all.push(Monomial::one(prog.nvars()));
    all.sort();
    all.dedup();
    all
}

/// An assembled relaxation together with the bookkeeping needed to read
/// polynomial objects back out of an SDP solution.
#[derive(Debug, Clone)]
pub struct SosRelaxation {
    pub spec: BasisSpec,
    /// One constraint row per monomial, in this order.
    pub support: Vec<Monomial>,
    pub problem: SdpProblem,
    pub num_equalities: usize,
    pub gamma_index: usize,
    equalities: Vec<SparsePoly>,
    inequalities: Vec<SparsePoly>,
}

/// Trace weight on the dense Gram block. Every SO(3) constraint lies in the
/// span of `[x]_2`, so without it the dense relaxation has an unbounded
/// optimal face (`S_0 + t h h^T` balanced by the multipliers) and no strictly
/// feasible dual point. The penalty lowers `gamma` by at most
/// `FULL_TRACE_PENALTY * tr(S_0)` and keeps it a valid lower bound.
pub const FULL_TRACE_PENALTY: f64 = 1e-10;

pub fn assemble_sdp(prog: &PolyProgram, spec: &BasisSpec) -> Result<SosRelaxation> {
    check_arity(prog, spec)?;
    let n = prog.nvars();
    let mut contrib = rhs_contributions(prog, spec);
    for (m, _) in prog.objective.terms() {
        if !contrib.contains_key(m) {
            return Err(Error::InfeasibleStructure {
                monomial: m.display(prog.k),
            });
        }
    }
    let one = Monomial::one(n);
    contrib.entry(one.clone()).or_default();

    let num_eq = prog.equalities.len();
    let gamma_index = num_eq * spec.eq_basis.len();
    let mut block_sizes = vec![spec.gram_basis.len()];
    block_sizes.extend(std::iter::repeat_n(spec.ineq_basis.len(), prog.inequalities.len()));
    let mut free_cost = vec![0.0; gamma_index + 1];
    free_cost[gamma_index] = -1.0;

    let mut support = Vec::with_capacity(contrib.len());
    let mut constraints = Vec::with_capacity(contrib.len());
    for (m, c) in contrib {
        let mut free = c.free;
        if m == one {
            free.push((gamma_index, 1.0));
        }
        constraints.push(LinearConstraint {
            rhs: prog.objective.coeff(&m),
            psd: c.psd,
            free,
        });
        support.push(m);
    }

    let cost = match spec.variant {
        Variant::Full2 => (0..spec.gram_basis.len())
            .map(|i| PsdEntry::new(0, i, i, FULL_TRACE_PENALTY))
            .collect(),
        Variant::Reduced2 => Vec::new(),
    };

    Ok(SosRelaxation {
        spec: spec.clone(),
        support,
        problem: SdpProblem {
            block_sizes,
            cost,
            free_cost,
            constraints,
        },
        num_equalities: num_eq,
        gamma_index,
        equalities: prog.equalities.clone(),
        inequalities: prog.inequalities.clone(),
    })
}

/// Solved relaxation in polynomial terms.
#[derive(Debug, Clone)]
pub struct SosSolution {
    pub gamma: f64,
    /// `S_0` followed by the `S_k`.
    pub gram_blocks: Vec<DMatrix<f64>>,
    /// One multiplier vector per equality, over the equality basis.
    pub lambdas: Vec<Vec<f64>>,
    pub status: SdpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub wall_time: f64,
    /// Dual multipliers (moments up to sign) per support monomial.
    pub duals: Vec<f64>,
}

impl SosSolution {
    pub fn s0(&self) -> &DMatrix<f64> {
        &self.gram_blocks[0]
    }
}

impl SosRelaxation {
    pub fn solve(&self, settings: &SdpSettings) -> Result<SosSolution> {
        let sol = sdp::solve(&self.problem, settings)?;
        let len = self.spec.eq_basis.len();
        let lambdas = (0..self.num_equalities)
            .map(|i| sol.free[i * len..(i + 1) * len].to_vec())
            .collect();
        Ok(SosSolution {
            gamma: sol.free[self.gamma_index],
            gram_blocks: sol.blocks,
            lambdas,
            status: sol.status,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            gap: sol.gap,
            iterations: sol.iterations,
            wall_time: sol.wall_time,
            duals: sol.duals,
        })
    }

    /// `gamma + m^T S_0 m + sum g_k v^T S_k v + sum h_i lambda_i^T w` as a polynomial.
    pub fn rhs_polynomial(&self, sol: &SosSolution) -> SparsePoly {
        let n = self.spec.gram_basis[0].nvars();
        let quad = |basis: &[Monomial], s: &DMatrix<f64>| {
            let mut p = SparsePoly::zero(n);
            for i in 0..basis.len() {
                for j in 0..basis.len() {
                    p.add_term(basis[i].mul(&basis[j]), s[(i, j)]);
                }
            }
            p
        };
        let mut out = SparsePoly::constant(n, sol.gamma).add(&quad(&self.spec.gram_basis, &sol.gram_blocks[0]));
        for (k, g) in self.inequalities.iter().enumerate() {
            out = out.add(&g.mul(&quad(&self.spec.ineq_basis, &sol.gram_blocks[k + 1])));
        }
        for (h, lam) in self.equalities.iter().zip(&sol.lambdas) {
            let mut w = SparsePoly::zero(n);
            for (m, v) in self.spec.eq_basis.iter().zip(lam) {
                w.add_term(m.clone(), *v);
            }
            out = out.add(&h.mul(&w));
        }
        out
    }

    pub fn write_sparse_text<W: std::io::Write>(&self, w: W) -> Result<()> {
        self.problem.write_sparse_text(w)
    }
}
