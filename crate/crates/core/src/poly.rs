//! Sparse multivariate polynomials over `x = (c_1..c_K, r_1..r_9)` and the
//! polynomial program for shape reconstruction.
//!
//! Monomials are fixed-width exponent vectors. Variable `i < K` is `c_{i+1}`;
//! variable `K + 3j + a` is entry `(a, j)` of the rotation (column-major).

use std::cmp::Ordering;
use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;

use crate::preprocess::CenteredProblem;

/// Coefficients with absolute value below this are dropped.
pub const PRUNE_TOL: f64 = 1e-14;

/// Exponent vector, ordered graded-lexicographically with
/// `c_1 < ... < c_K < r_1 < ... < r_9` (so `1, c_1, ..., r_9, c_1^2, ...`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(Box<[u8]>);

impl Monomial {
    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars].into_boxed_slice())
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Monomial(e.into_boxed_slice())
    }

    pub fn from_exponents(e: Vec<u8>) -> Self {
        Monomial(e.into_boxed_slice())
    }

    pub fn exponents(&self) -> &[u8] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&e| e as u32).sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.nvars(), other.nvars());
        Monomial(self.0.iter().zip(other.0.iter()).map(|(a, b)| a + b).collect())
    }

    /// Degree in the first `k` variables (the coefficients).
    pub fn c_degree(&self, k: usize) -> u32 {
        self.0[..k].iter().map(|&e| e as u32).sum()
    }

    /// Degree in the rotation variables.
    pub fn r_degree(&self, k: usize) -> u32 {
        self.0[k..].iter().map(|&e| e as u32).sum()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .filter(|(e, _)| **e > 0)
            .map(|(&e, v)| v.powi(e as i32))
            .product()
    }

    /// Human-readable form using `c`/`r` names for a program with `k` bases.
    pub fn display(&self, k: usize) -> String {
        let mut parts = Vec::new();
        for (i, &e) in self.0.iter().enumerate() {
            if e == 0 {
                continue;
            }
            let name = if i < k {
                format!("c{}", i + 1)
            } else {
                format!("r{}", i - k + 1)
            };
            if e == 1 {
                parts.push(name);
            } else {
                parts.push(format!("{name}^{e}"));
            }
        }
        if parts.is_empty() {
            "1".to_string()
        } else {
            parts.join("*")
        }
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All monomials of total degree `<= d` in `nvars` variables, in canonical order.
pub fn monomials_up_to(nvars: usize, d: u32) -> Vec<Monomial> {
    fn rec(pos: usize, left: u32, cur: &mut Vec<u8>, out: &mut Vec<Monomial>) {
        if pos == cur.len() {
            out.push(Monomial::from_exponents(cur.clone()));
            return;
        }
        for e in 0..=left {
            cur[pos] = e as u8;
            rec(pos + 1, left - e, cur, out);
        }
        cur[pos] = 0;
    }
    let mut out = Vec::new();
    rec(0, d, &mut vec![0; nvars], &mut out);
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoly {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl SparsePoly {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, v: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::one(nvars), v);
        p
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::var(nvars, i), 1.0);
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, c)| (m, *c))
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Adds `v * m`, pruning the entry if it cancels.
    pub fn add_term(&mut self, m: Monomial, v: f64) {
        assert_eq!(m.nvars(), self.nvars, "monomial arity mismatch");
        match self.terms.entry(m) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += v;
                if o.get().abs() < PRUNE_TOL {
                    o.remove();
                }
            }
            Entry::Vacant(slot) => {
                if v.abs() >= PRUNE_TOL {
                    slot.insert(v);
                }
            }
        }
    }

    pub fn add(&self, other: &SparsePoly) -> SparsePoly {
        let mut out = self.clone();
        for (m, c) in other.terms() {
            out.add_term(m.clone(), c);
        }
        out
    }

    pub fn sub(&self, other: &SparsePoly) -> SparsePoly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> SparsePoly {
        let mut out = SparsePoly::zero(self.nvars);
        for (m, c) in self.terms() {
            out.add_term(m.clone(), c * s);
        }
        out
    }

    pub fn mul(&self, other: &SparsePoly) -> SparsePoly {
        poly_mul(self, other)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nvars, "point dimension mismatch");
        self.terms.iter().map(|(m, c)| c * m.eval(x)).sum()
    }

    fn from_accumulated(nvars: usize, acc: BTreeMap<Monomial, f64>) -> SparsePoly {
        let terms = acc.into_iter().filter(|(_, c)| c.abs() >= PRUNE_TOL).collect();
        SparsePoly { nvars, terms }
    }
}

impl fmt::Display for SparsePoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(m, c)| format!("{c}*{}", m.display(0)))
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// Exact distributive product.
pub fn poly_mul(a: &SparsePoly, b: &SparsePoly) -> SparsePoly {
    assert_eq!(a.nvars, b.nvars, "polynomial arity mismatch");
    let mut acc: BTreeMap<Monomial, f64> = BTreeMap::new();
    for (ma, ca) in a.terms() {
        for (mb, cb) in b.terms() {
            *acc.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
        }
    }
    SparsePoly::from_accumulated(a.nvars, acc)
}

/// Which of the 15 rotation constraints to impose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum So3ConstraintSet {
    /// Unit columns, pairwise orthogonality and the three handedness triplets.
    #[default]
    All15,
    /// Unit columns and handedness triplets only (drops the orthogonality rows).
    Subset12,
}

/// Index of rotation entry `(row, col)` among all variables.
fn r_index(k: usize, row: usize, col: usize) -> usize {
    k + 3 * col + row
}

/// The 15 quadratic equalities defining SO(3), over `k + 9` variables:
/// `h1..h3 = 1 - |r_j|^2`, `h4 = r1.r2`, `h5 = r2.r3`, `h6 = r3.r1`, then
/// `r1 x r2 - r3`, `r2 x r3 - r1`, `r3 x r1 - r2` (three components each).
pub fn so3_constraints(k: usize) -> Vec<SparsePoly> {
    let n = k + 9;
    let r = |row: usize, col: usize| SparsePoly::var(n, r_index(k, row, col));
    let one = SparsePoly::constant(n, 1.0);
    let dot = |a: usize, b: usize| {
        (0..3).fold(SparsePoly::zero(n), |acc, row| acc.add(&r(row, a).mul(&r(row, b))))
    };
    let mut h = Vec::with_capacity(15);
    for j in 0..3 {
        h.push(one.sub(&dot(j, j)));
    }
    h.push(dot(0, 1));
    h.push(dot(1, 2));
    h.push(dot(2, 0));
    for (a, b, c) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        for row in 0..3 {
            let (i1, i2) = ((row + 1) % 3, (row + 2) % 3);
            let cross = r(i1, a).mul(&r(i2, b)).sub(&r(i2, a).mul(&r(i1, b)));
            h.push(cross.sub(&r(row, c)));
        }
    }
    h
}

pub fn so3_constraint_subset(k: usize, set: So3ConstraintSet) -> Vec<SparsePoly> {
    let all = so3_constraints(k);
    match set {
        So3ConstraintSet::All15 => all,
        So3ConstraintSet::Subset12 => all
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !(3..6).contains(i))
            .map(|(_, p)| p)
            .collect(),
    }
}

/// `g_k = c_k` for `k <= K` and `g_{K+k} = 1 - c_k^2`.
pub fn bound_constraints(k: usize) -> Vec<SparsePoly> {
    let n = k + 9;
    let mut g: Vec<SparsePoly> = (0..k).map(|i| SparsePoly::var(n, i)).collect();
    for i in 0..k {
        let c = SparsePoly::var(n, i);
        g.push(SparsePoly::constant(n, 1.0).sub(&c.mul(&c)));
    }
    g
}

/// `(K + 3 - |x|^2) - (sum_k g_{K+k} + h_1 + h_2 + h_3)`, computed exactly.
pub fn archimedean_residual(k: usize, h: &[SparsePoly]) -> SparsePoly {
    let n = k + 9;
    let mut lhs = SparsePoly::constant(n, (k + 3) as f64);
    for i in 0..n {
        let x = SparsePoly::var(n, i);
        lhs = lhs.sub(&x.mul(&x));
    }
    let g = bound_constraints(k);
    let mut rhs = SparsePoly::zero(n);
    for gk in &g[k..] {
        rhs = rhs.add(gk);
    }
    for hi in &h[..3] {
        rhs = rhs.add(hi);
    }
    lhs.sub(&rhs)
}

/// True iff `K + 3 - |x|^2` equals `sum_k (1 - c_k^2) + h_1 + h_2 + h_3`
/// coefficient by coefficient, certifying the constraint set is Archimedean
/// with radius `M = K + 3`.
pub fn check_archimedean_identity(k: usize) -> bool {
    k >= 1 && archimedean_residual(k, &so3_constraints(k)).is_zero()
}

/// Polynomial program `min f s.t. h_i = 0, g_k >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyProgram {
    pub k: usize,
    pub objective: SparsePoly,
    pub equalities: Vec<SparsePoly>,
    pub inequalities: Vec<SparsePoly>,
}

impl PolyProgram {
    pub fn new(prob: &CenteredProblem, set: So3ConstraintSet) -> Self {
        let k = prob.num_bases();
        Self {
            k,
            objective: build_objective(prob),
            equalities: so3_constraint_subset(k, set),
            inequalities: bound_constraints(k),
        }
    }

    pub fn nvars(&self) -> usize {
        self.k + 9
    }
}

/// Expand `sum_i ||z~_i - Pi R sum_k c_k B~_ki||^2 + alpha sum_k c_k`.
///
/// With `e_a = z~_a - sum_{k,j} c_k r_{(a,j)} B~_k[j]` for image axis `a`,
/// the expansion only needs the data moments `sum_i z~_i[a] B~_ki[j]` and
/// `sum_i B~_ki[j] B~_k'i[j']`.
pub fn build_objective(prob: &CenteredProblem) -> SparsePoly {
    let k = prob.num_bases();
    let n = k + 9;
    let npts = prob.z_tilde.ncols();
    let mut acc: BTreeMap<Monomial, f64> = BTreeMap::new();
    let mut add = |e: Vec<u8>, v: f64| {
        *acc.entry(Monomial::from_exponents(e)).or_insert(0.0) += v;
    };

    let zz: f64 = prob.z_tilde.norm_squared();
    add(vec![0; n], zz);

    // Linear-in-(c r) cross terms.
    for kk in 0..k {
        for j in 0..3 {
            for a in 0..2 {
                let s: f64 = (0..npts).map(|i| prob.z_tilde[(a, i)] * prob.b_tilde[kk][(j, i)]).sum();
                let mut e = vec![0; n];
                e[kk] += 1;
                e[r_index(k, a, j)] += 1;
                add(e, -2.0 * s);
            }
        }
    }

    // Quadratic terms from the Gram of centered basis coordinates.
    for k1 in 0..k {
        for j1 in 0..3 {
            for k2 in 0..k {
                for j2 in 0..3 {
                    let g: f64 = (0..npts)
                        .map(|i| prob.b_tilde[k1][(j1, i)] * prob.b_tilde[k2][(j2, i)])
                        .sum();
                    for a in 0..2 {
                        let mut e = vec![0; n];
                        e[k1] += 1;
                        e[k2] += 1;
                        e[r_index(k, a, j1)] += 1;
                        e[r_index(k, a, j2)] += 1;
                        add(e, g);
                    }
                }
            }
        }
    }

    if prob.alpha != 0.0 {
        for kk in 0..k {
            let mut e = vec![0; n];
            e[kk] = 1;
            add(e, prob.alpha);
        }
    }
    SparsePoly::from_accumulated(n, acc)
}

/// Monomial families an objective may contain.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SupportReport {
    pub constant: usize,
    pub linear_c: usize,
    pub c_r: usize,
    pub cc_rr: usize,
    pub out_of_family: Vec<Monomial>,
}

impl SupportReport {
    pub fn is_clean(&self) -> bool {
        self.out_of_family.is_empty()
    }
}

/// Classify each monomial of `f` into `1`, `c_k`, `c_k r_j`,
/// `c_k1 c_k2 r_j1 r_j2`; anything else is reported as out of family.
pub fn objective_support(f: &SparsePoly, k: usize) -> SupportReport {
    let mut rep = SupportReport::default();
    for (m, _) in f.terms() {
        match (m.c_degree(k), m.r_degree(k)) {
            (0, 0) => rep.constant += 1,
            (1, 0) => rep.linear_c += 1,
            (1, 1) => rep.c_r += 1,
            (2, 2) => rep.cc_rr += 1,
            _ => rep.out_of_family.push(m.clone()),
        }
    }
    rep
}
