//! Elimination of zero-cost free variables.
//!
//! Free variables that do not appear in the objective only require the
//! constraint residual to lie in the span of their columns. Projecting every
//! constraint onto the orthogonal complement of that span removes them from
//! the interior-point iteration entirely; their values are recovered by least
//! squares afterwards. The columns are split into connected components (rows
//! linked through shared variables) so the projection is block diagonal.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::SdpProblem;

/// Relative eigenvalue threshold separating range from null space.
const RANK_TOL: f64 = 1e-9;

/// A set of original rows mapped to `len` reduced rows starting at `offset`.
#[derive(Debug, Clone)]
pub(crate) struct RowGroup {
    pub rows: Vec<usize>,
    pub offset: usize,
    /// Orthonormal rows spanning the complement of the eliminated columns
    /// (`len x rows.len()`); `None` means the identity.
    pub basis: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
struct Component {
    rows: Vec<usize>,
    vars: Vec<usize>,
    /// Minimum-norm least-squares solver, `vars x rows`.
    pinv: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Reduction {
    pub m_orig: usize,
    pub m_reduced: usize,
    pub groups: Vec<RowGroup>,
    /// Free variables kept in the iteration (nonzero cost).
    pub kept: Vec<usize>,
    components: Vec<Component>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

impl Reduction {
    pub fn new(problem: &SdpProblem) -> Self {
        let m = problem.constraints.len();
        let nfree = problem.free_cost.len();
        let eliminated: Vec<bool> = problem.free_cost.iter().map(|c| *c == 0.0).collect();
        let kept: Vec<usize> = (0..nfree).filter(|&v| !eliminated[v]).collect();

        // Column structure of the eliminated variables.
        let mut var_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nfree];
        for (i, con) in problem.constraints.iter().enumerate() {
            for &(v, coef) in &con.free {
                if eliminated[v] && coef != 0.0 {
                    var_rows[v].push((i, coef));
                }
            }
        }

        let mut parent: Vec<usize> = (0..m).collect();
        for rows in &var_rows {
            if let Some(&(first, _)) = rows.first() {
                for &(r, _) in &rows[1..] {
                    let (a, b) = (find(&mut parent, first), find(&mut parent, r));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }

        let mut comp_of_root: Vec<Option<usize>> = vec![None; m];
        let mut comp_rows: Vec<Vec<usize>> = Vec::new();
        let mut comp_vars: Vec<Vec<usize>> = Vec::new();
        for (v, rows) in var_rows.iter().enumerate() {
            if let Some(&(first, _)) = rows.first() {
                let root = find(&mut parent, first);
                let c = *comp_of_root[root].get_or_insert_with(|| {
                    comp_rows.push(Vec::new());
                    comp_vars.push(Vec::new());
                    comp_rows.len() - 1
                });
                comp_vars[c].push(v);
            }
        }
        let mut identity_rows = Vec::new();
        for i in 0..m {
            let root = find(&mut parent, i);
            match comp_of_root[root] {
                Some(c) => comp_rows[c].push(i),
                None => identity_rows.push(i),
            }
        }

        let mut groups = Vec::new();
        let mut components = Vec::new();
        let mut offset = 0;
        if !identity_rows.is_empty() {
            let len = identity_rows.len();
            groups.push(RowGroup {
                rows: identity_rows,
                offset,
                basis: None,
            });
            offset += len;
        }
        for (rows, vars) in comp_rows.into_iter().zip(comp_vars) {
            let mut local = vec![usize::MAX; m];
            for (li, &r) in rows.iter().enumerate() {
                local[r] = li;
            }
            let mut h = DMatrix::<f64>::zeros(rows.len(), vars.len());
            for (lj, &v) in vars.iter().enumerate() {
                for &(r, coef) in &var_rows[v] {
                    h[(local[r], lj)] += coef;
                }
            }
            let gram = &h * h.transpose();
            let eig = SymmetricEigen::new(gram);
            let top = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
            let cut = RANK_TOL * top.max(1.0);
            let null: Vec<usize> = (0..rows.len()).filter(|&i| eig.eigenvalues[i] <= cut).collect();
            let range: Vec<usize> = (0..rows.len()).filter(|&i| eig.eigenvalues[i] > cut).collect();

            let mut basis = DMatrix::zeros(null.len(), rows.len());
            for (k, &i) in null.iter().enumerate() {
                basis.row_mut(k).copy_from(&eig.eigenvectors.column(i).transpose());
            }
            // pinv = H^T V_r diag(1/lambda) V_r^T
            let mut vr = DMatrix::zeros(rows.len(), range.len());
            for (k, &i) in range.iter().enumerate() {
                vr.column_mut(k)
                    .copy_from(&(eig.eigenvectors.column(i) / eig.eigenvalues[i].sqrt()));
            }
            let pinv = h.transpose() * &vr * vr.transpose();

            let len = basis.nrows();
            groups.push(RowGroup {
                rows: rows.clone(),
                offset,
                basis: Some(basis),
            });
            offset += len;
            components.push(Component { rows, vars, pinv });
        }

        Reduction {
            m_orig: m,
            m_reduced: offset,
            groups,
            kept,
            components,
        }
    }

    /// `P v` for a vector over original rows.
    pub fn reduce(&self, v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.m_reduced);
        for g in &self.groups {
            match &g.basis {
                None => {
                    for (k, &r) in g.rows.iter().enumerate() {
                        out[g.offset + k] = v[r];
                    }
                }
                Some(b) => {
                    let local = DVector::from_iterator(g.rows.len(), g.rows.iter().map(|&r| v[r]));
                    out.rows_mut(g.offset, b.nrows()).copy_from(&(b * local));
                }
            }
        }
        out
    }

    /// `P^T y` for a vector over reduced rows.
    pub fn expand(&self, y: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.m_orig];
        for g in &self.groups {
            match &g.basis {
                None => {
                    for (k, &r) in g.rows.iter().enumerate() {
                        out[r] = y[g.offset + k];
                    }
                }
                Some(b) => {
                    let local = b.tr_mul(&y.rows(g.offset, b.nrows()).into_owned());
                    for (k, &r) in g.rows.iter().enumerate() {
                        out[r] = local[k];
                    }
                }
            }
        }
        out
    }

    /// `P M P^T` for a symmetric matrix over original rows.
    pub fn project_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.m_orig;
        // T = M P^T
        let mut t = DMatrix::zeros(n, self.m_reduced);
        for g in &self.groups {
            let cols = m.select_columns(g.rows.iter());
            match &g.basis {
                None => t.columns_mut(g.offset, g.rows.len()).copy_from(&cols),
                Some(b) => t.columns_mut(g.offset, b.nrows()).copy_from(&(cols * b.transpose())),
            }
        }
        // P T
        let mut out = DMatrix::zeros(self.m_reduced, self.m_reduced);
        for g in &self.groups {
            let rows = t.select_rows(g.rows.iter());
            match &g.basis {
                None => out.rows_mut(g.offset, g.rows.len()).copy_from(&rows),
                Some(b) => out.rows_mut(g.offset, b.nrows()).copy_from(&(b * rows)),
            }
        }
        out
    }

    /// Least-squares values of the eliminated variables given the residual
    /// `b - A(X) - G u_kept` over original rows.
    pub fn recover(&self, residual: &[f64], free: &mut [f64]) {
        for c in &self.components {
            let local = DVector::from_iterator(c.rows.len(), c.rows.iter().map(|&r| residual[r]));
            let vals = &c.pinv * local;
            for (k, &v) in c.vars.iter().enumerate() {
                free[v] = vals[k];
            }
        }
    }
}
