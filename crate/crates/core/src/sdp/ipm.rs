//! HKM primal-dual path following with Mehrotra predictor-corrector steps.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::presolve::Reduction;
use super::{SdpProblem, SdpSettings, SdpSolution, SdpStatus};
use crate::error::Result;

/// Iterates whose norm exceeds this are taken as evidence of infeasibility.
const DIVERGENCE: f64 = 1e13;

/// Nonzeros of every constraint matrix, grouped by (row, col) of one block.
/// Both halves of an off-diagonal pair are stored, each with half the
/// triplet coefficient, so `map[p + q n]` describes the symmetric matrix.
struct EntryMap {
    n: usize,
    start: Vec<usize>,
    rows: Vec<usize>,
    coefs: Vec<f64>,
    /// Row and coefficient of indices touched by exactly one constraint;
    /// `usize::MAX` marks the others.
    single_row: Vec<usize>,
    single_coef: Vec<f64>,
}

impl EntryMap {
    fn entries(&self, idx: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.start[idx], self.start[idx + 1]);
        (&self.rows[a..b], &self.coefs[a..b])
    }
}

fn build_maps(problem: &SdpProblem) -> Vec<EntryMap> {
    let mut raw: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); problem.block_sizes.len()];
    for (i, con) in problem.constraints.iter().enumerate() {
        for e in &con.psd {
            let n = problem.block_sizes[e.block];
            if e.row == e.col {
                raw[e.block].push((e.row + e.col * n, i, e.coef));
            } else {
                raw[e.block].push((e.row + e.col * n, i, 0.5 * e.coef));
                raw[e.block].push((e.col + e.row * n, i, 0.5 * e.coef));
            }
        }
    }
    raw.into_iter()
        .zip(&problem.block_sizes)
        .map(|(mut list, &n)| {
            list.sort_by_key(|&(idx, row, _)| (idx, row));
            let mut start = vec![0; n * n + 1];
            for &(idx, _, _) in &list {
                start[idx + 1] += 1;
            }
            for k in 0..n * n {
                start[k + 1] += start[k];
            }
            let rows: Vec<usize> = list.iter().map(|t| t.1).collect();
            let coefs: Vec<f64> = list.iter().map(|t| t.2).collect();
            let mut single_row = vec![usize::MAX; n * n];
            let mut single_coef = vec![0.0; n * n];
            for idx in 0..n * n {
                if start[idx + 1] == start[idx] + 1 {
                    single_row[idx] = rows[start[idx]];
                    single_coef[idx] = coefs[start[idx]];
                }
            }
            EntryMap {
                n,
                start,
                rows,
                coefs,
                single_row,
                single_coef,
            }
        })
        .collect()
}

fn dense_cost(problem: &SdpProblem) -> Vec<DMatrix<f64>> {
    let mut c: Vec<DMatrix<f64>> = problem.block_sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    for e in &problem.cost {
        if e.row == e.col {
            c[e.block][(e.row, e.row)] += e.coef;
        } else {
            c[e.block][(e.row, e.col)] += 0.5 * e.coef;
            c[e.block][(e.col, e.row)] += 0.5 * e.coef;
        }
    }
    c
}

struct Operator {
    maps: Vec<EntryMap>,
    /// `(block, p, q, coef)` of every constraint, grouped by constraint.
    by_row: Vec<(usize, usize, usize, f64)>,
    by_row_start: Vec<usize>,
    red: Reduction,
    m: usize,
}

impl Operator {
    fn new(maps: Vec<EntryMap>, red: Reduction, m: usize) -> Self {
        let mut by_row_start = vec![0; m + 1];
        for map in &maps {
            for &r in &map.rows {
                by_row_start[r + 1] += 1;
            }
        }
        for i in 0..m {
            by_row_start[i + 1] += by_row_start[i];
        }
        let mut fill = by_row_start.clone();
        let mut by_row = vec![(0, 0, 0, 0.0); by_row_start[m]];
        for (blk, map) in maps.iter().enumerate() {
            for idx in 0..map.n * map.n {
                let (rows, coefs) = map.entries(idx);
                for (&r, &a) in rows.iter().zip(coefs) {
                    by_row[fill[r]] = (blk, idx % map.n, idx / map.n, a);
                    fill[r] += 1;
                }
            }
        }
        Operator {
            maps,
            by_row,
            by_row_start,
            red,
            m,
        }
    }

    fn apply_orig(&self, w: &[DMatrix<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (map, wb) in self.maps.iter().zip(w) {
            for (idx, &v) in wb.as_slice().iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let (rows, coefs) = map.entries(idx);
                for (&r, &a) in rows.iter().zip(coefs) {
                    out[r] += a * v;
                }
            }
        }
        out
    }

    fn apply(&self, w: &[DMatrix<f64>]) -> DVector<f64> {
        self.red.reduce(&self.apply_orig(w))
    }

    fn adjoint(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let full = self.red.expand(y);
        self.maps
            .iter()
            .map(|map| {
                let n = map.n;
                DMatrix::from_fn(n, n, |p, q| {
                    let (rows, coefs) = map.entries(p + q * n);
                    rows.iter().zip(coefs).map(|(&r, &a)| a * full[r]).sum()
                })
            })
            .collect()
    }

    /// `P A A^T P^T`, the Gram matrix of the reduced constraint matrices.
    fn constraint_gram(&self) -> DMatrix<f64> {
        let m = self.m;
        let mut full = vec![0.0; m * m];
        for map in &self.maps {
            for idx in 0..map.n * map.n {
                let (rows, coefs) = map.entries(idx);
                for (&i, &a) in rows.iter().zip(coefs) {
                    for (&j, &b) in rows.iter().zip(coefs) {
                        full[i + j * m] += a * b;
                    }
                }
            }
        }
        self.red.project_matrix(&DMatrix::from_vec(m, m, full))
    }

    /// Schur complement `M_ij = <A_i, X A_j Z^{-1}>` in reduced coordinates.
    /// Built one column at a time so the scatter target stays in cache.
    fn schur(&self, x: &[DMatrix<f64>], zinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let m = self.m;
        let mut full = vec![0.0; m * m];
        for (i, col) in full.chunks_mut(m).enumerate() {
            let (a0, a1) = (self.by_row_start[i], self.by_row_start[i + 1]);
            for &(blk, p, q, a) in &self.by_row[a0..a1] {
                let map = &self.maps[blk];
                let n = map.n;
                let xb = &x[blk];
                let zcol = zinv[blk].column(p);
                for r in 0..n {
                    let xqr = a * xb[(q, r)];
                    if xqr == 0.0 {
                        continue;
                    }
                    let base = r * n;
                    let srow = &map.single_row[base..base + n];
                    let scoef = &map.single_coef[base..base + n];
                    for (s, &zs) in zcol.iter().enumerate() {
                        let v = xqr * zs;
                        let j = srow[s];
                        if j != usize::MAX {
                            col[j] += v * scoef[s];
                            continue;
                        }
                        let (rows, coefs) = map.entries(s + base);
                        for (&j, &b) in rows.iter().zip(coefs) {
                            col[j] += v * b;
                        }
                    }
                }
            }
        }
        let full = DMatrix::from_vec(m, m, full);
        let mut reduced = self.red.project_matrix(&full);
        // Remove rounding asymmetry before factoring.
        let t = reduced.transpose();
        reduced += t;
        reduced *= 0.5;
        reduced
    }
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn frob(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

fn sym(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let t = a.transpose();
    a += t;
    a *= 0.5;
    a
}

/// Largest `alpha` with `x + alpha dx` positive semidefinite (infinite when
/// `dx` is itself semidefinite).
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(chol) = Cholesky::new(x.clone()) else {
        return 0.0;
    };
    let l = chol.l();
    let Some(a) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(w) = l.solve_lower_triangular(&a.transpose()) else {
        return 0.0;
    };
    let lmin = sym(w).symmetric_eigenvalues().min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn factor_spd(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let scale = m.diagonal().iter().cloned().fold(0.0, f64::max).max(1e-300);
    let mut delta = 1e-14;
    while delta <= 1e-6 {
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += delta * scale;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Some(c);
        }
        delta *= 100.0;
    }
    None
}

/// Solves `[M G; G^T 0] [dy; du] = [h; rf]` given a factorization of `M`.
struct Newton<'a> {
    chol: Cholesky<f64, Dyn>,
    g: &'a DMatrix<f64>,
    mig: DMatrix<f64>,
    border: Option<nalgebra::LU<f64, Dyn, Dyn>>,
}

impl<'a> Newton<'a> {
    fn new(chol: Cholesky<f64, Dyn>, g: &'a DMatrix<f64>) -> Self {
        let mig = chol.solve(g);
        let border = (g.ncols() > 0).then(|| (g.transpose() * &mig).lu());
        Newton { chol, g, mig, border }
    }

    fn solve(&self, h: &DVector<f64>, rf: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mih = self.chol.solve(h);
        match &self.border {
            None => (mih, DVector::zeros(0)),
            Some(lu) => {
                let rhs = self.g.transpose() * &mih - rf;
                let du = lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(rhs.len()));
                let dy = mih - &self.mig * &du;
                (dy, du)
            }
        }
    }
}

pub fn solve(problem: &SdpProblem, settings: &SdpSettings) -> Result<SdpSolution> {
    problem.validate()?;
    let clock = Instant::now();
    let m = problem.constraints.len();
    let sizes = &problem.block_sizes;
    let ntot: usize = sizes.iter().sum();

    let red = Reduction::new(problem);
    let kept = red.kept.clone();
    let nk = kept.len();
    let op = Operator::new(build_maps(problem), red, m);

    let b_orig: Vec<f64> = problem.constraints.iter().map(|c| c.rhs).collect();
    let b = op.red.reduce(&b_orig);
    let mut g = DMatrix::zeros(op.red.m_reduced, nk);
    for (j, &v) in kept.iter().enumerate() {
        let mut col = vec![0.0; m];
        for (i, con) in problem.constraints.iter().enumerate() {
            for &(w, c) in &con.free {
                if w == v {
                    col[i] += c;
                }
            }
        }
        g.column_mut(j).copy_from(&op.red.reduce(&col));
    }
    let d = DVector::from_iterator(nk, kept.iter().map(|&v| problem.free_cost[v]));
    let c = dense_cost(problem);
    let bnorm = b.norm();
    let cnorm = (frob(&c).powi(2) + d.norm_squared()).sqrt();

    // Infeasible starting point scaled to the data.
    let mut row_norm = vec![0.0; m];
    for map in &op.maps {
        for (&r, &a) in map.rows.iter().zip(&map.coefs) {
            row_norm[r] += a * a;
        }
    }
    let row_norm: Vec<f64> = row_norm.into_iter().map(f64::sqrt).collect();
    let nmax = *sizes.iter().max().unwrap() as f64;
    let ratio = (0..m)
        .map(|i| (1.0 + b_orig[i].abs()) / (1.0 + row_norm[i]))
        .fold(0.0, f64::max);
    let xi = 10f64.max(nmax.sqrt()).max(nmax * ratio);
    let eta = 10f64
        .max(nmax.sqrt())
        .max(row_norm.iter().cloned().fold(0.0, f64::max))
        .max(cnorm);
    let mut x: Vec<DMatrix<f64>> = sizes.iter().map(|&n| DMatrix::identity(n, n) * xi).collect();
    let mut z: Vec<DMatrix<f64>> = sizes.iter().map(|&n| DMatrix::identity(n, n) * eta).collect();
    let mut y = DVector::zeros(op.red.m_reduced);
    let mut u = DVector::zeros(nk);

    // Directions are corrected to satisfy the linearized primal equations
    // exactly, which the ill-conditioned Schur solve cannot guarantee near
    // the optimum.
    let gram = factor_spd(&op.constraint_gram());

    let mut status = None;
    let mut iterations = 0;
    let mut hit_limit = false;
    let mut diverged = false;
    let mut stalls = 0;

    loop {
        let rp = &b - op.apply(&x) - &g * &u;
        let aty = op.adjoint(&y);
        let rd: Vec<DMatrix<f64>> = (0..sizes.len()).map(|k| &c[k] - &aty[k] - &z[k]).collect();
        let rf = &d - g.transpose() * &y;
        let pobj = inner(&c, &x) + d.dot(&u);
        let dobj = b.dot(&y);
        let xz = inner(&x, &z);
        let relp = rp.norm() / (1.0 + bnorm);
        let reld = (frob(&rd).powi(2) + rf.norm_squared()).sqrt() / (1.0 + cnorm);
        let denom = 1.0 + pobj.abs() + dobj.abs();
        let gap = (pobj - dobj).abs().max(xz.abs()) / denom;

        if settings.verbose {
            eprintln!(
                "{iterations:3} pobj {pobj:+.8e} dobj {dobj:+.8e} relp {relp:.1e} reld {reld:.1e} gap {gap:.1e} mu {:.1e}",
                xz / ntot as f64
            );
        }
        if relp <= settings.tol && reld <= settings.tol && gap <= settings.tol {
            status = Some(SdpStatus::Optimal);
            break;
        }
        if iterations >= settings.max_iter {
            hit_limit = true;
            break;
        }
        let scale = frob(&x).max(y.amax());
        if !scale.is_finite() || scale > DIVERGENCE {
            diverged = true;
            break;
        }
        iterations += 1;

        let mu = xz / ntot as f64;
        let mut zinv = Vec::with_capacity(z.len());
        for zb in &z {
            match Cholesky::new(zb.clone()) {
                Some(ch) => zinv.push(ch.inverse()),
                None => break,
            }
        }
        if zinv.len() != z.len() {
            break;
        }
        let sm = op.schur(&x, &zinv);
        let Some(chol) = factor_spd(&sm) else {
            break;
        };
        let newton = Newton::new(chol, &g);
        let xrdzi: Vec<DMatrix<f64>> = (0..x.len()).map(|k| &x[k] * &rd[k] * &zinv[k]).collect();

        let direction = |rczi: &[DMatrix<f64>]| {
            let w: Vec<DMatrix<f64>> = (0..x.len()).map(|k| &rczi[k] - &xrdzi[k]).collect();
            let h = &rp - op.apply(&w);
            let (mut dy, mut du) = newton.solve(&h, &rf);
            // Iterative refinement against the exact operator.
            let mut last = f64::INFINITY;
            for _ in 0..4 {
                let aty = op.adjoint(&dy);
                let prod: Vec<DMatrix<f64>> = (0..x.len()).map(|k| &x[k] * &aty[k] * &zinv[k]).collect();
                let r1 = &h - op.apply(&prod) - &g * &du;
                let r2 = &rf - g.transpose() * &dy;
                let res = (r1.norm_squared() + r2.norm_squared()).sqrt();
                if !(res < 0.5 * last) || res <= 1e-15 * h.norm() {
                    break;
                }
                last = res;
                let (ey, eu) = newton.solve(&r1, &r2);
                dy += ey;
                du += eu;
            }
            let atdy = op.adjoint(&dy);
            let dz: Vec<DMatrix<f64>> = (0..x.len()).map(|k| &rd[k] - &atdy[k]).collect();
            let mut dx: Vec<DMatrix<f64>> = (0..x.len())
                .map(|k| sym(&rczi[k] - &x[k] * &dz[k] * &zinv[k]))
                .collect();
            if let Some(gram) = &gram {
                let e = &rp - op.apply(&dx) - &g * &du;
                let fix = op.adjoint(&gram.solve(&e));
                for (d, f) in dx.iter_mut().zip(fix) {
                    *d += f;
                }
            }
            (dx, dy, du, dz)
        };
        let steps = |dx: &[DMatrix<f64>], dz: &[DMatrix<f64>]| {
            let ap = (0..x.len()).map(|k| max_step(&x[k], &dx[k])).fold(f64::INFINITY, f64::min);
            let ad = (0..z.len()).map(|k| max_step(&z[k], &dz[k])).fold(f64::INFINITY, f64::min);
            (ap, ad)
        };

        // Predictor: R_c = -XZ, so R_c Z^{-1} = -X.
        let neg_x: Vec<DMatrix<f64>> = x.iter().map(|xb| -xb).collect();
        let (dxp, _, _, dzp) = direction(&neg_x);
        let (ap_max, ad_max) = steps(&dxp, &dzp);
        let (ap, ad) = (ap_max.min(1.0), ad_max.min(1.0));
        let mut mu_aff = 0.0;
        for k in 0..x.len() {
            mu_aff += (&x[k] + &dxp[k] * ap).dot(&(&z[k] + &dzp[k] * ad));
        }
        mu_aff /= ntot as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector: R_c = sigma mu I - XZ - dXp dZp.
        let rczi: Vec<DMatrix<f64>> = (0..x.len())
            .map(|k| &zinv[k] * (sigma * mu) - &x[k] - &dxp[k] * &dzp[k] * &zinv[k])
            .collect();
        let (dx, dy, du, dz) = direction(&rczi);
        let (ap_max, ad_max) = steps(&dx, &dz);
        let tau = 0.9 + 0.09 * ap.min(ad);
        let ap = (tau * ap_max).min(1.0);
        let ad = (tau * ad_max).min(1.0);
        if !(ap.is_finite() && ad.is_finite()) {
            break;
        }

        for k in 0..x.len() {
            x[k] += &dx[k] * ap;
            z[k] += &dz[k] * ad;
        }
        u += du * ap;
        y += dy * ad;

        if settings.verbose {
            eprintln!("    sigma {sigma:.2e} step primal {ap:.3} dual {ad:.3} X {:.2e} y {:.2e} Z {:.2e}", frob(&x), y.norm(), frob(&z));
        }
        if ap < 1e-10 && ad < 1e-10 {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }

    // Report in the original coordinates.
    let mut free = vec![0.0; problem.free_cost.len()];
    for (j, &v) in kept.iter().enumerate() {
        free[v] = u[j];
    }
    let ax = op.apply_orig(&x);
    let mut residual: Vec<f64> = (0..m)
        .map(|i| {
            let gu: f64 = problem.constraints[i]
                .free
                .iter()
                .filter(|(v, _)| problem.free_cost[*v] != 0.0)
                .map(|&(v, c)| c * free[v])
                .sum();
            b_orig[i] - ax[i] - gu
        })
        .collect();
    op.red.recover(&residual, &mut free);
    for (i, r) in residual.iter_mut().enumerate() {
        let gu: f64 = problem.constraints[i]
            .free
            .iter()
            .filter(|(v, _)| problem.free_cost[*v] == 0.0)
            .map(|&(v, c)| c * free[v])
            .sum();
        *r -= gu;
    }
    let borig_norm = b_orig.iter().map(|v| v * v).sum::<f64>().sqrt();
    let primal_residual = residual.iter().map(|v| v * v).sum::<f64>().sqrt() / (1.0 + borig_norm);

    let aty = op.adjoint(&y);
    let rd: Vec<DMatrix<f64>> = (0..sizes.len()).map(|k| &c[k] - &aty[k] - &z[k]).collect();
    let rf = &d - g.transpose() * &y;
    let dual_residual = (frob(&rd).powi(2) + rf.norm_squared()).sqrt() / (1.0 + cnorm);
    let primal_objective = inner(&c, &x) + d.dot(&u);
    let dual_objective = b.dot(&y);
    let gap = (primal_objective - dual_objective).abs().max(inner(&x, &z).abs())
        / (1.0 + primal_objective.abs() + dual_objective.abs());

    let worst = primal_residual.max(dual_residual).max(gap);
    let status = match status {
        Some(SdpStatus::Optimal) if worst <= settings.tol => SdpStatus::Optimal,
        _ if worst <= settings.inaccurate_tol => SdpStatus::Inaccurate,
        _ if diverged => SdpStatus::Infeasible,
        _ if hit_limit => SdpStatus::IterLimit,
        _ => SdpStatus::Infeasible,
    };

    Ok(SdpSolution {
        status,
        blocks: x,
        free,
        duals: op.red.expand(&y),
        slack: z,
        primal_objective,
        dual_objective,
        primal_residual,
        dual_residual,
        gap,
        iterations,
        wall_time: clock.elapsed().as_secs_f64(),
    })
}
