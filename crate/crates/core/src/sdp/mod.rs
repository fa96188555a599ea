//! Block-diagonal semidefinite programs and a dense primal-dual
//! interior-point solver.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    <C, X> + d^T u
//! subject to  <A_i, X> + g_i^T u = b_i   for every constraint i
//!             X = diag(X_1, ..., X_p) positive semidefinite, u free
//! ```
//!
//! Every matrix coefficient is given as an upper-triangle triplet
//! `(block, row, col, coef)` with `row <= col`; an off-diagonal triplet
//! contributes `coef * X[row, col]`, so a symmetric pair `X[p,q] + X[q,p]`
//! is written with `coef = 2`.

mod ipm;
mod presolve;

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use ipm::solve;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdEntry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub coef: f64,
}

impl PsdEntry {
    pub fn new(block: usize, row: usize, col: usize, coef: f64) -> Self {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        PsdEntry {
            block,
            row,
            col,
            coef,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearConstraint {
    pub rhs: f64,
    pub psd: Vec<PsdEntry>,
    /// `(free variable index, coefficient)` pairs.
    pub free: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SdpProblem {
    pub block_sizes: Vec<usize>,
    /// Objective coefficients on the PSD blocks.
    pub cost: Vec<PsdEntry>,
    /// Objective coefficients of the free variables (minimized).
    pub free_cost: Vec<f64>,
    pub constraints: Vec<LinearConstraint>,
}

impl SdpProblem {
    pub fn num_free(&self) -> usize {
        self.free_cost.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_sizes.is_empty() {
            return Err(Error::invalid("sdp needs at least one PSD block"));
        }
        if self.block_sizes.iter().any(|&n| n == 0) {
            return Err(Error::invalid("PSD block of side 0"));
        }
        let check_entry = |e: &PsdEntry| -> Result<()> {
            let n = *self
                .block_sizes
                .get(e.block)
                .ok_or_else(|| Error::invalid(format!("block index {} out of range", e.block)))?;
            if e.row > e.col || e.col >= n {
                return Err(Error::invalid(format!(
                    "entry ({}, {}) invalid for block {} of side {}",
                    e.row, e.col, e.block, n
                )));
            }
            if !e.coef.is_finite() {
                return Err(Error::invalid("non-finite coefficient"));
            }
            Ok(())
        };
        for e in &self.cost {
            check_entry(e)?;
        }
        if self.free_cost.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite free-variable cost"));
        }
        for (i, con) in self.constraints.iter().enumerate() {
            if !con.rhs.is_finite() {
                return Err(Error::invalid(format!("constraint {i}: non-finite right-hand side")));
            }
            for e in &con.psd {
                check_entry(e)?;
            }
            for &(v, c) in &con.free {
                if v >= self.free_cost.len() || !c.is_finite() {
                    return Err(Error::invalid(format!("constraint {i}: bad free term ({v}, {c})")));
                }
            }
        }
        Ok(())
    }

    /// Writes the problem in a line-oriented sparse text format:
    ///
    /// ```text
    /// blocks <count> <side_1> ... <side_p>
    /// free <count>
    /// freecost <var> <coef>            (nonzero entries only)
    /// cost <block> <row> <col> <coef>
    /// constraints <count>
    /// rhs <i> <value>
    /// psd <i> <block> <row> <col> <coef>
    /// var <i> <var> <coef>
    /// ```
    ///
    /// Indices are zero based, `row <= col`, and numbers use Rust's
    /// round-trip float formatting.
    pub fn write_sparse_text<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "blocks {}", self.block_sizes.len())?;
        for n in &self.block_sizes {
            write!(w, " {n}")?;
        }
        writeln!(w)?;
        writeln!(w, "free {}", self.free_cost.len())?;
        for (v, c) in self.free_cost.iter().enumerate() {
            if *c != 0.0 {
                writeln!(w, "freecost {v} {c:?}")?;
            }
        }
        for e in &self.cost {
            writeln!(w, "cost {} {} {} {:?}", e.block, e.row, e.col, e.coef)?;
        }
        writeln!(w, "constraints {}", self.constraints.len())?;
        for (i, con) in self.constraints.iter().enumerate() {
            writeln!(w, "rhs {i} {:?}", con.rhs)?;
            for e in &con.psd {
                writeln!(w, "psd {i} {} {} {} {:?}", e.block, e.row, e.col, e.coef)?;
            }
            for (v, c) in &con.free {
                writeln!(w, "var {i} {v} {c:?}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSettings {
    /// Target for relative primal/dual residuals and duality gap.
    pub tol: f64,
    pub max_iter: usize,
    /// Residual level accepted as `Inaccurate` when the target is not reached.
    pub inaccurate_tol: f64,
    /// Print one progress line per iteration to stderr.
    pub verbose: bool,
}

impl Default for SdpSettings {
    fn default() -> Self {
        SdpSettings {
            tol: 1e-8,
            max_iter: 100,
            inaccurate_tol: 1e-5,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Inaccurate,
    Infeasible,
    IterLimit,
}

impl std::fmt::Display for SdpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SdpStatus::Optimal => "optimal",
            SdpStatus::Inaccurate => "inaccurate",
            SdpStatus::Infeasible => "infeasible",
            SdpStatus::IterLimit => "iteration-limit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    /// Primal PSD blocks.
    pub blocks: Vec<DMatrix<f64>>,
    /// Free variables, indexed as in the problem.
    pub free: Vec<f64>,
    /// Dual multipliers of the constraints.
    pub duals: Vec<f64>,
    /// Dual slack blocks.
    pub slack: Vec<DMatrix<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub wall_time: f64,
}

impl SdpSolution {
    pub fn min_block_eigenvalue(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.clone().symmetric_eigenvalues().min())
            .fold(f64::INFINITY, f64::min)
    }
}
