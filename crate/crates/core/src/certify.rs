//! Rounding of the relaxation to a feasible pose and the global-optimality
//! certificate.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{check_rotation, unvec_rotation, Pose, Reconstruction};
use crate::poly::{Monomial, PolyProgram, So3ConstraintSet};
use crate::model::{DeformableModel, Observation};
use crate::preprocess::{denormalize, eliminate_translation, normalize_with_headroom, recover_translation, CenteredProblem};
use crate::relax::{assemble_sdp, build_basis, BasisSpec, SosSolution, Variant};
use crate::sdp::{SdpSettings, SdpStatus};

/// Minimum magnitude of the constant-monomial entry of the null vector.
pub const EXTRACTION_PIVOT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifySettings {
    /// Eigenvalues at or below this fraction of `max(lambda_max, 1)` count
    /// towards the corank.
    pub corank_rel_tol: f64,
    pub eta_tol: f64,
}

impl Default for CertifySettings {
    fn default() -> Self {
        CertifySettings {
            corank_rel_tol: 1e-6,
            eta_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub corank: usize,
    /// Up to three smallest eigenvalues of the Gram block, ascending.
    pub eig_min_list: Vec<f64>,
    pub eta: f64,
    pub certified: bool,
    pub corank_rel_tol: f64,
}

fn position(basis: &[Monomial], m: &Monomial) -> Option<usize> {
    basis.iter().position(|b| b == m)
}

/// Reads `(c, vec(R))` from the eigenvector of the smallest eigenvalue of
/// `s0`, scaled so its constant-monomial entry is one.
pub fn extract_candidate(s0: &DMatrix<f64>, spec: &BasisSpec) -> Result<(Vec<f64>, [f64; 9])> {
    let gb = &spec.gram_basis;
    if gb.is_empty() || s0.nrows() != gb.len() || s0.ncols() != gb.len() {
        return Err(Error::invalid("gram block does not match the basis"));
    }
    let n = gb[0].nvars();
    let k = n - 9;
    let missing = || Error::invalid("gram basis lacks a degree-one monomial");
    let one = position(gb, &Monomial::one(n)).ok_or_else(missing)?;
    let c_pos: Vec<usize> = (0..k)
        .map(|i| position(gb, &Monomial::var(n, i)).ok_or_else(missing))
        .collect::<Result<_>>()?;
    let r_pos: Vec<usize> = (0..9)
        .map(|j| position(gb, &Monomial::var(n, k + j)).ok_or_else(missing))
        .collect::<Result<_>>()?;

    let eig = SymmetricEigen::new(s0.clone());
    let imin = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(imin);
    let pivot = v[one];
    if pivot.abs() < EXTRACTION_PIVOT_TOL {
        return Err(Error::ExtractionDegenerate { pivot });
    }
    let c = c_pos.iter().map(|&p| v[p] / pivot).collect();
    let mut r = [0.0; 9];
    for (j, &p) in r_pos.iter().enumerate() {
        r[j] = v[p] / pivot;
    }
    Ok((c, r))
}

pub fn project_coeffs(c_raw: &[f64]) -> Vec<f64> {
    c_raw.iter().map(|c| c.clamp(0.0, 1.0)).collect()
}

/// Nearest rotation in Frobenius norm to the column-major 3x3 matrix `r_raw`.
pub fn project_rotation(r_raw: &[f64]) -> Result<Matrix3<f64>> {
    if r_raw.len() != 9 || r_raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("rotation estimate must be 9 finite numbers"));
    }
    let m = unvec_rotation(r_raw);
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= 1e-12 * smax {
        return Err(Error::ProjectionDegenerate { smallest: smin });
    }
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let d = (u * vt).determinant().signum();
    let r = u * Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, d)) * vt;
    check_rotation(&r)?;
    Ok(r)
}

pub fn certify(gamma: f64, f_hat: f64, s0: &DMatrix<f64>, settings: &CertifySettings) -> Certificate {
    let mut eigs: Vec<f64> = s0.clone().symmetric_eigenvalues().iter().cloned().collect();
    eigs.sort_by(f64::total_cmp);
    let lmax = eigs.last().cloned().unwrap_or(0.0);
    let cut = settings.corank_rel_tol * lmax.max(1.0);
    let corank = eigs.iter().filter(|&&l| l <= cut).count();
    let eta = ((f_hat - gamma) / f_hat.max(1e-12)).max(0.0);
    Certificate {
        corank,
        eig_min_list: eigs.iter().take(3).cloned().collect(),
        eta,
        certified: corank == 1 && eta <= settings.eta_tol,
        corank_rel_tol: settings.corank_rel_tol,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveSettings {
    pub variant: Variant,
    pub constraints: So3ConstraintSet,
    pub sdp: SdpSettings,
    pub certify: CertifySettings,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings {
            variant: Variant::Reduced2,
            constraints: So3ConstraintSet::All15,
            sdp: SdpSettings::default(),
            certify: CertifySettings::default(),
        }
    }
}

/// Everything produced by one certifiable solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub reconstruction: Reconstruction,
    pub certificate: Certificate,
    pub sdp_status: SdpStatus,
    pub sdp_iterations: usize,
    pub sdp_time: f64,
    pub gram_side: usize,
    pub gamma: f64,
}

/// Full pipeline on a centered (and normalized) problem. An SDP that did not
/// reach at least `Inaccurate` status never yields a certificate, since its
/// `gamma` is not a trustworthy lower bound.
pub fn solve_centered_report(prob: &CenteredProblem, settings: &SolveSettings) -> Result<SolveReport> {
    let k = prob.num_bases();
    let prog = PolyProgram::new(prob, settings.constraints);
    let spec = build_basis(k, settings.variant)?;
    let relaxation = assemble_sdp(&prog, &spec)?;
    let sol: SosSolution = relaxation.solve(&settings.sdp)?;

    let (c_raw, r_raw) = extract_candidate(sol.s0(), &spec)?;
    let coeffs = project_coeffs(&c_raw);
    let rotation = project_rotation(&r_raw)?;
    let f_hat = prob.objective(&coeffs, &rotation);
    let mut certificate = certify(sol.gamma, f_hat, sol.s0(), &settings.certify);
    if !matches!(sol.status, SdpStatus::Optimal | SdpStatus::Inaccurate) {
        certificate.certified = false;
    }
    let t = recover_translation(prob, &coeffs, &rotation)?;
    let reconstruction = Reconstruction {
        coeffs,
        pose: Pose::new(rotation, t)?,
        f_lower: sol.gamma,
        f_upper: f_hat,
        eta: certificate.eta,
        corank: certificate.corank,
        certified: certificate.certified,
        weights: None,
    };
    Ok(SolveReport {
        reconstruction,
        certificate,
        sdp_status: sol.status,
        sdp_iterations: sol.iterations,
        sdp_time: sol.wall_time,
        gram_side: spec.gram_basis.len(),
        gamma: sol.gamma,
    })
}

pub fn solve_centered(prob: &CenteredProblem, settings: &SolveSettings) -> Result<Reconstruction> {
    solve_centered_report(prob, settings).map(|r| r.reconstruction)
}

/// Landmark headroom used by [`reconstruct`]: normalized landmarks lie in
/// the disc of radius 1/2, leaving the true coefficients inside `[0, 1]`.
pub const LANDMARK_HEADROOM: f64 = 2.0;

/// Normalize, center, solve and map the result back to input units. The
/// objective values and `alpha` are in normalized units.
pub fn reconstruct(
    model: &DeformableModel,
    obs: &Observation,
    alpha: f64,
    settings: &SolveSettings,
) -> Result<SolveReport> {
    let (nmodel, nobs) = normalize_with_headroom(model, obs, LANDMARK_HEADROOM)?;
    let prob = eliminate_translation(&nmodel, &nobs, alpha)?;
    let mut report = solve_centered_report(&prob, settings)?;
    report.reconstruction = denormalize(
        &report.reconstruction,
        nobs.scale_z(),
        nmodel.scale_b(),
        obs.intrinsics(),
    )?;
    Ok(report)
}
