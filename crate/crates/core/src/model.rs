//! Domain types shared by every stage of the pipeline: the deformable shape
//! model, the 2D observation, camera pose and reconstruction results, plus the
//! error metrics used to score estimates against ground truth.
//!
//! Rotations are full 3x3 matrices. Whenever a rotation is flattened into the
//! 9 polynomial variables it is vectorized column-major, so `r[3*j + a]` is
//! row `a` of column `j`.

use nalgebra::{Matrix2xX, Matrix3, Matrix3xX, Vector2, Vector3};

use crate::error::{Error, Result};

/// Frobenius tolerance for accepting a matrix as a rotation.
pub const ROTATION_TOL: f64 = 1e-8;

/// `K` basis shapes of `N` 3D points each.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformableModel {
    bases: Vec<Matrix3xX<f64>>,
    /// Multiplier applied to each basis by normalization (1 when untouched).
    scale_b: Vec<f64>,
}

impl DeformableModel {
    pub fn new(bases: Vec<Matrix3xX<f64>>) -> Result<Self> {
        let k = bases.len();
        Self::with_scales(bases, vec![1.0; k])
    }

    pub fn with_scales(bases: Vec<Matrix3xX<f64>>, scale_b: Vec<f64>) -> Result<Self> {
        if bases.is_empty() {
            return Err(Error::invalid("deformable model needs at least one basis shape"));
        }
        let n = bases[0].ncols();
        if n < 4 {
            return Err(Error::invalid(format!("deformable model needs N >= 4 landmarks, got {n}")));
        }
        for (k, b) in bases.iter().enumerate() {
            if b.ncols() != n {
                return Err(Error::invalid(format!(
                    "basis {k} has {} points, expected {n}",
                    b.ncols()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("basis {k} has non-finite entries")));
            }
        }
        if scale_b.len() != bases.len() || scale_b.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("basis scales must be K positive finite values"));
        }
        Ok(Self { bases, scale_b })
    }

    pub fn num_bases(&self) -> usize {
        self.bases.len()
    }

    pub fn num_points(&self) -> usize {
        self.bases[0].ncols()
    }

    pub fn bases(&self) -> &[Matrix3xX<f64>] {
        &self.bases
    }

    pub fn basis(&self, k: usize) -> &Matrix3xX<f64> {
        &self.bases[k]
    }

    pub fn scale_b(&self) -> &[f64] {
        &self.scale_b
    }

    /// `sum_k c_k B_k`.
    pub fn shape(&self, coeffs: &[f64]) -> Result<Matrix3xX<f64>> {
        check_len(coeffs, self.num_bases(), "coefficients")?;
        let mut s = Matrix3xX::zeros(self.num_points());
        for (b, c) in self.bases.iter().zip(coeffs) {
            s += b * *c;
        }
        Ok(s)
    }
}

/// 2D landmarks with per-landmark weights and weak-perspective intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    landmarks: Matrix2xX<f64>,
    weights: Vec<f64>,
    intrinsics: (f64, f64),
    /// Divisor applied to the intrinsics-free landmarks by normalization.
    scale_z: f64,
}

impl Observation {
    pub fn new(landmarks: Matrix2xX<f64>, weights: Option<Vec<f64>>, intrinsics: (f64, f64)) -> Result<Self> {
        Self::with_scale(landmarks, weights, intrinsics, 1.0)
    }

    pub fn with_scale(
        landmarks: Matrix2xX<f64>,
        weights: Option<Vec<f64>>,
        intrinsics: (f64, f64),
        scale_z: f64,
    ) -> Result<Self> {
        let n = landmarks.ncols();
        if landmarks.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("landmarks contain non-finite values"));
        }
        let weights = weights.unwrap_or_else(|| vec![1.0; n]);
        check_len(&weights, n, "weights")?;
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("weights must have a positive sum"));
        }
        let (sx, sy) = intrinsics;
        if !(sx > 0.0 && sy > 0.0 && sx.is_finite() && sy.is_finite()) {
            return Err(Error::invalid("intrinsics must be positive and finite"));
        }
        if !(scale_z > 0.0 && scale_z.is_finite()) {
            return Err(Error::invalid("landmark scale must be positive and finite"));
        }
        Ok(Self {
            landmarks,
            weights,
            intrinsics,
            scale_z,
        })
    }

    pub fn num_points(&self) -> usize {
        self.landmarks.ncols()
    }

    pub fn landmarks(&self) -> &Matrix2xX<f64> {
        &self.landmarks
    }

    pub fn landmark(&self, i: usize) -> Vector2<f64> {
        self.landmarks.column(i).into_owned()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intrinsics(&self) -> (f64, f64) {
        self.intrinsics
    }

    pub fn scale_z(&self) -> f64 {
        self.scale_z
    }

    /// Same landmarks and camera, different weights.
    pub fn reweighted(&self, weights: Vec<f64>) -> Result<Self> {
        Self::with_scale(self.landmarks.clone(), Some(weights), self.intrinsics, self.scale_z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector2<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector2<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("translation must be finite"));
        }
        Ok(Self { rotation, translation })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector2<f64> {
        &self.translation
    }

    pub fn with_translation(&self, translation: Vector2<f64>) -> Self {
        Self {
            rotation: self.rotation,
            translation,
        }
    }
}

/// Errors unless `R^T R = I` and `det R = +1` within [`ROTATION_TOL`].
pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("rotation has non-finite entries"));
    }
    let orth = (r.transpose() * r - Matrix3::identity()).norm();
    let det = r.determinant();
    if orth > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
        return Err(Error::invalid(format!(
            "matrix is not a rotation (|R^T R - I| = {orth:e}, det = {det})"
        )));
    }
    Ok(())
}

/// Result of a (possibly robust) certifiable solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub coeffs: Vec<f64>,
    pub pose: Pose,
    /// Lower bound from the relaxation (optimal gamma).
    pub f_lower: f64,
    /// Objective at the rounded candidate.
    pub f_upper: f64,
    /// Relative duality gap.
    pub eta: f64,
    pub corank: usize,
    pub certified: bool,
    pub weights: Option<Vec<f64>>,
}

/// Geodesic distance between two rotations, in degrees.
pub fn geodesic_rotation_error(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> Result<f64> {
    if ra.iter().chain(rb.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("rotation error of non-finite matrix"));
    }
    let cos = (((ra.transpose() * rb).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

/// Mean over landmarks of `|| sum_k (c_est,k - c_gt,k) B_ki ||`.
pub fn shape_error(model: &DeformableModel, c_est: &[f64], c_gt: &[f64]) -> Result<f64> {
    check_len(c_est, model.num_bases(), "estimated coefficients")?;
    check_len(c_gt, model.num_bases(), "ground-truth coefficients")?;
    let diff: Vec<f64> = c_est.iter().zip(c_gt).map(|(a, b)| a - b).collect();
    let s = model.shape(&diff)?;
    let n = model.num_points();
    Ok(s.column_iter().map(|col| col.norm()).sum::<f64>() / n as f64)
}

pub fn coeff_error(c_est: &[f64], c_gt: &[f64]) -> Result<f64> {
    check_len(c_est, c_gt.len(), "coefficients")?;
    Ok(c_est
        .iter()
        .zip(c_gt)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Weak-perspective projection of a 3D point with normalized intrinsics:
/// the first two rows of `R p`.
pub fn project(rotation: &Matrix3<f64>, p: &Vector3<f64>) -> Vector2<f64> {
    let q = rotation * p;
    Vector2::new(q.x, q.y)
}

/// Column-major vectorization of a 3x3 matrix.
pub fn vec_rotation(r: &Matrix3<f64>) -> [f64; 9] {
    let mut v = [0.0; 9];
    v.copy_from_slice(r.as_slice());
    v
}

pub fn unvec_rotation(v: &[f64]) -> Matrix3<f64> {
    Matrix3::from_column_slice(&v[..9])
}

pub(crate) fn check_len<T>(v: &[T], expected: usize, what: &str) -> Result<()> {
    if v.len() != expected {
        return Err(Error::invalid(format!(
            "{what}: expected length {expected}, got {}",
            v.len()
        )));
    }
    Ok(())
}
