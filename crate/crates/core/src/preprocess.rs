//! Input normalization and closed-form handling of the 2D translation.
//!
//! The translation enters the weighted least-squares cost linearly, so it can
//! be minimized out: subtracting weighted centroids from landmarks and basis
//! points (and scaling by `sqrt(w_i)`) yields a translation-free problem
//! whose optimum determines the translation in closed form.

use nalgebra::{Matrix2xX, Matrix3, Matrix3xX, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::model::{check_len, project, DeformableModel, Observation, Pose, Reconstruction};

/// Total weight below which a weighted problem is rejected.
pub const MIN_TOTAL_WEIGHT: f64 = 1e-12;

/// Translation-free form of a weighted reconstruction problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredProblem {
    /// `sqrt(w_i) (z_i - zbar)` for every retained landmark.
    pub z_tilde: Matrix2xX<f64>,
    /// `sqrt(w_i) (B_ki - Bbar_k)` per basis, retained landmarks only.
    pub b_tilde: Vec<Matrix3xX<f64>>,
    pub zbar_w: Vector2<f64>,
    pub bbar_w: Vec<Vector3<f64>>,
    /// Lasso weight, in normalized units.
    pub alpha: f64,
    /// Weight used for every input landmark (0 for dropped ones).
    pub weights_applied: Vec<f64>,
}

impl CenteredProblem {
    pub fn num_bases(&self) -> usize {
        self.b_tilde.len()
    }

    /// Translation-free objective `sum ||z~ - Pi R sum c B~||^2 + alpha sum c`.
    pub fn objective(&self, coeffs: &[f64], rotation: &Matrix3<f64>) -> f64 {
        let mut total = 0.0;
        for i in 0..self.z_tilde.ncols() {
            let mut p = Vector3::zeros();
            for (b, c) in self.b_tilde.iter().zip(coeffs) {
                p += b.column(i) * *c;
            }
            let r = self.z_tilde.column(i) - project(rotation, &p);
            total += r.norm_squared();
        }
        total + self.alpha * coeffs.iter().map(|c| c.abs()).sum::<f64>()
    }
}

/// Normalize so that landmarks lie in the unit disc and every basis has unit
/// maximum column norm. See [`normalize_with_headroom`].
pub fn normalize(model: &DeformableModel, obs: &Observation) -> Result<(DeformableModel, Observation)> {
    normalize_with_headroom(model, obs, 1.0)
}

/// Divides landmarks by the intrinsics, then shrinks them (never enlarges)
/// so that the farthest landmark lies within radius `1 / headroom`. Each basis
/// is rescaled to unit maximum column norm. Intrinsics become `(1, 1)`.
///
/// `scale_z` records the landmark divisor and `scale_b` the basis multipliers,
/// so a normalized coefficient `c'` corresponds to `c' * scale_b * scale_z` on
/// the original bases.
///
/// A headroom above 1 leaves room for the true coefficients under the
/// `c <= 1` bound: the largest projected landmark can never exceed the
/// largest 3D basis point, so with headroom 1 a single-basis model always has
/// its true normalized coefficient at or above the bound.
pub fn normalize_with_headroom(
    model: &DeformableModel,
    obs: &Observation,
    headroom: f64,
) -> Result<(DeformableModel, Observation)> {
    if !(headroom >= 1.0 && headroom.is_finite()) {
        return Err(Error::invalid(format!("landmark headroom must be >= 1, got {headroom}")));
    }
    if obs.num_points() != model.num_points() {
        return Err(Error::invalid(format!(
            "observation has {} landmarks but model has {} points",
            obs.num_points(),
            model.num_points()
        )));
    }
    let (sx, sy) = obs.intrinsics();
    let mut z = obs.landmarks().clone();
    for mut col in z.column_iter_mut() {
        col[0] /= sx;
        col[1] /= sy;
    }
    let max_norm = z.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let divisor = (max_norm * headroom).max(1.0);
    z /= divisor;
    let scale_z = obs.scale_z() * divisor;

    let mut bases = Vec::with_capacity(model.num_bases());
    let mut scale_b = Vec::with_capacity(model.num_bases());
    for (b, prev) in model.bases().iter().zip(model.scale_b()) {
        let m = b.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        let s = if m > 0.0 { 1.0 / m } else { 1.0 };
        bases.push(b * s);
        scale_b.push(prev * s);
    }
    let model = DeformableModel::with_scales(bases, scale_b)?;
    let obs = Observation::with_scale(z, Some(obs.weights().to_vec()), (1.0, 1.0), scale_z)?;
    Ok((model, obs))
}

/// Remove the translation by weighted centering.
pub fn eliminate_translation(model: &DeformableModel, obs: &Observation, alpha: f64) -> Result<CenteredProblem> {
    eliminate_translation_dropping(model, obs, alpha, 0.0)
}

/// Like [`eliminate_translation`], but landmarks with weight below
/// `min_weight` are removed before centering (their weight is reported as 0).
pub fn eliminate_translation_dropping(
    model: &DeformableModel,
    obs: &Observation,
    alpha: f64,
    min_weight: f64,
) -> Result<CenteredProblem> {
    if obs.num_points() != model.num_points() {
        return Err(Error::invalid("observation and model disagree on landmark count"));
    }
    if obs.intrinsics() != (1.0, 1.0) {
        return Err(Error::invalid("translation elimination expects normalized intrinsics (1, 1)"));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha must be finite and nonnegative"));
    }
    let weights: Vec<f64> = obs
        .weights()
        .iter()
        .map(|&w| if w < min_weight { 0.0 } else { w })
        .collect();
    let total: f64 = weights.iter().sum();
    if total < MIN_TOTAL_WEIGHT {
        return Err(Error::DegenerateWeights {
            total,
            threshold: MIN_TOTAL_WEIGHT,
        });
    }
    let kept: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();

    let z = obs.landmarks();
    let mut zbar = Vector2::zeros();
    for &i in &kept {
        zbar += z.column(i) * weights[i];
    }
    zbar /= total;

    let bbar: Vec<Vector3<f64>> = model
        .bases()
        .iter()
        .map(|b| {
            let mut m = Vector3::zeros();
            for &i in &kept {
                m += b.column(i) * weights[i];
            }
            m / total
        })
        .collect();

    let z_tilde = Matrix2xX::from_fn(kept.len(), |r, j| {
        let i = kept[j];
        weights[i].sqrt() * (z[(r, i)] - zbar[r])
    });
    let b_tilde = model
        .bases()
        .iter()
        .zip(&bbar)
        .map(|(b, m)| {
            Matrix3xX::from_fn(kept.len(), |r, j| {
                let i = kept[j];
                weights[i].sqrt() * (b[(r, i)] - m[r])
            })
        })
        .collect();

    Ok(CenteredProblem {
        z_tilde,
        b_tilde,
        zbar_w: zbar,
        bbar_w: bbar,
        alpha,
        weights_applied: weights,
    })
}

/// Optimal translation for given coefficients and rotation.
pub fn recover_translation(prob: &CenteredProblem, coeffs: &[f64], rotation: &Matrix3<f64>) -> Result<Vector2<f64>> {
    check_len(coeffs, prob.num_bases(), "coefficients")?;
    let mut m = Vector3::zeros();
    for (b, c) in prob.bbar_w.iter().zip(coeffs) {
        m += b * *c;
    }
    let t = prob.zbar_w - project(rotation, &m);
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("recovered translation is not finite"));
    }
    Ok(t)
}

/// Weighted objective with explicit translation, on normalized data.
pub fn full_objective(
    model: &DeformableModel,
    obs: &Observation,
    alpha: f64,
    coeffs: &[f64],
    rotation: &Matrix3<f64>,
    translation: &Vector2<f64>,
) -> Result<f64> {
    let s = model.shape(coeffs)?;
    let mut total = 0.0;
    for (i, w) in obs.weights().iter().enumerate() {
        let r = obs.landmarks().column(i) - project(rotation, &s.column(i).into_owned()) - translation;
        total += w * r.norm_squared();
    }
    Ok(total + alpha * coeffs.iter().map(|c| c.abs()).sum::<f64>())
}

/// Map a reconstruction of the normalized problem back to input units.
///
/// Coefficients become `c * scale_b * scale_z` (they act on the original
/// bases) and the translation becomes `(s_x, s_y) * scale_z * t`. Rotation,
/// certificate and objective values (normalized units) are unchanged.
pub fn denormalize(recon: &Reconstruction, scale_z: f64, scale_b: &[f64], intrinsics: (f64, f64)) -> Result<Reconstruction> {
    check_len(scale_b, recon.coeffs.len(), "basis scales")?;
    if !(scale_z > 0.0) || scale_b.iter().any(|s| !(*s > 0.0)) || !(intrinsics.0 > 0.0 && intrinsics.1 > 0.0) {
        return Err(Error::invalid("denormalization scales must be positive"));
    }
    let coeffs = recon
        .coeffs
        .iter()
        .zip(scale_b)
        .map(|(c, sb)| c * sb * scale_z)
        .collect();
    let t = recon.pose.translation();
    let translation = Vector2::new(intrinsics.0 * scale_z * t.x, intrinsics.1 * scale_z * t.y);
    Ok(Reconstruction {
        coeffs,
        pose: Pose::new(*recon.pose.rotation(), translation)?,
        ..recon.clone()
    })
}
