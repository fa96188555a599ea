//! Outlier-robust reconstruction by graduated non-convexity over the
//! truncated least-squares cost `min(r^2, cbar^2)`.
//!
//! Each iteration solves the certifiable weighted problem for fixed weights,
//! then updates every weight in closed form for fixed `(c, R, t)`, and finally
//! doubles the control parameter `mu`. Small `mu` gives a nearly convex
//! surrogate; as `mu` grows the surrogate approaches the truncated cost.

use nalgebra::{Matrix3, Vector2};

use crate::certify::{solve_centered_report, SolveReport, SolveSettings, LANDMARK_HEADROOM};
use crate::error::{Error, Result};
use crate::model::{check_len, project, DeformableModel, Observation, Reconstruction};
use crate::preprocess::{denormalize, eliminate_translation_dropping, normalize_with_headroom};
use crate::sdp::SdpStatus;

/// Landmarks whose weight falls below this are removed from the weighted solve.
pub const DROP_WEIGHT: f64 = 1e-8;

/// Raw (unweighted) reprojection residual of every landmark.
pub fn residuals(
    model: &DeformableModel,
    obs: &Observation,
    coeffs: &[f64],
    rotation: &Matrix3<f64>,
    translation: &Vector2<f64>,
) -> Result<Vec<f64>> {
    if obs.num_points() != model.num_points() {
        return Err(Error::invalid("observation and model disagree on landmark count"));
    }
    let shape = model.shape(coeffs)?;
    let (sx, sy) = obs.intrinsics();
    Ok((0..model.num_points())
        .map(|i| {
            let p = project(rotation, &shape.column(i).into_owned());
            let z = obs.landmark(i);
            let dx = z.x - sx * p.x - translation.x;
            let dy = z.y - sy * p.y - translation.y;
            dx.hypot(dy)
        })
        .collect())
}

fn interval_edges(mu: f64, cbar: f64) -> (f64, f64) {
    let c2 = cbar * cbar;
    (mu / (mu + 1.0) * c2, (mu + 1.0) / mu * c2)
}

/// Smoothed truncated least-squares cost with control parameter `mu`.
pub fn gnc_surrogate(r: f64, mu: f64, cbar: f64) -> f64 {
    let r2 = r * r;
    let (lo, hi) = interval_edges(mu, cbar);
    if r2 <= lo {
        r2
    } else if r2 >= hi {
        cbar * cbar
    } else {
        2.0 * cbar * r.abs() * (mu * (mu + 1.0)).sqrt() - mu * (cbar * cbar + r2)
    }
}

/// Penalty paid by a landmark of weight `w`; zero for a full inlier and
/// `cbar^2` for a rejected one.
pub fn outlier_process(w: f64, mu: f64, cbar: f64) -> f64 {
    mu * (1.0 - w) / (mu + w) * cbar * cbar
}

/// Minimizer over `w` in `[0, 1]` of `w r^2 + outlier_process(w)`.
pub fn weight_update(r: f64, mu: f64, cbar: f64) -> f64 {
    let r2 = r * r;
    let (lo, hi) = interval_edges(mu, cbar);
    if r2 <= lo {
        1.0
    } else if r2 >= hi {
        0.0
    } else {
        (cbar / r.abs() * (mu * (mu + 1.0)).sqrt() - mu).clamp(0.0, 1.0)
    }
}

/// Joint objective `sum (w r^2 + outlier_process(w)) + alpha sum c`.
pub fn gnc_objective(residuals: &[f64], weights: &[f64], mu: f64, cbar: f64, alpha: f64, coeffs: &[f64]) -> Result<f64> {
    check_len(weights, residuals.len(), "weights")?;
    let data: f64 = residuals
        .iter()
        .zip(weights)
        .map(|(r, w)| w * r * r + outlier_process(*w, mu, cbar))
        .sum();
    Ok(data + alpha * coeffs.iter().sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GncSettings {
    /// Truncation threshold in normalized residual units.
    pub cbar: f64,
    pub alpha: f64,
    pub mu0: f64,
    pub mu_factor: f64,
    pub max_iter: usize,
    pub conv_tol: f64,
    pub solve: SolveSettings,
}

impl GncSettings {
    pub fn new(cbar: f64) -> Self {
        GncSettings {
            cbar,
            alpha: 0.0,
            mu0: 1e-4,
            mu_factor: 2.0,
            max_iter: 100,
            conv_tol: 1e-10,
            solve: SolveSettings::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.cbar > 0.0 && self.cbar.is_finite()) {
            return Err(Error::invalid("cbar must be positive"));
        }
        if !(self.mu0 > 0.0 && self.mu_factor > 1.0) {
            return Err(Error::invalid("mu0 must be positive and mu_factor above 1"));
        }
        if !(self.alpha >= 0.0) || self.max_iter == 0 {
            return Err(Error::invalid("alpha must be nonnegative and max_iter positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GncState {
    pub mu: f64,
    pub weights: Vec<f64>,
    /// Completed iterations.
    pub tau: usize,
    pub objective_history: Vec<f64>,
    pub cbar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GncStatus {
    Converged,
    IterLimit,
    /// A weighted solve failed; the result is the last successful iterate.
    SolveFailed(String),
}

#[derive(Debug, Clone)]
pub struct GncReport {
    pub reconstruction: Reconstruction,
    pub state: GncState,
    pub status: GncStatus,
    /// The weighted solve that produced `reconstruction`.
    pub last_solve: SolveReport,
    /// `mu` used in each iteration.
    pub mu_history: Vec<f64>,
    /// SDP wall time summed over all weighted solves.
    pub total_sdp_time: f64,
    pub diagnostics: Vec<String>,
}

/// Robust reconstruction on normalized inputs (intrinsics `(1, 1)`), as
/// produced by [`crate::preprocess::normalize_with_headroom`].
pub fn shape_sharp(model: &DeformableModel, obs: &Observation, settings: &GncSettings) -> Result<GncReport> {
    settings.validate()?;
    let n = obs.num_points();
    let mut state = GncState {
        mu: settings.mu0,
        weights: vec![1.0; n],
        tau: 0,
        objective_history: Vec::new(),
        cbar: settings.cbar,
    };
    let mut mu_history = Vec::new();
    let mut diagnostics = Vec::new();
    let mut total_sdp_time = 0.0;
    let mut best: Option<(Reconstruction, SolveReport)> = None;
    let mut status = GncStatus::IterLimit;

    while state.tau < settings.max_iter {
        let solved = obs
            .reweighted(state.weights.clone())
            .and_then(|weighted| eliminate_translation_dropping(model, &weighted, settings.alpha, DROP_WEIGHT))
            .and_then(|prob| solve_centered_report(&prob, &settings.solve));
        let report = match solved {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(format!("iteration {}: weighted solve failed: {e}", state.tau));
                status = GncStatus::SolveFailed(e.to_string());
                break;
            }
        };
        total_sdp_time += report.sdp_time;
        if !matches!(report.sdp_status, SdpStatus::Optimal) {
            diagnostics.push(format!("iteration {}: sdp status {}", state.tau, report.sdp_status));
        }
        let recon = &report.reconstruction;
        let r = residuals(model, obs, &recon.coeffs, recon.pose.rotation(), recon.pose.translation())?;
        let new_weights: Vec<f64> = r.iter().map(|ri| weight_update(*ri, state.mu, settings.cbar)).collect();
        let f = gnc_objective(&r, &new_weights, state.mu, settings.cbar, settings.alpha, &recon.coeffs)?;
        if !f.is_finite() {
            diagnostics.push(format!("iteration {}: non-finite objective", state.tau));
            status = GncStatus::SolveFailed("non-finite objective".into());
            break;
        }
        let previous = state.objective_history.last().copied();
        state.objective_history.push(f);
        state.weights = new_weights;
        mu_history.push(state.mu);
        state.tau += 1;
        best = Some((recon.clone(), report));
        if previous.is_some_and(|p| (f - p).abs() < settings.conv_tol) {
            status = GncStatus::Converged;
            break;
        }
        state.mu *= settings.mu_factor;
    }
    if status == GncStatus::IterLimit {
        diagnostics.push(format!("iteration limit {} reached", settings.max_iter));
    }

    let Some((mut reconstruction, last_solve)) = best else {
        return Err(Error::Solver(
            diagnostics.last().cloned().unwrap_or_else(|| "no weighted solve completed".into()),
        ));
    };
    if matches!(status, GncStatus::SolveFailed(_)) {
        reconstruction.certified = false;
    }
    reconstruction.weights = Some(state.weights.clone());
    Ok(GncReport {
        reconstruction,
        state,
        status,
        last_solve,
        mu_history,
        total_sdp_time,
        diagnostics,
    })
}

/// Robust counterpart of [`crate::certify::reconstruct`]. `settings.cbar` is
/// given in input landmark units (after dividing by the intrinsics) and is
/// rescaled with the landmarks; the result is mapped back to input units.
pub fn reconstruct_robust(model: &DeformableModel, obs: &Observation, settings: &GncSettings) -> Result<GncReport> {
    settings.validate()?;
    let (nmodel, nobs) = normalize_with_headroom(model, obs, LANDMARK_HEADROOM)?;
    let divisor = nobs.scale_z() / obs.scale_z();
    let inner = GncSettings {
        cbar: settings.cbar / divisor,
        ..settings.clone()
    };
    let mut report = shape_sharp(&nmodel, &nobs, &inner)?;
    let weights = report.reconstruction.weights.take();
    let mut recon = denormalize(&report.reconstruction, nobs.scale_z(), nmodel.scale_b(), obs.intrinsics())?;
    recon.weights = weights;
    report.reconstruction = recon;
    Ok(report)
}

/// Indices whose final weight marks them as outliers.
pub fn outlier_labels(weights: &[f64]) -> Vec<bool> {
    weights.iter().map(|w| *w < 0.5).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_update_examples() {
        assert_eq!(weight_update(0.0, 0.3, 1.0), 1.0);
        let mu: f64 = 0.7;
        let cbar: f64 = 0.2;
        let edge = ((mu + 1.0) / mu).sqrt() * cbar;
        assert_eq!(weight_update(edge, mu, cbar), 0.0);
        assert!((weight_update(1.0, 1.0, 1.0) - (2f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn surrogate_pieces() {
        assert_eq!(gnc_surrogate(0.0, 2.0, 1.0), 0.0);
        assert_eq!(gnc_surrogate(10.0, 2.0, 1.0), 1.0);
        // continuity at both edges
        for mu in [1e-3, 0.5, 3.0] {
            let (lo, hi) = interval_edges(mu, 0.8);
            for edge in [lo.sqrt(), hi.sqrt()] {
                let mid = 2.0 * 0.8 * edge * (mu * (mu + 1.0)).sqrt() - mu * (0.64 + edge * edge);
                assert!((mid - gnc_surrogate(edge, mu, 0.8)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn objective_limits() {
        let r = [0.1, 0.5, 2.0];
        let c = [0.2, 0.4];
        let ones = gnc_objective(&r, &[1.0; 3], 0.1, 1.0, 0.5, &c).unwrap();
        assert!((ones - (0.01 + 0.25 + 4.0 + 0.3)).abs() < 1e-12);
        let zeros = gnc_objective(&r, &[0.0; 3], 0.1, 0.7, 0.5, &c).unwrap();
        assert!((zeros - (3.0 * 0.49 + 0.3)).abs() < 1e-12);
        assert!(gnc_objective(&r, &[1.0; 2], 0.1, 1.0, 0.0, &c).is_err());
    }
}
