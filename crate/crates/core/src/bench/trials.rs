//! Monte Carlo harness: one synthetic instance per seed, full pipeline,
//! error metrics against the generator's ground truth.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::synth::{generate, Instance, SynthConfig};
use crate::certify::{reconstruct, SolveSettings};
use crate::error::Result;
use crate::model::{coeff_error, geodesic_rotation_error, shape_error, Reconstruction};
use crate::robust::{outlier_labels, reconstruct_robust, GncSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSettings {
    pub solve: SolveSettings,
    pub robust: bool,
    /// Truncation threshold in landmark units; defaults to `5 sqrt(2) sigma`.
    pub cbar: Option<f64>,
}

impl Default for TrialSettings {
    fn default() -> Self {
        TrialSettings {
            solve: SolveSettings::default(),
            robust: false,
            cbar: None,
        }
    }
}

impl TrialSettings {
    /// Threshold used for a given noise level. A floor keeps noise-free runs
    /// well defined.
    pub fn cbar_for(&self, sigma: f64) -> f64 {
        self.cbar.unwrap_or(5.0 * 2f64.sqrt() * sigma.max(1e-4))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Outlier detection quality, outliers being the positive class. Empty
/// positive sets count as perfectly predicted.
pub fn classify(predicted: &[bool], truth: &[bool]) -> Classification {
    let tp = predicted.iter().zip(truth).filter(|(p, t)| **p && **t).count() as f64;
    let fp = predicted.iter().zip(truth).filter(|(p, t)| **p && !**t).count() as f64;
    let fne = predicted.iter().zip(truth).filter(|(p, t)| !**p && **t).count() as f64;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 };
    let recall = if tp + fne > 0.0 { tp / (tp + fne) } else { 1.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Classification { precision, recall, f1 }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub certified: bool,
    pub corank: usize,
    pub eta: f64,
    /// Relaxation lower bound and objective at the rounded candidate
    /// (normalized units).
    pub gamma: f64,
    pub f_hat: f64,
    pub coeff_error: f64,
    pub rotation_error_deg: f64,
    pub shape_error: f64,
    /// SDP wall time summed over every solve of the trial.
    pub sdp_time: f64,
    pub wall_time: f64,
    pub gnc_iterations: usize,
    pub sdp_status: String,
    pub outlier_precision: Option<f64>,
    pub outlier_recall: Option<f64>,
    pub outlier_f1: Option<f64>,
    /// Set when the pipeline failed; metrics are then NaN.
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn completed(&self) -> bool {
        self.error.is_none()
    }

    fn failed(trial: usize, seed: u64, wall_time: f64, message: String) -> Self {
        TrialRecord {
            trial,
            seed,
            certified: false,
            corank: 0,
            eta: f64::NAN,
            gamma: f64::NAN,
            f_hat: f64::NAN,
            coeff_error: f64::NAN,
            rotation_error_deg: f64::NAN,
            shape_error: f64::NAN,
            sdp_time: f64::NAN,
            wall_time,
            gnc_iterations: 0,
            sdp_status: String::new(),
            outlier_precision: None,
            outlier_recall: None,
            outlier_f1: None,
            error: Some(message),
        }
    }
}

struct Outcome {
    recon: Reconstruction,
    sdp_time: f64,
    sdp_status: String,
    gnc_iterations: usize,
}

fn run_pipeline(inst: &Instance, cfg: &SynthConfig, settings: &TrialSettings) -> Result<Outcome> {
    if settings.robust {
        let gnc = GncSettings {
            alpha: cfg.alpha,
            solve: settings.solve.clone(),
            ..GncSettings::new(settings.cbar_for(cfg.noise_sigma))
        };
        let report = reconstruct_robust(&inst.model, &inst.obs, &gnc)?;
        Ok(Outcome {
            sdp_time: report.total_sdp_time,
            sdp_status: report.last_solve.sdp_status.to_string(),
            gnc_iterations: report.state.tau,
            recon: report.reconstruction,
        })
    } else {
        let report = reconstruct(&inst.model, &inst.obs, cfg.alpha, &settings.solve)?;
        Ok(Outcome {
            sdp_time: report.sdp_time,
            sdp_status: report.sdp_status.to_string(),
            gnc_iterations: 0,
            recon: report.reconstruction,
        })
    }
}

/// Runs the pipeline on the instance generated from `cfg` with seed `cfg.seed + trial`.
pub fn run_trial(cfg: &SynthConfig, settings: &TrialSettings, trial: usize) -> TrialRecord {
    let clock = Instant::now();
    let seed = cfg.seed.wrapping_add(trial as u64);
    let cfg = SynthConfig { seed, ..cfg.clone() };
    let result = generate(&cfg).and_then(|inst| {
        let out = run_pipeline(&inst, &cfg, settings)?;
        Ok((inst, out))
    });
    let (inst, out) = match result {
        Ok(v) => v,
        Err(e) => return TrialRecord::failed(trial, seed, clock.elapsed().as_secs_f64(), e.to_string()),
    };
    let metrics = (|| -> Result<(f64, f64, f64)> {
        Ok((
            coeff_error(&out.recon.coeffs, &inst.truth.coeffs)?,
            geodesic_rotation_error(out.recon.pose.rotation(), &inst.truth.rotation)?,
            shape_error(&inst.model, &out.recon.coeffs, &inst.truth.coeffs)?,
        ))
    })();
    let (coeff_err, rot_err, shape_err) = match metrics {
        Ok(m) => m,
        Err(e) => return TrialRecord::failed(trial, seed, clock.elapsed().as_secs_f64(), e.to_string()),
    };
    let class = out
        .recon
        .weights
        .as_ref()
        .map(|w| classify(&outlier_labels(w), &inst.truth.outliers));
    TrialRecord {
        trial,
        seed,
        certified: out.recon.certified,
        corank: out.recon.corank,
        eta: out.recon.eta,
        gamma: out.recon.f_lower,
        f_hat: out.recon.f_upper,
        coeff_error: coeff_err,
        rotation_error_deg: rot_err,
        shape_error: shape_err,
        sdp_time: out.sdp_time,
        wall_time: clock.elapsed().as_secs_f64(),
        gnc_iterations: out.gnc_iterations,
        sdp_status: out.sdp_status,
        outlier_precision: class.map(|c| c.precision),
        outlier_recall: class.map(|c| c.recall),
        outlier_f1: class.map(|c| c.f1),
        error: None,
    }
}

/// One row of the aggregate table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub statistic: &'static str,
    pub sdp_time: f64,
    pub corank: f64,
    pub duality_gap: f64,
    pub c_error: f64,
    pub r_error_deg: f64,
    pub gnc_iterations: f64,
}

#[derive(Debug, Clone)]
pub struct TrialSummary {
    pub records: Vec<TrialRecord>,
    /// Mean row, then median row, over completed trials (NaN when none).
    pub aggregates: [Aggregate; 2],
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn aggregate(records: &[TrialRecord]) -> [Aggregate; 2] {
    let done: Vec<&TrialRecord> = records.iter().filter(|r| r.completed()).collect();
    let column = |f: fn(&TrialRecord) -> f64| done.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let cols = [
        column(|r| r.sdp_time),
        column(|r| r.corank as f64),
        column(|r| r.eta),
        column(|r| r.coeff_error),
        column(|r| r.rotation_error_deg),
        column(|r| r.gnc_iterations as f64),
    ];
    let row = |statistic: &'static str, stat: fn(&[f64]) -> f64| Aggregate {
        statistic,
        sdp_time: stat(&cols[0]),
        corank: stat(&cols[1]),
        duality_gap: stat(&cols[2]),
        c_error: stat(&cols[3]),
        r_error_deg: stat(&cols[4]),
        gnc_iterations: stat(&cols[5]),
    };
    [row("mean", mean), row("median", median)]
}

/// Runs `trials` independent trials in parallel with seeds `cfg.seed + i`.
pub fn run_trials(cfg: &SynthConfig, settings: &TrialSettings, trials: usize) -> Result<TrialSummary> {
    if trials == 0 {
        return Err(crate::Error::invalid("at least one trial is required"));
    }
    cfg.validate()?;
    let records: Vec<TrialRecord> = (0..trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, settings, i))
        .collect();
    let aggregates = aggregate(&records);
    Ok(TrialSummary { records, aggregates })
}

pub fn write_records_csv<W: Write>(records: &[TrialRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_aggregates_csv<W: Write>(rows: &[Aggregate], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_counts() {
        let truth = [true, true, false, false];
        let c = classify(&[true, false, true, false], &truth);
        assert!((c.precision - 0.5).abs() < 1e-15 && (c.recall - 0.5).abs() < 1e-15);
        let perfect = classify(&[false; 4], &[false; 4]);
        assert_eq!(perfect.f1, 1.0);
    }

    #[test]
    fn statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(mean(&[]).is_nan());
    }
}
