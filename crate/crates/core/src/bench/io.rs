//! JSON files for models, observations and results.
//!
//! ```text
//! model        {"k": K, "n": N, "bases": [K][N][3]}
//! observation  {"landmarks": [N][2], "weights": [N] (optional), "camera": {"sx": .., "sy": ..}}
//! result       {"c": [K], "R": [9] row-major, "t": [2], "gamma", "f_hat", "eta",
//!               "corank", "certified", "weights": [N] (optional)}
//! ```

use std::fs;
use std::path::Path;

use nalgebra::{Matrix2xX, Matrix3, Matrix3xX, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeformableModel, Observation, Pose, Reconstruction};

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    k: usize,
    n: usize,
    bases: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Camera {
    sx: f64,
    sy: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationFile {
    landmarks: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    camera: Camera,
}

#[derive(Debug, Serialize, Deserialize)]
struct ResultFile {
    c: Vec<f64>,
    #[serde(rename = "R")]
    r: Vec<f64>,
    t: Vec<f64>,
    gamma: f64,
    f_hat: f64,
    eta: f64,
    corank: usize,
    certified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

fn parse_error(path: &str, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        field: field.into(),
        message: message.into(),
    }
}

fn from_json<T: for<'de> Deserialize<'de>>(text: &str, path: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.contains("field"))
            .unwrap_or("<document>")
            .to_string();
        parse_error(path, field, msg)
    })
}

fn read(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn model_to_json(model: &DeformableModel) -> Result<String> {
    let file = ModelFile {
        k: model.num_bases(),
        n: model.num_points(),
        bases: model
            .bases()
            .iter()
            .map(|b| b.column_iter().map(|c| c.iter().cloned().collect()).collect())
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// `path` only labels error messages.
pub fn model_from_json(text: &str, path: &str) -> Result<DeformableModel> {
    let file: ModelFile = from_json(text, path)?;
    if file.bases.len() != file.k {
        return Err(parse_error(
            path,
            "bases",
            format!("expected {} bases, found {}", file.k, file.bases.len()),
        ));
    }
    let mut bases = Vec::with_capacity(file.k);
    for (ki, basis) in file.bases.iter().enumerate() {
        if basis.len() != file.n {
            return Err(parse_error(
                path,
                format!("bases[{ki}]"),
                format!("expected {} points, found {}", file.n, basis.len()),
            ));
        }
        let mut m = Matrix3xX::zeros(file.n);
        for (i, p) in basis.iter().enumerate() {
            if p.len() != 3 {
                return Err(parse_error(
                    path,
                    format!("bases[{ki}][{i}]"),
                    format!("expected 3 coordinates, found {}", p.len()),
                ));
            }
            for (r, v) in p.iter().enumerate() {
                m[(r, i)] = *v;
            }
        }
        bases.push(m);
    }
    DeformableModel::new(bases).map_err(|e| parse_error(path, "bases", e.to_string()))
}

pub fn observation_to_json(obs: &Observation) -> Result<String> {
    let (sx, sy) = obs.intrinsics();
    let file = ObservationFile {
        landmarks: obs.landmarks().column_iter().map(|c| vec![c[0], c[1]]).collect(),
        weights: Some(obs.weights().to_vec()),
        camera: Camera { sx, sy },
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Missing weights default to one per landmark.
pub fn observation_from_json(text: &str, path: &str) -> Result<Observation> {
    let file: ObservationFile = from_json(text, path)?;
    let mut z = Matrix2xX::zeros(file.landmarks.len());
    for (i, p) in file.landmarks.iter().enumerate() {
        if p.len() != 2 {
            return Err(parse_error(
                path,
                format!("landmarks[{i}]"),
                format!("expected 2 coordinates, found {}", p.len()),
            ));
        }
        z[(0, i)] = p[0];
        z[(1, i)] = p[1];
    }
    if let Some(w) = &file.weights {
        if w.len() != file.landmarks.len() {
            return Err(parse_error(
                path,
                "weights",
                format!("expected {} weights, found {}", file.landmarks.len(), w.len()),
            ));
        }
    }
    Observation::new(z, file.weights, (file.camera.sx, file.camera.sy))
        .map_err(|e| parse_error(path, "observation", e.to_string()))
}

pub fn result_to_json(recon: &Reconstruction) -> Result<String> {
    let r = recon.pose.rotation();
    let t = recon.pose.translation();
    let file = ResultFile {
        c: recon.coeffs.clone(),
        r: (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)])).collect(),
        t: vec![t.x, t.y],
        gamma: recon.f_lower,
        f_hat: recon.f_upper,
        eta: recon.eta,
        corank: recon.corank,
        certified: recon.certified,
        weights: recon.weights.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn result_from_json(text: &str, path: &str) -> Result<Reconstruction> {
    let file: ResultFile = from_json(text, path)?;
    if file.r.len() != 9 {
        return Err(parse_error(path, "R", format!("expected 9 entries, found {}", file.r.len())));
    }
    if file.t.len() != 2 {
        return Err(parse_error(path, "t", format!("expected 2 entries, found {}", file.t.len())));
    }
    let rotation = Matrix3::from_row_slice(&file.r);
    let pose = Pose::new(rotation, Vector2::new(file.t[0], file.t[1]))
        .map_err(|e| parse_error(path, "R", e.to_string()))?;
    Ok(Reconstruction {
        coeffs: file.c,
        pose,
        f_lower: file.gamma,
        f_upper: file.f_hat,
        eta: file.eta,
        corank: file.corank,
        certified: file.certified,
        weights: file.weights,
    })
}

pub fn save_model(path: impl AsRef<Path>, model: &DeformableModel) -> Result<()> {
    fs::write(path, model_to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DeformableModel> {
    let path = path.as_ref();
    model_from_json(&read(path)?, &path.display().to_string())
}

pub fn save_observation(path: impl AsRef<Path>, obs: &Observation) -> Result<()> {
    fs::write(path, observation_to_json(obs)?)?;
    Ok(())
}

pub fn load_observation(path: impl AsRef<Path>) -> Result<Observation> {
    let path = path.as_ref();
    observation_from_json(&read(path)?, &path.display().to_string())
}

pub fn save_result(path: impl AsRef<Path>, recon: &Reconstruction) -> Result<()> {
    fs::write(path, result_to_json(recon)?)?;
    Ok(())
}

pub fn load_result(path: impl AsRef<Path>) -> Result<Reconstruction> {
    let path = path.as_ref();
    result_from_json(&read(path)?, &path.display().to_string())
}

/// Writes any serializable value (used for ground truth side files).
pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_json(path.as_ref(), value)
}
