#![allow(dead_code)]

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shapecert::bench::{generate, Instance, SynthConfig};
use shapecert::certify::{solve_centered_report, SolveReport, SolveSettings, LANDMARK_HEADROOM};
use shapecert::preprocess::{eliminate_translation, normalize_with_headroom, CenteredProblem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rotation from an axis-angle vector with uniformly random axis and angle in [0, pi].
pub fn expmap_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let axis = loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    Rotation3::new(axis * angle).into_inner()
}

pub fn instance(k: usize, n: usize, sigma: f64, seed: u64) -> Instance {
    generate(&SynthConfig {
        k,
        n,
        noise_sigma: sigma,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// Normalized, centered form of a synthetic instance, as the pipeline sees it.
pub fn centered(inst: &Instance, alpha: f64) -> CenteredProblem {
    let (m, o) = normalize_with_headroom(&inst.model, &inst.obs, LANDMARK_HEADROOM).unwrap();
    eliminate_translation(&m, &o, alpha).unwrap()
}

pub fn solve(prob: &CenteredProblem, settings: &SolveSettings) -> SolveReport {
    solve_centered_report(prob, settings).unwrap()
}

/// Feasible point `(c, R)` drawn uniformly from the box and Haar measure.
pub fn feasible_point(k: usize, rng: &mut impl Rng) -> (Vec<f64>, Matrix3<f64>) {
    let c = (0..k).map(|_| rng.random::<f64>()).collect();
    (c, shapecert::bench::synth::random_rotation(rng))
}
