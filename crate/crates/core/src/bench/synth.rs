//! Synthetic instances: Gaussian bases, uniform coefficients, Haar
//! rotations, Gaussian landmark noise and uniform outliers.

use nalgebra::{Matrix2xX, Matrix3, Matrix3xX, Quaternion, UnitQuaternion, Vector2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{project, DeformableModel, Observation};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub k: usize,
    pub n: usize,
    /// Standard deviation of each landmark coordinate's noise.
    pub noise_sigma: f64,
    /// Number of nonzero coefficients; 0 means all are drawn.
    pub sparse_support: usize,
    pub outlier_rate: f64,
    pub seed: u64,
    pub alpha: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            k: 5,
            n: 100,
            noise_sigma: 0.01,
            sparse_support: 0,
            outlier_rate: 0.0,
            seed: 0,
            alpha: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n < 4 {
            return Err(Error::invalid("synthetic instances need K >= 1 and N >= 4"));
        }
        if self.sparse_support > self.k {
            return Err(Error::invalid("sparse support exceeds K"));
        }
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return Err(Error::invalid("outlier rate must lie in [0, 1)"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be finite and nonnegative"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn num_outliers(&self) -> usize {
        (self.outlier_rate * self.n as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub coeffs: Vec<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector2<f64>,
    /// `true` for landmarks replaced by outliers.
    pub outliers: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub model: DeformableModel,
    pub obs: Observation,
    pub truth: GroundTruth,
}

pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if quat.norm() > 1e-9 {
            return UnitQuaternion::from_quaternion(quat).to_rotation_matrix().into_inner();
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<Instance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bases: Vec<Matrix3xX<f64>> = (0..cfg.k)
        .map(|_| Matrix3xX::from_fn(cfg.n, |_, _| StandardNormal.sample(&mut rng)))
        .collect();

    let mut coeffs = vec![0.0; cfg.k];
    if cfg.sparse_support == 0 {
        for c in &mut coeffs {
            *c = rng.random::<f64>();
        }
    } else {
        let mut support = sample(&mut rng, cfg.k, cfg.sparse_support).into_vec();
        support.sort_unstable();
        for i in support {
            coeffs[i] = rng.random::<f64>();
        }
    }
    let rotation = random_rotation(&mut rng);
    let model = DeformableModel::new(bases)?;
    let shape = model.shape(&coeffs)?;

    let mut z = Matrix2xX::zeros(cfg.n);
    for i in 0..cfg.n {
        let p = project(&rotation, &shape.column(i).into_owned());
        let e: [f64; 2] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        z.set_column(i, &(p + Vector2::new(e[0], e[1]) * cfg.noise_sigma));
    }

    // Outliers are uniform in the disc bounding the inliers, which is the unit
    // disc once landmarks are normalized.
    let radius = z.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut outliers = vec![false; cfg.n];
    let mut idx = sample(&mut rng, cfg.n, cfg.num_outliers()).into_vec();
    idx.sort_unstable();
    for i in idx {
        let rho = radius * rng.random::<f64>().sqrt();
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        z.set_column(i, &Vector2::new(rho * theta.cos(), rho * theta.sin()));
        outliers[i] = true;
    }

    let obs = Observation::new(z, None, (1.0, 1.0))?;
    Ok(Instance {
        model,
        obs,
        truth: GroundTruth {
            coeffs,
            rotation,
            translation: Vector2::zeros(),
            outliers,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_truth_has_zero_residual() {
        let inst = generate(&SynthConfig {
            noise_sigma: 0.0,
            ..SynthConfig::default()
        })
        .unwrap();
        let s = inst.model.shape(&inst.truth.coeffs).unwrap();
        for i in 0..inst.model.num_points() {
            let r = inst.obs.landmark(i) - project(&inst.truth.rotation, &s.column(i).into_owned());
            assert_eq!(r.norm(), 0.0);
        }
    }

    #[test]
    fn seeded_generation_repeats() {
        let cfg = SynthConfig {
            outlier_rate: 0.3,
            sparse_support: 2,
            seed: 42,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.obs, b.obs);
        assert_eq!(a.model, b.model);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.truth.coeffs.iter().filter(|c| **c != 0.0).count(), 2);
        assert_eq!(a.truth.outliers.iter().filter(|o| **o).count(), 30);
    }

    #[test]
    fn empirical_noise_level() {
        let sigma = 0.05;
        let cfg = SynthConfig {
            k: 1,
            n: 5000,
            noise_sigma: sigma,
            seed: 3,
            ..SynthConfig::default()
        };
        let inst = generate(&cfg).unwrap();
        let s = inst.model.shape(&inst.truth.coeffs).unwrap();
        let mut sq = 0.0;
        for i in 0..cfg.n {
            let r = inst.obs.landmark(i) - project(&inst.truth.rotation, &s.column(i).into_owned());
            sq += r.norm_squared();
        }
        let est = (sq / (2 * cfg.n) as f64).sqrt();
        assert!((est - sigma).abs() < 0.05 * sigma, "{est}");
    }

    #[test]
    fn rotations_are_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            assert!(crate::model::check_rotation(&r).is_ok());
        }
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig { k: 0, ..SynthConfig::default() },
            SynthConfig { sparse_support: 6, ..SynthConfig::default() },
            SynthConfig { outlier_rate: 1.0, ..SynthConfig::default() },
        ] {
            assert!(generate(&cfg).is_err());
        }
    }
}
