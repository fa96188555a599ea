mod common;

use nalgebra::{Matrix2xX, Vector2};
use rand::Rng;

use shapecert::bench::{generate, SynthConfig};
use shapecert::certify::{reconstruct, SolveSettings};
use shapecert::model::{coeff_error, geodesic_rotation_error, project, Observation};
use shapecert::robust::{
    gnc_objective, gnc_surrogate, outlier_labels, reconstruct_robust, residuals, weight_update, GncSettings, GncStatus,
};

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn outlier_process(w: f64, mu: f64, cbar: f64) -> f64 {
    mu * (1.0 - w) / (mu + w) * cbar * cbar
}

#[test]
fn weight_update_matches_grid_minimizer() {
    let mut rng = common::rng(10);
    let steps = 100_000;
    for _ in 0..1000 {
        let mu = log_uniform(&mut rng, 1e-4, 1e3);
        let cbar = rng.random_range(0.05..2.0);
        let r = rng.random_range(0.0..3.0) * cbar;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=steps {
            let w = i as f64 / steps as f64;
            let v = w * r * r + outlier_process(w, mu, cbar);
            if v < best.0 {
                best = (v, w);
            }
        }
        let w = weight_update(r, mu, cbar);
        assert!((w - best.1).abs() < 1e-5, "r {r} mu {mu} cbar {cbar}: {w} vs grid {}", best.1);
    }
}

#[test]
fn weight_update_is_continuous_monotone_and_bounded() {
    for (mu, cbar) in [(1e-4f64, 1.0), (0.3, 0.2), (1.0, 1.0), (50.0, 0.01)] {
        let lo = (mu / (mu + 1.0)).sqrt() * cbar;
        let hi = ((mu + 1.0) / mu).sqrt() * cbar;
        assert!((weight_update(lo, mu, cbar) - 1.0).abs() < 1e-12);
        assert!(weight_update(hi, mu, cbar).abs() < 1e-12);
        for edge in [lo, hi] {
            let eps = 1e-10 * edge;
            let jump = (weight_update(edge - eps, mu, cbar) - weight_update(edge + eps, mu, cbar)).abs();
            assert!(jump < 1e-6, "jump {jump} at {edge}");
        }
        let mut prev = f64::INFINITY;
        for i in 0..=20_000 {
            let r = 1.5 * hi * i as f64 / 20_000.0;
            let w = weight_update(r, mu, cbar);
            assert!((0.0..=1.0).contains(&w));
            assert!(w <= prev + 1e-15);
            prev = w;
        }
    }
    assert!((weight_update(1.0, 1.0, 1.0) - (2f64.sqrt() - 1.0)).abs() < 1e-12);
    assert_eq!(weight_update(0.0, 0.5, 1.0), 1.0);
}

#[test]
fn surrogate_is_convex_for_small_mu() {
    let h = 1e-2;
    for mu in [1e-6f64, 1e-5, 1e-4, 1e-3] {
        for cbar in [0.05, 0.3, 1.0] {
            let top = ((mu + 1.0) / mu).sqrt() * cbar * 1.2;
            let n = (top / h) as usize;
            for i in 1..n {
                let r = i as f64 * h;
                let d2 = gnc_surrogate(r + h, mu, cbar) - 2.0 * gnc_surrogate(r, mu, cbar) + gnc_surrogate(r - h, mu, cbar);
                assert!(d2 >= -1e-6, "mu {mu} cbar {cbar} r {r}: {d2:e}");
            }
        }
    }
}

#[test]
fn surrogate_approaches_truncated_least_squares() {
    let mu = 1e6;
    for cbar in [0.01, 0.1, 1.0, 2.0] {
        for i in 0..=5000 {
            let r = 3.0 * cbar * i as f64 / 5000.0;
            let tls = (r * r).min(cbar * cbar);
            assert!((gnc_surrogate(r, mu, cbar) - tls).abs() < 1e-4);
        }
    }
    assert_eq!(gnc_surrogate(0.0, 0.1, 1.0), 0.0);
    assert_eq!(gnc_surrogate(100.0, 0.1, 1.0), 1.0);
}

#[test]
fn surrogate_equals_minimized_joint_cost() {
    let mut rng = common::rng(11);
    for _ in 0..500 {
        let mu = log_uniform(&mut rng, 1e-3, 1e2);
        let cbar = rng.random_range(0.1..1.0);
        let r = rng.random_range(0.0..3.0);
        let w = weight_update(r, mu, cbar);
        let joint = w * r * r + outlier_process(w, mu, cbar);
        assert!((joint - gnc_surrogate(r, mu, cbar)).abs() < 1e-10);
    }
}

#[test]
fn joint_objective_matches_direct_sum() {
    let mut rng = common::rng(12);
    for _ in 0..100 {
        let n = rng.random_range(1..30);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let c: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
        let (mu, cbar, alpha) = (rng.random_range(0.01..5.0), rng.random_range(0.1..1.0), rng.random_range(0.0..0.1));
        let mut direct = alpha * (c[0] + c[1] + c[2]);
        for i in 0..n {
            direct += w[i] * r[i] * r[i] + mu * (1.0 - w[i]) / (mu + w[i]) * cbar * cbar;
        }
        let got = gnc_objective(&r, &w, mu, cbar, alpha, &c).unwrap();
        assert!((got - direct).abs() < 1e-12 * (1.0 + direct));
    }
    let r = [0.5, 1.5];
    assert!((gnc_objective(&r, &[0.0, 0.0], 0.3, 0.4, 0.0, &[]).unwrap() - 2.0 * 0.16).abs() < 1e-15);
    assert!((gnc_objective(&r, &[1.0, 1.0], 0.3, 0.4, 0.1, &[1.0]).unwrap() - (0.25 + 2.25 + 0.1)).abs() < 1e-15);
}

#[test]
fn residuals_examples() {
    let inst = common::instance(3, 20, 0.0, 13);
    let t = &inst.truth;
    let r = residuals(&inst.model, &inst.obs, &t.coeffs, &t.rotation, &t.translation).unwrap();
    assert!(r.iter().all(|v| v.abs() < 1e-12));

    let mut z = inst.obs.landmarks().clone();
    z[(0, 4)] += 0.3;
    z[(1, 4)] -= 0.4;
    let moved = Observation::new(z, None, (1.0, 1.0)).unwrap();
    let r = residuals(&inst.model, &moved, &t.coeffs, &t.rotation, &t.translation).unwrap();
    assert!((r[4] - 0.5).abs() < 1e-12);
    assert!(r.iter().enumerate().all(|(i, v)| i == 4 || v.abs() < 1e-12));
}

#[test]
fn residuals_match_naive_evaluation() {
    let inst = common::instance(2, 15, 0.05, 14);
    let mut rng = common::rng(15);
    let (c, rot) = common::feasible_point(2, &mut rng);
    let t = Vector2::new(0.2, -0.1);
    let (sx, sy) = (1.5, 0.5);
    let z = Matrix2xX::from_fn(15, |_, _| rng.random_range(-1.0..1.0));
    let obs = Observation::new(z.clone(), None, (sx, sy)).unwrap();
    let got = residuals(&inst.model, &obs, &c, &rot, &t).unwrap();
    for i in 0..15 {
        let mut p = nalgebra::Vector3::zeros();
        for k in 0..2 {
            p += inst.model.basis(k).column(i) * c[k];
        }
        let q = project(&rot, &p);
        let e = Vector2::new(z[(0, i)] - sx * q.x - t.x, z[(1, i)] - sy * q.y - t.y);
        assert!((got[i] - e.norm()).abs() < 1e-12);
    }
}

#[test]
fn outlier_free_run_matches_plain_solve() {
    let sigma = 0.01;
    let inst = common::instance(3, 40, sigma, 16);
    let plain = reconstruct(&inst.model, &inst.obs, 0.0, &SolveSettings::default()).unwrap().reconstruction;
    let report = reconstruct_robust(&inst.model, &inst.obs, &GncSettings::new(5.0 * 2f64.sqrt() * sigma)).unwrap();
    let robust = &report.reconstruction;
    assert_eq!(report.status, GncStatus::Converged);
    assert!(coeff_error(&robust.coeffs, &plain.coeffs).unwrap() < 1e-4);
    assert!(geodesic_rotation_error(robust.pose.rotation(), plain.pose.rotation()).unwrap() < 0.1);
    assert!(robust.weights.as_ref().unwrap().iter().all(|w| *w > 0.9));
}

#[test]
fn half_outliers_are_separated_by_the_weights() {
    let sigma = 0.01;
    let cfg = SynthConfig {
        k: 3,
        n: 50,
        noise_sigma: sigma,
        outlier_rate: 0.5,
        seed: 17,
        ..SynthConfig::default()
    };
    let inst = generate(&cfg).unwrap();
    let report = reconstruct_robust(&inst.model, &inst.obs, &GncSettings::new(5.0 * 2f64.sqrt() * sigma)).unwrap();
    let w = report.reconstruction.weights.as_ref().unwrap();
    for (i, is_outlier) in inst.truth.outliers.iter().enumerate() {
        if *is_outlier {
            assert!(w[i] < 0.1, "outlier {i} kept with weight {}", w[i]);
        } else {
            assert!(w[i] > 0.9, "inlier {i} rejected with weight {}", w[i]);
        }
    }
    assert_eq!(outlier_labels(w), inst.truth.outliers);
    assert!(geodesic_rotation_error(report.reconstruction.pose.rotation(), &inst.truth.rotation).unwrap() < 2.0);

    let mu = &report.mu_history;
    assert_eq!(mu.len(), report.state.tau);
    for (tau, m) in mu.iter().enumerate() {
        assert_eq!(*m, 1e-4 * 2f64.powi(tau as i32));
    }
    assert!(report.state.objective_history.iter().all(|f| f.is_finite()));
}

#[test]
fn zero_residuals_converge_immediately() {
    let inst = common::instance(2, 25, 0.0, 18);
    let report = reconstruct_robust(&inst.model, &inst.obs, &GncSettings::new(0.1)).unwrap();
    assert_eq!(report.status, GncStatus::Converged);
    assert!(report.state.tau <= 2, "{} iterations", report.state.tau);
    assert!(report.state.weights.iter().all(|w| *w == 1.0));
}

#[test]
fn invalid_settings_are_rejected() {
    let inst = common::instance(1, 10, 0.0, 19);
    assert!(reconstruct_robust(&inst.model, &inst.obs, &GncSettings::new(0.0)).is_err());
    let mut s = GncSettings::new(0.1);
    s.mu_factor = 1.0;
    assert!(reconstruct_robust(&inst.model, &inst.obs, &s).is_err());
}
