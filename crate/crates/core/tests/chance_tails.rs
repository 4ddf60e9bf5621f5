//! Chance-constraint margins and empirical violations against the normal tail.

use ccto::chance::{empirical_violation, erf_inv, lower_state_margin, state_margin, HalfPlaneConstraintSet};
use ccto::trajectory::{Rollout, TrajectoryBatch};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

#[test]
fn zero_margin_leaves_exactly_the_budget_in_the_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let h: DVector<f64> = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let l: DMatrix<f64> = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let cov = &l * l.transpose() + DMatrix::identity(3, 3) * 0.01;
        let mean = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let theta = rng.random_range(1e-4..0.5);
        let sd = (h.transpose() * &cov * &h)[(0, 0)].sqrt();
        let normal = Normal::new(h.dot(&mean), sd).unwrap();

        let upper = state_margin(&h, 0.0, &mean, &cov, theta).unwrap();
        // Moving the bound by the margin puts it exactly on the (1 − θ) quantile.
        let tail = 1.0 - normal.cdf(0.0 - upper);
        assert!((tail - theta).abs() < 1e-9, "upper: {tail} vs {theta}");

        let lower = lower_state_margin(&h, 0.0, &mean, &cov, theta).unwrap();
        let tail = normal.cdf(0.0 + lower);
        assert!((tail - theta).abs() < 1e-9, "lower: {tail} vs {theta}");
    }
}

#[test]
fn erf_inv_inverts_the_normal_cdf() {
    let std = Normal::new(0.0, 1.0).unwrap();
    for p in [1e-6, 1e-3, 0.01, 0.2, 0.5, 0.8, 0.99, 1.0 - 1e-6] {
        let z = std.inverse_cdf(p);
        let ours = std::f64::consts::SQRT_2 * erf_inv(2.0 * p - 1.0).unwrap();
        assert!((ours - z).abs() < 1e-9 * z.abs().max(1.0), "p = {p}: {ours} vs {z}");
    }
}

#[test]
fn empirical_violation_matches_gaussian_tails() {
    // Independent N(0, 1) states over three steps against the bound 1.5.
    let count = 40_000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rollouts = (0..count)
        .map(|_| {
            let states = (0..4).map(|_| DVector::from_element(1, rng.sample::<f64, _>(StandardNormal))).collect();
            Rollout::noiseless(states, vec![DVector::zeros(1); 3], vec![0.0; 3], 0.0)
        })
        .collect();
    let batch = TrajectoryBatch::new(rollouts).unwrap();
    let set = HalfPlaneConstraintSet::default().with_state_box(1, 0, -1e9, 1.5);
    let report = empirical_violation(&batch, &set);

    let p = 1.0 - Normal::new(0.0, 1.0).unwrap().cdf(1.5);
    let se = (p * (1.0 - p) / count as f64).sqrt();
    for (t, f) in report.state_upper[0].iter().enumerate() {
        assert!((f - p).abs() < 4.0 * se, "step {t}: {f} vs {p}");
    }
    // Steps 0..=3 are independent, so the joint frequency is 1 − (1 − p)^4.
    let joint = 1.0 - (1.0 - p).powi(4);
    let se = (joint * (1.0 - joint) / count as f64).sqrt();
    assert!((report.joint_state - joint).abs() < 4.0 * se, "{} vs {joint}", report.joint_state);
}
