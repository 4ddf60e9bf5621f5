//! The stacked closed-loop system against step-by-step propagation, and the
//! closed-form expected reward against Monte-Carlo estimates.

mod common;

use ccto::augmented::{belief_covariance, build_augmented, build_qp_objective};
use ccto::ilqg::QuadraticReward;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn stacked_belief_matches_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..50 {
        let dev = common::stacked_deviation(&mut rng);
        assert!(dev <= 1e-10, "case {case}: {dev:e}");
    }
}

#[test]
fn cross_step_covariance_matches_recursion() {
    // Cov(s_{t+1}, s_t) = Â_t Cov(s_t) for the closed loop.
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let (n, m, horizon) = (2, 1, 4);
    let dynamics = common::random_linear(&mut rng, n, m, horizon);
    let ctrl = common::random_controller(&mut rng, n, m, horizon);
    let reward =
        QuadraticReward::time_invariant(DMatrix::identity(n, n), DMatrix::identity(n, n), DMatrix::identity(m, m), DVector::zeros(n), horizon)
            .unwrap();
    let sigma0 = DMatrix::identity(n, n) * 0.05;
    let sys = build_augmented(&dynamics, &ctrl, &reward, &sigma0).unwrap();
    let cov = belief_covariance(&sys).unwrap();
    for t in 0..horizon {
        let closed = &dynamics.a[t] + &dynamics.b[t] * &ctrl.gains[t];
        let block = cov.state.view(((t + 1) * n, t * n), (n, n)).into_owned();
        let expected = &closed * cov.state.view((t * n, t * n), (n, n));
        assert!((block - expected).amax() < 1e-10, "step {t}");
    }
}

#[test]
fn expected_reward_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let horizon = 5;
    let dynamics = common::random_linear(&mut rng, 1, 1, horizon);
    let ctrl = common::random_controller(&mut rng, 1, 1, horizon);
    let reward = QuadraticReward::time_invariant(
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1) * 4.0,
        DMatrix::identity(1, 1) * 0.3,
        DVector::from_element(1, 0.7),
        horizon,
    )
    .unwrap();
    let sigma0 = DMatrix::identity(1, 1) * 0.04;
    let s0 = DVector::from_element(1, 0.2);
    let sys = build_augmented(&dynamics, &ctrl, &reward, &sigma0).unwrap();
    let cov = belief_covariance(&sys).unwrap();
    let objective = build_qp_objective(&sys, &cov, &s0).unwrap();
    for trial in 0..3u64 {
        let k = DVector::from_fn(horizon, |_, _| rng.random_range(-1.0..1.0));
        let mut shifted = ctrl.clone();
        shifted.set_stacked_feedforward(&k);
        let (mc, se) = common::monte_carlo_reward(&dynamics, &shifted, &reward, &s0, &sigma0, 100_000, 500 + trial);
        let closed = objective.evaluate(&k);
        assert!((closed - mc).abs() <= 3.0 * se, "J = {closed}, Monte-Carlo {mc} ± {se}");
    }
}

#[test]
fn objective_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (n, m, horizon) = (2, 1, 5);
    let dynamics = common::random_linear(&mut rng, n, m, horizon);
    let ctrl = common::random_controller(&mut rng, n, m, horizon);
    let reward = QuadraticReward::time_invariant(
        DMatrix::identity(n, n),
        DMatrix::identity(n, n) * 4.0,
        DMatrix::identity(m, m) * 0.1,
        DVector::from_vec(vec![1.0, 0.0]),
        horizon,
    )
    .unwrap();
    let sys = build_augmented(&dynamics, &ctrl, &reward, &(DMatrix::identity(n, n) * 0.01)).unwrap();
    let cov = belief_covariance(&sys).unwrap();
    let obj = build_qp_objective(&sys, &cov, &DVector::from_vec(vec![0.3, -0.2])).unwrap();
    let k = DVector::from_fn(horizon * m, |_, _| rng.random_range(-1.0..1.0));
    let grad = obj.gradient(&k);
    let h = 1e-5;
    for i in 0..k.len() {
        let (mut kp, mut km) = (k.clone(), k.clone());
        kp[i] += h;
        km[i] -= h;
        let fd = (obj.evaluate(&kp) - obj.evaluate(&km)) / (2.0 * h);
        assert!((fd - grad[i]).abs() <= 1e-6 * grad[i].abs().max(1.0), "component {i}: {fd} vs {}", grad[i]);
    }
}
