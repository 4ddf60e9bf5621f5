//! End-to-end optimizer checks against analytic LQR and Monte-Carlo risk.

mod common;

use std::time::Instant;

use ccto::chance::RiskLevels;
use ccto::dynamics_fit::FitOptions;
use ccto::optimizer::{run_algorithm, Algorithm, OptimizerConfig};

fn exact_fit() -> FitOptions {
    FitOptions {
        ridge: 1e-10,
        standardize: false,
    }
}

#[test]
fn unconstrained_nominal_matches_lqr() {
    let task = common::quiet_double_integrator(20);
    let oracle = common::batch_lqr(&task);
    for algorithm in [Algorithm::Ccto, Algorithm::Ilqg] {
        let cfg = OptimizerConfig {
            algorithm,
            alpha: 1.0,
            rollouts: 20,
            iterations: 3,
            seed: 1,
            fit: exact_fit(),
            ..OptimizerConfig::default()
        };
        let start = Instant::now();
        let out = run_algorithm(&task.env, &task.reward, &task.env.spec.constraints, &cfg).unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        let nominal = &out.records.last().unwrap().nominal;
        let err = nominal.states.iter().zip(&oracle).map(|(s, o)| (s - o).amax()).fold(0.0, f64::max);
        assert!(err <= 1e-4, "{algorithm}: max state error {err:e}");
        assert!(elapsed < 5.0, "{algorithm}: {elapsed:.1} s");
    }
}

#[test]
fn joint_violation_stays_within_the_budget() {
    let task = common::scalar_calibration_task(20);
    let cfg = OptimizerConfig {
        algorithm: Algorithm::Ccto,
        alpha: 1.0,
        rollouts: 20_000,
        iterations: 5,
        risk: RiskLevels::uniform(0.05),
        seed: 2,
        ..OptimizerConfig::default()
    };
    let out = run_algorithm(&task.env, &task.reward, &task.env.spec.constraints, &cfg).unwrap();
    let violation = common::monte_carlo_upper_violation(&task, &out.controller, 0, 1.0, 20_000, 1_000);
    let limit = 0.05 + 3.0 * (0.05f64 * 0.95 / 20_000.0).sqrt();
    assert!(violation <= limit, "violation {violation} > {limit}");
    // The limit must actually bind: the nominal ends close to it.
    let last = out.reference.states.last().unwrap()[0];
    assert!(last > 0.7 && last < 1.0, "terminal nominal state {last}");
}
