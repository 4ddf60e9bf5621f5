//! Runtime self-test: each check compares a library routine against an
//! independently coded reference on a small derived example.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augmented::{build_augmented, build_qp_objective, belief_covariance, propagate_belief};
use crate::chance::{erf_inv, state_margin, HalfPlaneConstraintSet};
use crate::dynamics_fit::{fit_time_variant_dynamics, FitOptions, mean_trajectory, LinearGaussianDynamics, ReferenceTrajectory};
use crate::env::{CartPoleParams, Environment, EnvironmentSpec, FurutaParams, LinearPlant, Plant, Task};
use crate::ilqg::{backward_pass, forward_pass, quadratize_reward, AffineController, QuadraticReward};
use crate::optimizer::{run_algorithm, Algorithm, OptimizerConfig};
use crate::qp::{solve, QuadraticProgram};
use crate::trajectory::{Rollout, TrajectoryBatch};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<String, String>;

const CHECKS: &[(&str, Check)] = &[
    ("erf_inv_vs_bisection", erf_inv_vs_bisection),
    ("margin_at_two_sigma", margin_at_two_sigma),
    ("mean_vs_compensated_sum", mean_vs_compensated_sum),
    ("fit_recovers_known_model", fit_recovers_known_model),
    ("value_vs_riccati", value_vs_riccati),
    ("stacked_vs_recursion", stacked_vs_recursion),
    ("objective_gradient_vs_differences", objective_gradient_vs_differences),
    ("qp_vs_exhaustive_kkt", qp_vs_exhaustive_kkt),
    ("cart_pole_vs_lagrangian", cart_pole_vs_lagrangian),
    ("furuta_vs_lagrangian", furuta_vs_lagrangian),
    ("cart_pole_energy", cart_pole_energy),
    ("linear_env_closed_form", linear_env_closed_form),
    ("lqr_equivalence", lqr_equivalence),
    ("seeded_batches_repeat", seeded_batches_repeat),
];

pub fn run_selftest() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
            let (passed, detail) = match outcome {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult { name, passed, detail }
        })
        .collect()
}

fn within(what: &str, err: f64, tol: f64) -> Result<String, String> {
    if err <= tol {
        Ok(format!("{what} {err:.2e} <= {tol:.0e}"))
    } else {
        Err(format!("{what} {err:.2e} > {tol:.0e}"))
    }
}

fn err_str(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn erf_inv_vs_bisection() -> Result<String, String> {
    let (mut lo, mut hi) = (0.0f64, 6.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if libm::erf(mid) < 0.98 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    within("|erf_inv(0.98) - bisection|", (erf_inv(0.98).map_err(err_str)? - lo).abs(), 1e-9)
}

fn margin_at_two_sigma() -> Result<String, String> {
    // P(z > 2) for a standard normal; the required backoff is exactly 2.
    let theta = 0.5 * libm::erfc(2.0 / 2f64.sqrt());
    let h = DVector::from_vec(vec![1.0, 0.0]);
    let m = state_margin(&h, 2.0, &DVector::zeros(2), &DMatrix::identity(2, 2), theta).map_err(err_str)?;
    within("|margin|", m.abs(), 1e-9)
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize, count: usize) -> TrajectoryBatch {
    let rollouts = (0..count)
        .map(|_| {
            Rollout::noiseless(
                (0..=horizon).map(|_| DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0))).collect(),
                (0..horizon).map(|_| DVector::from_fn(m, |_, _| rng.random_range(-5.0..5.0))).collect(),
                vec![0.0; horizon],
                0.0,
            )
        })
        .collect();
    TrajectoryBatch::new(rollouts).expect("consistent batch")
}

fn mean_vs_compensated_sum() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let batch = random_batch(&mut rng, 4, 1, 10, 50);
    let mean = mean_trajectory(&batch).map_err(err_str)?;
    let mut worst = 0.0f64;
    for t in 0..=10 {
        for i in 0..4 {
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for r in batch.rollouts() {
                let y = r.states[t][i] - comp;
                let s = sum + y;
                comp = (s - sum) - y;
                sum = s;
            }
            worst = worst.max((mean.states[t][i] - sum / 50.0).abs());
        }
    }
    within("max deviation", worst, 1e-12)
}

fn fit_recovers_known_model() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rollouts = (0..60)
        .map(|_| {
            let s0 = rng.random_range(-1.0..1.0);
            let a0 = rng.random_range(-1.0..1.0);
            Rollout::noiseless(
                vec![DVector::from_element(1, s0), DVector::from_element(1, 0.9 * s0 + 0.5 * a0 + 0.1)],
                vec![DVector::from_element(1, a0)],
                vec![0.0],
                0.0,
            )
        })
        .collect();
    let dynamics = fit_time_variant_dynamics(&TrajectoryBatch::new(rollouts).map_err(err_str)?, 1e-8).map_err(err_str)?;
    let err = (dynamics.a[0][(0, 0)] - 0.9)
        .abs()
        .max((dynamics.b[0][(0, 0)] - 0.5).abs())
        .max((dynamics.c[0][0] - 0.1).abs());
    within("max coefficient error", err, 1e-6)
}

fn random_linear(rng: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize) -> LinearGaussianDynamics {
    let mut mat = |r: usize, c: usize, s: f64| DMatrix::from_fn(r, c, |_, _| rng.random_range(-s..s));
    LinearGaussianDynamics {
        a: (0..horizon).map(|_| DMatrix::identity(n, n) * 0.8 + mat(n, n, 0.2)).collect(),
        b: (0..horizon).map(|_| mat(n, m, 1.0)).collect(),
        c: (0..horizon).map(|_| mat(n, 1, 0.3).column(0).into_owned()).collect(),
        noise_cov: (0..horizon)
            .map(|_| {
                let l = mat(n, n, 0.1);
                &l * l.transpose()
            })
            .collect(),
        ridge: 0.0,
    }
}

fn value_vs_riccati() -> Result<String, String> {
    let (n, m, horizon) = (3, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut dynamics = random_linear(&mut rng, n, m, horizon);
    dynamics.c = vec![DVector::zeros(n); horizon];
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 0.5]));
    let qf = DMatrix::identity(n, n) * 3.0;
    let r = DMatrix::identity(m, m) * 0.7;
    let reward = QuadraticReward::time_invariant(q.clone(), qf.clone(), r.clone(), DVector::zeros(n), horizon).map_err(err_str)?;
    let reference = ReferenceTrajectory::constant(&DVector::zeros(n), m, horizon);
    let exp = quadratize_reward(&reward, &reference).map_err(err_str)?;
    let (_, values) = backward_pass(&dynamics, &exp, &reference, 0.0).map_err(err_str)?;
    // Cost-to-go sᵀ P s for the minimization of Σ sᵀQs + aᵀRa; the value Hessian is −2P.
    let mut p = qf;
    let mut worst = (&values.v_ss[horizon] + &p * 2.0).amax();
    for t in (0..horizon).rev() {
        let (a, b) = (&dynamics.a[t], &dynamics.b[t]);
        let btpb = &r + b.transpose() * &p * b;
        let gain = btpb.lu().solve(&(b.transpose() * &p * a)).ok_or("singular Riccati step")?;
        p = &q + a.transpose() * &p * a - a.transpose() * &p * b * gain;
        worst = worst.max((&values.v_ss[t] + &p * 2.0).amax());
    }
    within("max |V_ss + 2P|", worst, 1e-8)
}

fn random_controller(rng: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize) -> AffineController {
    let mut v = |len: usize| DVector::from_fn(len, |_, _| rng.random_range(-1.0..1.0));
    let reference = ReferenceTrajectory {
        states: (0..=horizon).map(|_| v(n)).collect(),
        actions: (0..horizon).map(|_| v(m)).collect(),
    };
    let mut ctrl = AffineController::zero(reference);
    for g in ctrl.gains.iter_mut() {
        *g = DMatrix::from_fn(m, n, |_, _| rng.random_range(-0.5..0.5));
    }
    ctrl
}

fn stacked_vs_recursion() -> Result<String, String> {
    let (n, m, horizon) = (3, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let dynamics = random_linear(&mut rng, n, m, horizon);
    let ctrl = random_controller(&mut rng, n, m, horizon);
    let reward = QuadraticReward::time_invariant(
        DMatrix::identity(n, n),
        DMatrix::identity(n, n),
        DMatrix::identity(m, m),
        DVector::zeros(n),
        horizon,
    )
    .map_err(err_str)?;
    let sigma0 = DMatrix::identity(n, n) * 0.05;
    let sys = build_augmented(&dynamics, &ctrl, &reward, &sigma0).map_err(err_str)?;
    let k = DVector::from_fn(horizon * m, |_, _| rng.random_range(-1.0..1.0));
    let s0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let belief = propagate_belief(&sys, &k, &s0).map_err(err_str)?;

    let (mut mean, mut cov) = (s0.clone(), sigma0.clone());
    let mut worst = 0.0f64;
    for t in 0..horizon {
        let kt = &ctrl.gains[t];
        let a_mean = &ctrl.reference.actions[t] + k.rows(t * m, m) + kt * (&mean - &ctrl.reference.states[t]);
        worst = worst.max((belief.action_mean.rows(t * m, m) - &a_mean).amax());
        worst = worst.max((belief.action_cov.view((t * m, t * m), (m, m)) - kt * &cov * kt.transpose()).amax());
        let closed = &dynamics.a[t] + &dynamics.b[t] * kt;
        mean = &dynamics.a[t] * &mean + &dynamics.b[t] * a_mean + &dynamics.c[t];
        cov = &closed * cov * closed.transpose() + &dynamics.noise_cov[t];
        worst = worst.max((belief.state_mean.rows((t + 1) * n, n) - &mean).amax());
        worst = worst.max((belief.state_cov.view(((t + 1) * n, (t + 1) * n), (n, n)) - &cov).amax());
    }
    within("max deviation", worst, 1e-10)
}

fn objective_gradient_vs_differences() -> Result<String, String> {
    let (n, m, horizon) = (2, 1, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let dynamics = random_linear(&mut rng, n, m, horizon);
    let ctrl = random_controller(&mut rng, n, m, horizon);
    let reward = QuadraticReward::time_invariant(
        DMatrix::identity(n, n),
        DMatrix::identity(n, n) * 4.0,
        DMatrix::identity(m, m) * 0.1,
        DVector::from_vec(vec![1.0, 0.0]),
        horizon,
    )
    .map_err(err_str)?;
    let sys = build_augmented(&dynamics, &ctrl, &reward, &(DMatrix::identity(n, n) * 0.01)).map_err(err_str)?;
    let cov = belief_covariance(&sys).map_err(err_str)?;
    let s0 = DVector::from_vec(vec![0.3, -0.2]);
    let obj = build_qp_objective(&sys, &cov, &s0).map_err(err_str)?;
    let k = DVector::from_fn(horizon * m, |_, _| rng.random_range(-1.0..1.0));
    let grad = obj.gradient(&k);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..k.len() {
        let mut kp = k.clone();
        let mut km = k.clone();
        kp[i] += h;
        km[i] -= h;
        let fd = (obj.evaluate(&kp) - obj.evaluate(&km)) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1.0));
    }
    within("max relative error", worst, 1e-6)
}

fn qp_vs_exhaustive_kkt() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let (d, r) = (5, 8);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let h = a.transpose() * &a + DMatrix::identity(d, d) * 0.1;
        let h = (&h + h.transpose()) * 0.5;
        let g = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
        let l = DMatrix::from_fn(r, d, |_, _| rng.random_range(-1.0..1.0));
        let interior = DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5));
        let rhs = &l * interior + DVector::from_fn(r, |_, _| rng.random_range(0.0..1.0));
        let qp = QuadraticProgram::new(h.clone(), g.clone(), l.clone(), rhs.clone()).map_err(err_str)?;
        let x = solve(&qp).map_err(err_str)?.x;

        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << r) {
            let active: Vec<usize> = (0..r).filter(|i| mask & (1 << i) != 0).collect();
            let k = active.len();
            if k > d {
                continue;
            }
            let mut kkt = DMatrix::zeros(d + k, d + k);
            let mut b = DVector::zeros(d + k);
            kkt.view_mut((0, 0), (d, d)).copy_from(&h);
            b.rows_mut(0, d).copy_from(&g);
            for (j, &i) in active.iter().enumerate() {
                for c in 0..d {
                    kkt[(c, d + j)] = l[(i, c)];
                    kkt[(d + j, c)] = l[(i, c)];
                }
                b[d + j] = rhs[i];
            }
            let Some(sol) = kkt.lu().solve(&b) else { continue };
            let cand = sol.rows(0, d).into_owned();
            let feasible = (&l * &cand - &rhs).iter().all(|v| *v <= 1e-9);
            if feasible && sol.rows(d, k).iter().all(|v| *v >= -1e-9) {
                let f = 0.5 * cand.dot(&(&h * &cand)) - g.dot(&cand);
                if best.as_ref().map_or(true, |(bf, _)| f < *bf) {
                    best = Some((f, cand));
                }
            }
        }
        let (_, oracle) = best.ok_or("no KKT point found")?;
        worst = worst.max((x - oracle).amax());
    }
    within("max |x - x_oracle|", worst, 1e-7)
}

/// `q̈ = M(q)⁻¹ (τ − C(q, q̇) q̇ − ∂V/∂q)` for a two-coordinate system whose
/// mass matrix and potential depend on the second coordinate only.
fn lagrangian_acc(
    mass: impl Fn(f64) -> [[f64; 2]; 2],
    dmass: impl Fn(f64) -> [[f64; 2]; 2],
    dpot: impl Fn(f64) -> f64,
    q2: f64,
    qd: [f64; 2],
    tau: [f64; 2],
) -> (f64, f64) {
    let mm = mass(q2);
    let dm = dmass(q2);
    // Christoffel symbols of the first kind with ∂M/∂q1 = 0.
    let dm_dq = |k: usize| if k == 1 { dm } else { [[0.0; 2]; 2] };
    let mut force = [tau[0], tau[1] - dpot(q2)];
    for (k, f) in force.iter_mut().enumerate() {
        for i in 0..2 {
            for j in 0..2 {
                let gamma = 0.5 * (dm_dq(j)[k][i] + dm_dq(i)[k][j] - dm_dq(k)[i][j]);
                *f -= gamma * qd[i] * qd[j];
            }
        }
    }
    let det = mm[0][0] * mm[1][1] - mm[0][1] * mm[1][0];
    (
        (mm[1][1] * force[0] - mm[0][1] * force[1]) / det,
        (mm[0][0] * force[1] - mm[1][0] * force[0]) / det,
    )
}

fn random_state(rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_vec(vec![
        rng.random_range(-1.0..1.0),
        rng.random_range(-4.0..4.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-8.0..8.0),
    ])
}

fn cart_pole_vs_lagrangian() -> Result<String, String> {
    let p = CartPoleParams {
        cart_damping: 0.0,
        pole_damping: 0.0,
        ..CartPoleParams::default()
    };
    let (mc, mp, l, g) = (p.cart_mass, p.pole_mass, 0.5 * p.pole_length, p.gravity);
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let s = random_state(&mut rng);
        let f = rng.random_range(-5.0..5.0);
        let (xa, ta) = p.accelerations(&s, f);
        let (xo, to) = lagrangian_acc(
            |th| [[mc + mp, mp * l * th.cos()], [mp * l * th.cos(), 4.0 / 3.0 * mp * l * l]],
            |th| [[0.0, -mp * l * th.sin()], [-mp * l * th.sin(), 0.0]],
            |th| mp * g * l * th.sin(),
            s[1],
            [s[2], s[3]],
            [f, 0.0],
        );
        worst = worst.max((xa - xo).abs()).max((ta - to).abs());
    }
    within("max acceleration error", worst, 1e-9)
}

fn furuta_vs_lagrangian() -> Result<String, String> {
    let p = FurutaParams {
        arm_damping: 0.0,
        pendulum_damping: 0.0,
        ..FurutaParams::default()
    };
    let j_arm = p.arm_mass * p.arm_length.powi(2) / 3.0 + p.pendulum_mass * p.arm_length.powi(2);
    let j_pend = p.pendulum_mass * p.pendulum_length.powi(2) / 3.0;
    let c = 0.5 * p.pendulum_mass * p.arm_length * p.pendulum_length;
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let s = random_state(&mut rng);
        let tau = rng.random_range(-0.025..0.025);
        let (aa, pa) = p.accelerations(&s, tau);
        let (ao, po) = lagrangian_acc(
            |al| [[j_arm + j_pend * al.sin().powi(2), c * al.cos()], [c * al.cos(), j_pend]],
            |al| [[2.0 * j_pend * al.sin() * al.cos(), -c * al.sin()], [-c * al.sin(), 0.0]],
            |al| 0.5 * p.pendulum_mass * p.gravity * p.pendulum_length * al.sin(),
            s[1],
            [s[2], s[3]],
            [tau, 0.0],
        );
        worst = worst.max((aa - ao).abs() / ao.abs().max(1.0)).max((pa - po).abs() / po.abs().max(1.0));
    }
    within("max acceleration error", worst, 1e-9)
}

fn cart_pole_energy() -> Result<String, String> {
    let p = CartPoleParams {
        cart_damping: 0.0,
        pole_damping: 0.0,
        ..CartPoleParams::default()
    };
    let (mc, mp, l, g) = (p.cart_mass, p.pole_mass, 0.5 * p.pole_length, p.gravity);
    let energy = |s: &DVector<f64>| {
        0.5 * (mc + mp) * s[2] * s[2] + mp * l * s[1].cos() * s[2] * s[3] + 2.0 / 3.0 * mp * l * l * s[3] * s[3]
            + mp * g * l * (1.0 - s[1].cos())
    };
    let plant = Plant::CartPole(p);
    let mut s = DVector::from_vec(vec![0.0, 2.0, 0.1, 0.0]);
    let e0 = energy(&s);
    let a = DVector::zeros(1);
    for _ in 0..100 {
        s = plant.propagate(&s, &a, 0.02);
    }
    within("relative energy drift", ((energy(&s) - e0) / e0).abs(), 1e-5)
}

fn linear_env_closed_form() -> Result<String, String> {
    let task = Task::linear().map_err(err_str)?;
    let env = &task.env;
    let Plant::Linear(plant) = &env.plant else {
        return Err("linear task without a linear plant".into());
    };
    let std_w = env.spec.process_noise_cov[(0, 0)].sqrt();
    let std_a = env.spec.action_noise_cov[(0, 0)].sqrt();
    let (lo, hi): (f64, f64) = (env.spec.action_low[0], env.spec.action_high[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut s = env.spec.initial_mean.clone();
    let mut reference = s.clone();
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let a = DVector::from_element(1, rng.random_range(-12.0f64..12.0));
        let za = DVector::from_element(1, rng.random_range(-2.0..2.0));
        let zs = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let applied: f64 = (a[0].clamp(lo, hi) + std_a * za[0]).clamp(lo, hi);
        reference = &plant.a * &reference + &plant.b * applied + &plant.c + &zs * std_w;
        s = env.step_with_noise(&s, &a, &za, &zs).map_err(err_str)?.next_state;
        worst = worst.max((&s - &reference).amax());
    }
    within("max state deviation", worst, 1e-12)
}

/// Double integrator with negligible noise and far-away limits.
fn quiet_linear_task(horizon: usize) -> crate::Result<Task> {
    let dt = 0.1;
    let plant = LinearPlant {
        a: DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
        b: DMatrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]),
        c: DVector::from_vec(vec![0.0, -0.05]),
    };
    let spec = EnvironmentSpec {
        name: "quiet-linear".into(),
        state_dim: 2,
        action_dim: 1,
        dt,
        horizon,
        initial_mean: DVector::from_vec(vec![-1.0, 0.5]),
        initial_cov: DMatrix::identity(2, 2) * 1e-12,
        process_noise_cov: DMatrix::zeros(2, 2),
        action_noise_cov: DMatrix::identity(1, 1) * 1e-12,
        action_low: DVector::from_element(1, -1e6),
        action_high: DVector::from_element(1, 1e6),
        constraints: HalfPlaneConstraintSet::default()
            .with_state_box(2, 0, -1e6, 1e6)
            .with_action_box(1, 0, -1e6, 1e6),
        state_names: vec!["position".into(), "velocity".into()],
        action_names: vec!["force".into()],
    };
    let env = Environment::new(spec, Plant::Linear(plant))?;
    let reward = QuadraticReward::time_invariant(
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.1])),
        DMatrix::from_diagonal(&DVector::from_vec(vec![20.0, 2.0])),
        DMatrix::identity(1, 1) * 0.05,
        DVector::from_vec(vec![1.0, 0.0]),
        horizon,
    )?;
    Ok(Task { env, reward })
}

/// Optimal open-loop states for a deterministic linear plant, by solving the
/// normal equations of the stacked least-squares problem over all actions.
fn batch_lqr(task: &Task) -> Vec<DVector<f64>> {
    let Plant::Linear(plant) = &task.env.plant else { unreachable!() };
    let (n, m, horizon) = (2, 1, task.env.spec.horizon);
    let d = m * horizon;
    // s_t = F_t + G_t u
    let mut f = vec![task.env.spec.initial_mean.clone()];
    let mut g = vec![DMatrix::zeros(n, d)];
    for t in 0..horizon {
        f.push(&plant.a * &f[t] + &plant.c);
        let mut next = &plant.a * &g[t];
        {
            let mut v = next.view_mut((0, t * m), (n, m));
            v += &plant.b;
        }
        g.push(next);
    }
    let mut lhs = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for t in 0..=horizon {
        let w = &task.reward.state_weights[t];
        let e = &f[t] - &task.reward.goals[t];
        lhs += g[t].transpose() * w * &g[t];
        rhs -= g[t].transpose() * w * e;
        if t < horizon {
            let mut v = lhs.view_mut((t * m, t * m), (m, m));
            v += &task.reward.action_weights[t];
        }
    }
    let u = lhs.cholesky().expect("positive definite").solve(&rhs);
    (0..=horizon).map(|t| &f[t] + &g[t] * &u).collect()
}

fn lqr_equivalence() -> Result<String, String> {
    let task = quiet_linear_task(20).map_err(err_str)?;
    let oracle = batch_lqr(&task);
    let mut worst = 0.0f64;
    for algorithm in [Algorithm::Ccto, Algorithm::Ilqg] {
        let cfg = OptimizerConfig {
            algorithm,
            alpha: 1.0,
            rollouts: 20,
            iterations: 3,
            seed: 1,
            fit: FitOptions {
                ridge: 1e-10,
                standardize: false,
            },
            ..OptimizerConfig::default()
        };
        let out = run_algorithm(&task.env, &task.reward, &task.env.spec.constraints, &cfg).map_err(err_str)?;
        let nominal = &out.records.last().ok_or("no records")?.nominal;
        for (s, o) in nominal.states.iter().zip(&oracle) {
            worst = worst.max((s - o).norm());
        }
    }
    within("max state error", worst, 1e-4)
}

fn seeded_batches_repeat() -> Result<String, String> {
    let task = Task::cart_pole().map_err(err_str)?;
    let ctrl = AffineController::zero(ReferenceTrajectory::constant(&DVector::zeros(4), 1, task.env.spec.horizon));
    let a = forward_pass(&task.env, &task.reward, &ctrl, 1.0, 10, 99).map_err(err_str)?;
    let b = forward_pass(&task.env, &task.reward, &ctrl, 1.0, 10, 99).map_err(err_str)?;
    if a == b {
        Ok("identical batches".into())
    } else {
        Err("batches differ".into())
    }
}
