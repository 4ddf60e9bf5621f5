#![allow(dead_code)]

use ccto::augmented::{build_augmented, propagate_belief};
use ccto::chance::HalfPlaneConstraintSet;
use ccto::dynamics_fit::{LinearGaussianDynamics, ReferenceTrajectory};
use ccto::env::{Environment, EnvironmentSpec, LinearPlant, Plant, Task};
use ccto::ilqg::{AffineController, QuadraticReward};
use ccto::qp::QuadraticProgram;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn random_linear(rng: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize) -> LinearGaussianDynamics {
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

pub fn random_controller(rng: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize) -> AffineController {
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

pub struct LinearSetup {
    pub plant: LinearPlant,
    pub initial_mean: DVector<f64>,
    pub initial_std: f64,
    pub process_std: f64,
    pub action_std: f64,
    pub action_bound: f64,
    pub constraints: HalfPlaneConstraintSet,
}

pub fn linear_task(setup: LinearSetup, reward: QuadraticReward) -> Task {
    let n = setup.plant.a.nrows();
    let m = setup.plant.b.ncols();
    let spec = EnvironmentSpec {
        name: "test-linear".into(),
        state_dim: n,
        action_dim: m,
        dt: 1.0,
        horizon: reward.horizon(),
        initial_mean: setup.initial_mean,
        initial_cov: DMatrix::identity(n, n) * setup.initial_std.powi(2),
        process_noise_cov: DMatrix::identity(n, n) * setup.process_std.powi(2),
        action_noise_cov: DMatrix::identity(m, m) * setup.action_std.powi(2),
        action_low: DVector::from_element(m, -setup.action_bound),
        action_high: DVector::from_element(m, setup.action_bound),
        constraints: setup.constraints,
        state_names: (0..n).map(|i| format!("s{i}")).collect(),
        action_names: (0..m).map(|i| format!("a{i}")).collect(),
    };
    let env = Environment::new(spec, Plant::Linear(setup.plant)).unwrap();
    Task { env, reward }
}

/// Double integrator with a constant drift, negligible noise and limits at ±1e6.
pub fn quiet_double_integrator(horizon: usize) -> Task {
    let dt = 0.1;
    let setup = LinearSetup {
        plant: LinearPlant {
            a: DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]),
            c: DVector::from_vec(vec![0.0, -0.05]),
        },
        initial_mean: DVector::from_vec(vec![-1.0, 0.5]),
        initial_std: 1e-6,
        process_std: 0.0,
        action_std: 1e-6,
        action_bound: 1e6,
        constraints: HalfPlaneConstraintSet::default()
            .with_state_box(2, 0, -1e6, 1e6)
            .with_action_box(1, 0, -1e6, 1e6),
    };
    let reward = QuadraticReward::time_invariant(
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.1])),
        DMatrix::from_diagonal(&DVector::from_vec(vec![20.0, 2.0])),
        DMatrix::identity(1, 1) * 0.05,
        DVector::from_vec(vec![1.0, 0.0]),
        horizon,
    )
    .unwrap();
    linear_task(setup, reward)
}

/// Optimal states of a deterministic linear plant from the normal equations
/// of the least-squares problem over the whole action sequence.
pub fn batch_lqr(task: &Task) -> Vec<DVector<f64>> {
    let Plant::Linear(plant) = &task.env.plant else { panic!("not a linear plant") };
    let (n, m, horizon) = (task.env.spec.state_dim, task.env.spec.action_dim, task.reward.horizon());
    let d = m * horizon;
    // s_t = f_t + G_t u
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

/// Scalar random walk `s' = s + a + w` pulled toward 2 with the upper limit
/// `s ≤ 1` in the way.
pub fn scalar_calibration_task(horizon: usize) -> Task {
    let setup = LinearSetup {
        plant: LinearPlant {
            a: DMatrix::identity(1, 1),
            b: DMatrix::identity(1, 1),
            c: DVector::zeros(1),
        },
        initial_mean: DVector::zeros(1),
        initial_std: 0.01,
        process_std: 0.05,
        action_std: 0.05,
        action_bound: 1e6,
        constraints: HalfPlaneConstraintSet::default()
            .with_state_box(1, 0, -1e6, 1.0)
            .with_action_box(1, 0, -1e6, 1e6),
    };
    let reward = QuadraticReward::time_invariant(
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1) * 10.0,
        DMatrix::identity(1, 1) * 0.1,
        DVector::from_element(1, 2.0),
        horizon,
    )
    .unwrap();
    linear_task(setup, reward)
}

/// Monte-Carlo mean and standard error of the total reward of the closed
/// loop `a = a_r + k + K (s − s_r)` on a known linear-Gaussian model.
pub fn monte_carlo_reward(
    dynamics: &LinearGaussianDynamics,
    ctrl: &AffineController,
    reward: &QuadraticReward,
    s0: &DVector<f64>,
    initial_cov: &DMatrix<f64>,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    let n = s0.len();
    let horizon = ctrl.horizon();
    let chol = |c: &DMatrix<f64>| c.clone().cholesky().expect("positive definite").l();
    let l0 = chol(initial_cov);
    let lw: Vec<DMatrix<f64>> = dynamics.noise_cov.iter().map(chol).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = |rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let mut s = s0 + &l0 * z(&mut rng);
        let mut total = 0.0;
        for t in 0..horizon {
            let a = ctrl.action(t, &s, 1.0);
            total += reward.stage(t, &s, &a);
            s = &dynamics.a[t] * &s + &dynamics.b[t] * &a + &dynamics.c[t] + &lw[t] * z(&mut rng);
        }
        total += reward.terminal(&s);
        sum += total;
        sum_sq += total * total;
    }
    let k = samples as f64;
    let mean = sum / k;
    let var = (sum_sq / k - mean * mean) * k / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Fraction of `count` fresh closed-loop rollouts whose state leaves
/// `s[index] ≤ bound` at any step `1..=T`.
pub fn monte_carlo_upper_violation(task: &Task, ctrl: &AffineController, index: usize, bound: f64, count: usize, seed: u64) -> f64 {
    let policy = ccto::ilqg::ScaledController { controller: ctrl, alpha: 1.0 };
    let mut violated = 0usize;
    for i in 0..count {
        let r = ccto::env::rollout(&task.env, &task.reward, &policy, seed, i as u64).unwrap();
        if r.states[1..].iter().any(|s| s[index] > bound) {
            violated += 1;
        }
    }
    violated as f64 / count as f64
}

/// Strictly convex QP with a known interior point, so the optimum exists and is unique.
pub fn random_qp(rng: &mut ChaCha8Rng, d: usize, r: usize) -> QuadraticProgram {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let h = a.transpose() * &a + DMatrix::identity(d, d) * 0.1;
    let h = (&h + h.transpose()) * 0.5;
    let g = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
    let l = DMatrix::from_fn(r, d, |_, _| rng.random_range(-1.0..1.0));
    let interior = DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5));
    let rhs = &l * interior + DVector::from_fn(r, |_, _| rng.random_range(0.0..1.0));
    QuadraticProgram::new(h, g, l, rhs).unwrap()
}

/// Try every subset of rows as the active set and keep the one that
/// satisfies all KKT conditions.
pub fn qp_oracle(qp: &QuadraticProgram) -> DVector<f64> {
    let d = qp.dim();
    let r = qp.rows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << r) {
        let active: Vec<usize> = (0..r).filter(|i| mask & (1 << i) != 0).collect();
        let k = active.len();
        if k > d {
            continue;
        }
        let mut kkt = DMatrix::zeros(d + k, d + k);
        let mut rhs = DVector::zeros(d + k);
        kkt.view_mut((0, 0), (d, d)).copy_from(&qp.h);
        rhs.rows_mut(0, d).copy_from(&qp.g);
        for (a, &i) in active.iter().enumerate() {
            for j in 0..d {
                kkt[(j, d + a)] = qp.l[(i, j)];
                kkt[(d + a, j)] = qp.l[(i, j)];
            }
            rhs[d + a] = qp.rhs[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, d).into_owned();
        let lambda = sol.rows(d, k).into_owned();
        let feasible = (&qp.l * &x - &qp.rhs).iter().all(|v| *v <= 1e-9);
        if feasible && lambda.iter().all(|l| *l >= -1e-9) {
            let f = qp.objective(&x);
            if best.as_ref().map_or(true, |(b, _)| f < *b) {
                best = Some((f, x));
            }
        }
    }
    best.expect("a feasible strictly convex QP has a KKT point").1
}

/// Largest deviation between the stacked belief and the per-step recursion.
pub fn stacked_deviation(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=2);
    let horizon = rng.random_range(1..=6);
    let dynamics = random_linear(rng, n, m, horizon);
    let ctrl = random_controller(rng, n, m, horizon);
    let reward = QuadraticReward::time_invariant(
        DMatrix::identity(n, n),
        DMatrix::identity(n, n),
        DMatrix::identity(m, m),
        DVector::zeros(n),
        horizon,
    )
    .unwrap();
    let sigma0 = DMatrix::identity(n, n) * rng.random_range(0.0..0.1);
    let sys = build_augmented(&dynamics, &ctrl, &reward, &sigma0).unwrap();
    let k = DVector::from_fn(horizon * m, |_, _| rng.random_range(-1.0..1.0));
    let s0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let belief = propagate_belief(&sys, &k, &s0).unwrap();

    let (mut mean, mut cov) = (s0.clone(), sigma0.clone());
    let mut worst = (belief.state_mean.rows(0, n) - &mean).amax();
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
    worst
}
