//! Stochastic simulated plants.
//!
//! A transition clips the commanded action to the hard actuator box, adds
//! actuator noise (clipping again, so the applied action never leaves the
//! box), holds it over `Δt` and adds Gaussian process noise to the result.
//! Continuous plants are integrated with one RK4 step per `Δt`.

mod cartpole;
mod furuta;

pub use cartpole::CartPoleParams;
pub use furuta::FurutaParams;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::chance::HalfPlaneConstraintSet;
use crate::error::{CctoError, Result};
use crate::ilqg::QuadraticReward;
use crate::linalg::{all_finite_vec, psd_sqrt};
use crate::rng::noise_stream;
use crate::trajectory::Rollout;

/// Discrete-time linear plant `s' = A s + B a + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Plant {
    CartPole(CartPoleParams),
    Furuta(FurutaParams),
    Linear(LinearPlant),
}

impl Plant {
    /// Noise-free state after holding `a` for `dt`.
    pub fn propagate(&self, s: &DVector<f64>, a: &DVector<f64>, dt: f64) -> DVector<f64> {
        match self {
            Plant::CartPole(p) => rk4(|x| p.derivative(x, a), s, dt),
            Plant::Furuta(p) => rk4(|x| p.derivative(x, a), s, dt),
            Plant::Linear(p) => &p.a * s + &p.b * a + &p.c,
        }
    }
}

fn rk4<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, s: &DVector<f64>, dt: f64) -> DVector<f64> {
    let k1 = f(s);
    let k2 = f(&(s + &k1 * (0.5 * dt)));
    let k3 = f(&(s + &k2 * (0.5 * dt)));
    let k4 = f(&(s + &k3 * dt));
    s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub dt: f64,
    pub horizon: usize,
    pub initial_mean: DVector<f64>,
    pub initial_cov: DMatrix<f64>,
    pub process_noise_cov: DMatrix<f64>,
    pub action_noise_cov: DMatrix<f64>,
    pub action_low: DVector<f64>,
    pub action_high: DVector<f64>,
    pub constraints: HalfPlaneConstraintSet,
    pub state_names: Vec<String>,
    pub action_names: Vec<String>,
}

/// Result of one transition: the clipped command, the action that was
/// actually applied (with actuator noise, clipped again) and the next state.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub commanded_action: DVector<f64>,
    pub applied_action: DVector<f64>,
    pub next_state: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct Environment {
    pub spec: EnvironmentSpec,
    pub plant: Plant,
    initial_sqrt: DMatrix<f64>,
    process_sqrt: DMatrix<f64>,
    action_sqrt: DMatrix<f64>,
}

impl Environment {
    pub fn new(spec: EnvironmentSpec, plant: Plant) -> Result<Self> {
        let (n, m) = (spec.state_dim, spec.action_dim);
        if !(spec.dt > 0.0) || spec.horizon == 0 {
            return Err(CctoError::InvalidInput("dt and horizon must be positive".into()));
        }
        let shapes_ok = spec.initial_mean.len() == n
            && spec.initial_cov.shape() == (n, n)
            && spec.process_noise_cov.shape() == (n, n)
            && spec.action_noise_cov.shape() == (m, m)
            && spec.action_low.len() == m
            && spec.action_high.len() == m
            && spec.state_names.len() == n
            && spec.action_names.len() == m;
        if !shapes_ok {
            return Err(CctoError::Dimension(format!("environment {} has inconsistent sizes", spec.name)));
        }
        if spec.action_low.iter().zip(spec.action_high.iter()).any(|(lo, hi)| !(lo < hi)) {
            return Err(CctoError::InvalidInput("hard action box must be nonempty".into()));
        }
        for (name, cov) in [
            ("initial", &spec.initial_cov),
            ("process noise", &spec.process_noise_cov),
            ("action noise", &spec.action_noise_cov),
        ] {
            let sym = crate::linalg::symmetrize(cov);
            let min = nalgebra::SymmetricEigen::new(sym).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            if min < -1e-12 || (cov - cov.transpose()).amax() > 1e-12 {
                return Err(CctoError::NotPsd(format!("{name} covariance of {}", spec.name)));
            }
        }
        match &plant {
            Plant::Linear(p) if p.a.shape() != (n, n) || p.b.shape() != (n, m) || p.c.len() != n => {
                return Err(CctoError::Dimension("linear plant matrices do not match the spec".into()));
            }
            Plant::CartPole(_) | Plant::Furuta(_) if n != 4 || m != 1 => {
                return Err(CctoError::Dimension("pendulum plants have 4 states and 1 action".into()));
            }
            _ => {}
        }
        spec.constraints.validate(n, m)?;
        Ok(Self {
            initial_sqrt: psd_sqrt(&spec.initial_cov),
            process_sqrt: psd_sqrt(&spec.process_noise_cov),
            action_sqrt: psd_sqrt(&spec.action_noise_cov),
            spec,
            plant,
        })
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn clip_action(&self, a: &DVector<f64>) -> DVector<f64> {
        a.zip_zip_map(&self.spec.action_low, &self.spec.action_high, |v, lo, hi| v.clamp(lo, hi))
    }

    /// Initial state from standard-normal draws `z`.
    pub fn initial_state_from(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.spec.initial_mean + &self.initial_sqrt * z
    }

    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal(self.spec.state_dim, rng);
        self.initial_state_from(&z)
    }

    /// Pure transition given standard-normal actuator draws `za` (length m)
    /// and process draws `zs` (length n).
    pub fn step_with_noise(
        &self,
        s: &DVector<f64>,
        a: &DVector<f64>,
        za: &DVector<f64>,
        zs: &DVector<f64>,
    ) -> Result<Transition> {
        if !all_finite_vec(s) || !all_finite_vec(a) {
            return Err(self.non_finite(s, a));
        }
        let commanded = self.clip_action(a);
        let applied = self.clip_action(&(&commanded + &self.action_sqrt * za));
        let next = self.plant.propagate(s, &applied, self.spec.dt) + &self.process_sqrt * zs;
        if !all_finite_vec(&next) {
            return Err(self.non_finite(s, a));
        }
        Ok(Transition {
            commanded_action: commanded,
            applied_action: applied,
            next_state: next,
        })
    }

    pub fn step<R: Rng + ?Sized>(&self, s: &DVector<f64>, a: &DVector<f64>, rng: &mut R) -> Result<Transition> {
        let za = standard_normal(self.spec.action_dim, rng);
        let zs = standard_normal(self.spec.state_dim, rng);
        self.step_with_noise(s, a, &za, &zs)
    }

    fn non_finite(&self, s: &DVector<f64>, a: &DVector<f64>) -> CctoError {
        CctoError::EnvironmentNonFinite {
            env: self.spec.name.clone(),
            state: s.iter().cloned().collect(),
            action: a.iter().cloned().collect(),
        }
    }
}

fn standard_normal<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Anything that maps `(t, s)` to a commanded action.
pub trait Policy: Sync {
    fn action(&self, t: usize, s: &DVector<f64>) -> DVector<f64>;
}

/// A fixed action sequence.
pub struct OpenLoop(pub Vec<DVector<f64>>);

impl Policy for OpenLoop {
    fn action(&self, t: usize, _s: &DVector<f64>) -> DVector<f64> {
        self.0[t].clone()
    }
}

/// One trajectory with rewards. Step `t` of rollout `index` draws from the
/// stream `(seed, index, t)`; the initial state comes first in stream 0.
pub fn rollout(
    env: &Environment,
    reward: &QuadraticReward,
    policy: &dyn Policy,
    seed: u64,
    index: u64,
) -> Result<Rollout> {
    let horizon = reward.horizon();
    let mut rng = noise_stream(seed, index, 0);
    let mut s = env.initial_state(&mut rng);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut applied = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    for t in 0..horizon {
        if t > 0 {
            rng = noise_stream(seed, index, t as u64);
        }
        let tr = env.step(&s, &policy.action(t, &s), &mut rng)?;
        rewards.push(reward.stage(t, &s, &tr.commanded_action));
        states.push(s);
        actions.push(tr.commanded_action);
        applied.push(tr.applied_action);
        s = tr.next_state;
    }
    let terminal_reward = reward.terminal(&s);
    states.push(s);
    Ok(Rollout {
        states,
        actions,
        applied,
        rewards,
        terminal_reward,
    })
}

/// An environment together with the reward it is optimized for.
#[derive(Debug, Clone)]
pub struct Task {
    pub env: Environment,
    pub reward: QuadraticReward,
}

fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(values))
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Knobs shared by the pendulum presets.
#[derive(Debug, Clone, PartialEq)]
pub struct PendulumSetup {
    pub dt: f64,
    pub horizon: usize,
    pub initial_std: f64,
    pub process_std: f64,
    pub action_std: f64,
    /// Symmetric bound on the constrained coordinate (cart position or arm angle).
    pub state_bound: f64,
    /// Physical actuator limit; the action chance constraint uses the same value.
    pub action_bound: f64,
    pub running_weights: [f64; 4],
    pub terminal_weights: [f64; 4],
    pub action_weight: f64,
}

impl PendulumSetup {
    pub fn cart_pole() -> Self {
        Self {
            dt: 0.02,
            horizon: 100,
            initial_std: 1e-3,
            process_std: 1e-3,
            action_std: 0.2,
            state_bound: 1.5,
            action_bound: 5.0,
            running_weights: [1e-2, 1e-2, 1e-3, 1e-3],
            terminal_weights: [1.0, 100.0, 0.1, 0.1],
            action_weight: 1e-3,
        }
    }

    pub fn furuta() -> Self {
        Self {
            dt: 0.02,
            horizon: 150,
            initial_std: 1e-3,
            process_std: 1e-3,
            action_std: 1e-3,
            state_bound: 1.5,
            action_bound: 0.025,
            running_weights: [0.1, 1.0, 1e-3, 1e-3],
            terminal_weights: [10.0, 100.0, 1.0, 1.0],
            action_weight: 10.0,
        }
    }
}

fn pendulum_task(
    name: &str,
    plant: Plant,
    setup: &PendulumSetup,
    state_names: &[&str],
    action_name: &str,
) -> Result<Task> {
    let n = 4;
    let spec = EnvironmentSpec {
        name: name.to_string(),
        state_dim: n,
        action_dim: 1,
        dt: setup.dt,
        horizon: setup.horizon,
        initial_mean: DVector::zeros(n),
        initial_cov: DMatrix::identity(n, n) * setup.initial_std.powi(2),
        process_noise_cov: DMatrix::identity(n, n) * setup.process_std.powi(2),
        action_noise_cov: DMatrix::identity(1, 1) * setup.action_std.powi(2),
        action_low: DVector::from_element(1, -setup.action_bound),
        action_high: DVector::from_element(1, setup.action_bound),
        constraints: HalfPlaneConstraintSet::default()
            .with_state_box(n, 0, -setup.state_bound, setup.state_bound)
            .with_action_box(1, 0, -setup.action_bound, setup.action_bound),
        state_names: names(state_names),
        action_names: names(&[action_name]),
    };
    let env = Environment::new(spec, plant)?;
    let goal = DVector::from_vec(vec![0.0, std::f64::consts::PI, 0.0, 0.0]);
    let reward = QuadraticReward::time_invariant(
        diag(&setup.running_weights),
        diag(&setup.terminal_weights),
        diag(&[setup.action_weight]),
        goal,
        setup.horizon,
    )?;
    Ok(Task { env, reward })
}

impl Task {
    pub fn cart_pole() -> Result<Self> {
        Self::cart_pole_with(CartPoleParams::default(), &PendulumSetup::cart_pole())
    }

    pub fn cart_pole_with(params: CartPoleParams, setup: &PendulumSetup) -> Result<Self> {
        pendulum_task(
            "cartpole",
            Plant::CartPole(params),
            setup,
            &["position", "angle", "velocity", "angular_velocity"],
            "force",
        )
    }

    pub fn furuta() -> Result<Self> {
        Self::furuta_with(FurutaParams::default(), &PendulumSetup::furuta())
    }

    pub fn furuta_with(params: FurutaParams, setup: &PendulumSetup) -> Result<Self> {
        pendulum_task(
            "furuta",
            Plant::Furuta(params),
            setup,
            &["arm_angle", "pendulum_angle", "arm_rate", "pendulum_rate"],
            "torque",
        )
    }

    /// Double integrator (position, velocity) driven from -1 to +1 with an
    /// upper position limit that binds on the way.
    pub fn linear() -> Result<Self> {
        let dt = 0.1;
        let horizon = 30;
        let plant = LinearPlant {
            a: DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]),
            c: DVector::zeros(2),
        };
        let spec = EnvironmentSpec {
            name: "linear".into(),
            state_dim: 2,
            action_dim: 1,
            dt,
            horizon,
            initial_mean: DVector::from_vec(vec![-1.0, 0.0]),
            initial_cov: DMatrix::identity(2, 2) * 1e-4,
            process_noise_cov: DMatrix::identity(2, 2) * 1e-6,
            action_noise_cov: DMatrix::identity(1, 1) * 1e-2,
            action_low: DVector::from_element(1, -3.0),
            action_high: DVector::from_element(1, 3.0),
            constraints: HalfPlaneConstraintSet::default()
                .with_state_box(2, 0, -2.0, 0.8)
                .with_action_box(1, 0, -3.0, 3.0),
            state_names: names(&["position", "velocity"]),
            action_names: names(&["force"]),
        };
        let env = Environment::new(spec, Plant::Linear(plant))?;
        let reward = QuadraticReward::time_invariant(
            diag(&[1.0, 0.1]),
            diag(&[10.0, 1.0]),
            diag(&[0.01]),
            DVector::from_vec(vec![1.0, 0.0]),
            horizon,
        )?;
        Ok(Task { env, reward })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "cartpole" | "cart-pole" => Self::cart_pole(),
            "furuta" => Self::furuta(),
            "linear" => Self::linear(),
            other => Err(CctoError::Config(format!(
                "unknown environment '{other}' (expected cartpole, furuta or linear)"
            ))),
        }
    }
}
