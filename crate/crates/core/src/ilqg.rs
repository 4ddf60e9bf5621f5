//! iLQG for reward maximization: quadratic reward expansion, the backward
//! pass with value-function regularization, and the sampled forward pass.
//!
//! Sign convention: rewards are maximized, so `Q_aa` must be negative
//! definite. Second-order dynamics terms are dropped (iLQG, not DDP).

use nalgebra::{DMatrix, DVector};

use crate::dynamics_fit::{LinearGaussianDynamics, ReferenceTrajectory};
use crate::env::{rollout, Environment, Policy};
use crate::error::{CctoError, Result};
use crate::linalg::{cholesky, is_positive_definite, symmetrize};
use crate::par::map_indexed;
use crate::trajectory::TrajectoryBatch;

/// Smallest nonzero regularization; also the value used after the first failure.
pub const MU_MIN: f64 = 1e-6;
pub const MU_FACTOR: f64 = 10.0;
/// The backward pass gives up once the regularization exceeds this.
pub const MU_MAX: f64 = 1e80;

/// Fraction of failed rollouts tolerated by a forward pass.
pub const MAX_FAILED_FRACTION: f64 = 0.1;

/// `r_t = −(s − g_t)ᵀ M_t (s − g_t) − aᵀ D_t a`, terminal `−(s − g_T)ᵀ M_T (s − g_T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticReward {
    /// `T + 1` state weights, the last one terminal.
    pub state_weights: Vec<DMatrix<f64>>,
    pub action_weights: Vec<DMatrix<f64>>,
    pub goals: Vec<DVector<f64>>,
}

impl QuadraticReward {
    pub fn new(
        state_weights: Vec<DMatrix<f64>>,
        action_weights: Vec<DMatrix<f64>>,
        goals: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let horizon = action_weights.len();
        if horizon == 0 || state_weights.len() != horizon + 1 || goals.len() != horizon + 1 {
            return Err(CctoError::Dimension(format!(
                "reward needs T + 1 state weights and goals and T action weights (got {}, {}, {horizon})",
                state_weights.len(),
                goals.len()
            )));
        }
        let n = goals[0].len();
        let m = action_weights[0].nrows();
        for (t, w) in state_weights.iter().enumerate() {
            if w.shape() != (n, n) || goals[t].len() != n {
                return Err(CctoError::Dimension(format!("state weight/goal {t} has the wrong size")));
            }
            if !is_positive_definite(&symmetrize(w)) || (w - w.transpose()).amax() > 1e-12 * (1.0 + w.amax()) {
                return Err(CctoError::NotPositiveDefinite(format!("state weight M_{t}")));
            }
        }
        for (t, w) in action_weights.iter().enumerate() {
            if w.shape() != (m, m) {
                return Err(CctoError::Dimension(format!("action weight {t} has the wrong size")));
            }
            if !is_positive_definite(&symmetrize(w)) || (w - w.transpose()).amax() > 1e-12 * (1.0 + w.amax()) {
                return Err(CctoError::NotPositiveDefinite(format!("action weight D_{t}")));
            }
        }
        Ok(Self {
            state_weights,
            action_weights,
            goals,
        })
    }

    /// Same running weights and goal at every step, separate terminal weight.
    pub fn time_invariant(
        running: DMatrix<f64>,
        terminal: DMatrix<f64>,
        action: DMatrix<f64>,
        goal: DVector<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let mut state_weights = vec![running; horizon];
        state_weights.push(terminal);
        Self::new(state_weights, vec![action; horizon], vec![goal; horizon + 1])
    }

    pub fn horizon(&self) -> usize {
        self.action_weights.len()
    }

    pub fn state_dim(&self) -> usize {
        self.goals[0].len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_weights[0].nrows()
    }

    pub fn stage(&self, t: usize, s: &DVector<f64>, a: &DVector<f64>) -> f64 {
        let e = s - &self.goals[t];
        -(e.dot(&(&self.state_weights[t] * &e)) + a.dot(&(&self.action_weights[t] * a)))
    }

    pub fn terminal(&self, s: &DVector<f64>) -> f64 {
        let t = self.horizon();
        let e = s - &self.goals[t];
        -e.dot(&(&self.state_weights[t] * &e))
    }

    /// Multiply every weight by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            state_weights: self.state_weights.iter().map(|w| w * factor).collect(),
            action_weights: self.action_weights.iter().map(|w| w * factor).collect(),
            goals: self.goals.clone(),
        }
    }
}

/// First and second derivatives of the reward at the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardExpansion {
    /// `T + 1` entries; the last is the terminal gradient.
    pub r_s: Vec<DVector<f64>>,
    pub r_a: Vec<DVector<f64>>,
    pub r_ss: Vec<DMatrix<f64>>,
    pub r_aa: Vec<DMatrix<f64>>,
    pub r_as: Vec<DMatrix<f64>>,
}

pub fn quadratize_reward(reward: &QuadraticReward, reference: &ReferenceTrajectory) -> Result<RewardExpansion> {
    let horizon = reward.horizon();
    if reference.horizon() != horizon
        || reference.state_dim() != reward.state_dim()
        || reference.action_dim() != reward.action_dim()
    {
        return Err(CctoError::Dimension("reward and reference trajectory disagree".into()));
    }
    let m = reward.action_dim();
    let n = reward.state_dim();
    let mut exp = RewardExpansion {
        r_s: Vec::with_capacity(horizon + 1),
        r_a: Vec::with_capacity(horizon),
        r_ss: Vec::with_capacity(horizon + 1),
        r_aa: Vec::with_capacity(horizon),
        r_as: Vec::with_capacity(horizon),
    };
    for t in 0..=horizon {
        let mt = &reward.state_weights[t];
        exp.r_s.push(mt * (&reference.states[t] - &reward.goals[t]) * -2.0);
        exp.r_ss.push(mt * -2.0);
        if t < horizon {
            let dt = &reward.action_weights[t];
            exp.r_a.push(dt * &reference.actions[t] * -2.0);
            exp.r_aa.push(dt * -2.0);
            exp.r_as.push(DMatrix::zeros(m, n));
        }
    }
    Ok(exp)
}

/// Second-order expansion of the state-action value around the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct QExpansion {
    pub q_s: DVector<f64>,
    pub q_a: DVector<f64>,
    pub q_ss: DMatrix<f64>,
    pub q_aa: DMatrix<f64>,
    pub q_as: DMatrix<f64>,
}

impl QExpansion {
    pub fn q_sa(&self) -> DMatrix<f64> {
        self.q_as.transpose()
    }
}

/// `Q` at step `t` given the next-step value derivatives, with `V_ss' − μI`
/// substituted inside `Q_aa` and `Q_as` when `mu > 0`.
pub fn q_expansion(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    exp: &RewardExpansion,
    t: usize,
    v_s_next: &DVector<f64>,
    v_ss_next: &DMatrix<f64>,
    mu: f64,
) -> QExpansion {
    let n = a.nrows();
    let vss_reg = v_ss_next - DMatrix::identity(n, n) * mu;
    let bt = b.transpose();
    QExpansion {
        q_s: &exp.r_s[t] + a.transpose() * v_s_next,
        q_a: &exp.r_a[t] + &bt * v_s_next,
        q_ss: symmetrize(&(&exp.r_ss[t] + a.transpose() * v_ss_next * a)),
        q_aa: symmetrize(&(&exp.r_aa[t] + &bt * &vss_reg * b)),
        q_as: &exp.r_as[t] + &bt * &vss_reg * a,
    }
}

/// `a_t = a_r,t + α k_t + K_t (s_t − s_r,t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineController {
    pub gains: Vec<DMatrix<f64>>,
    pub feedforward: Vec<DVector<f64>>,
    pub reference: ReferenceTrajectory,
}

impl AffineController {
    /// Zero gains and feedforward around `reference`.
    pub fn zero(reference: ReferenceTrajectory) -> Self {
        let n = reference.state_dim();
        let m = reference.action_dim();
        let horizon = reference.horizon();
        Self {
            gains: vec![DMatrix::zeros(m, n); horizon],
            feedforward: vec![DVector::zeros(m); horizon],
            reference,
        }
    }

    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    pub fn action(&self, t: usize, s: &DVector<f64>, alpha: f64) -> DVector<f64> {
        &self.reference.actions[t] + &self.feedforward[t] * alpha + &self.gains[t] * (s - &self.reference.states[t])
    }

    /// Feedforward sequence stacked into one vector.
    pub fn stacked_feedforward(&self) -> DVector<f64> {
        let m = self.reference.action_dim();
        let mut k = DVector::zeros(m * self.horizon());
        for (t, kt) in self.feedforward.iter().enumerate() {
            k.rows_mut(t * m, m).copy_from(kt);
        }
        k
    }

    pub fn set_stacked_feedforward(&mut self, k: &DVector<f64>) {
        let m = self.reference.action_dim();
        for (t, kt) in self.feedforward.iter_mut().enumerate() {
            kt.copy_from(&k.rows(t * m, m));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.gains.iter().all(|g| g.iter().all(|v| v.is_finite()))
            && self.feedforward.iter().all(|k| k.iter().all(|v| v.is_finite()))
    }
}

/// The controller with its feedforward scaled by `alpha`, as a rollout policy.
pub struct ScaledController<'a> {
    pub controller: &'a AffineController,
    pub alpha: f64,
}

impl Policy for ScaledController<'_> {
    fn action(&self, t: usize, s: &DVector<f64>) -> DVector<f64> {
        self.controller.action(t, s, self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueRecursion {
    pub v_s: Vec<DVector<f64>>,
    pub v_ss: Vec<DMatrix<f64>>,
    /// Expected improvement contributed by each step; the terminal entry is 0.
    pub dv: Vec<f64>,
    /// Regularization actually used by the successful pass.
    pub mu: f64,
}

/// Backward pass starting at regularization `mu0`.
///
/// When `−Q_aa` loses positive definiteness at any step, `μ ← max(10 μ, 1e-6)`
/// and the pass restarts from the terminal step.
pub fn backward_pass(
    dynamics: &LinearGaussianDynamics,
    expansion: &RewardExpansion,
    reference: &ReferenceTrajectory,
    mu0: f64,
) -> Result<(AffineController, ValueRecursion)> {
    let horizon = dynamics.horizon();
    if expansion.r_a.len() != horizon || reference.horizon() != horizon {
        return Err(CctoError::Dimension("dynamics, reward expansion and reference disagree on T".into()));
    }
    if !(mu0 >= 0.0) {
        return Err(CctoError::InvalidInput(format!("regularization must be >= 0, got {mu0}")));
    }
    let mut mu = mu0;
    loop {
        if let Some(out) = attempt_backward(dynamics, expansion, reference, mu) {
            return Ok(out);
        }
        mu = (mu * MU_FACTOR).max(MU_MIN);
        if mu > MU_MAX {
            return Err(CctoError::Diverged { mu });
        }
    }
}

/// Halve the regularization after a successful pass; values below `MU_MIN` snap to 0.
pub fn relax_regularization(mu: f64) -> f64 {
    let half = mu / 2.0;
    if half < MU_MIN {
        0.0
    } else {
        half
    }
}

/// Raise the regularization one step, as after a failed pass.
pub fn increase_regularization(mu: f64) -> f64 {
    (mu * MU_FACTOR).max(MU_MIN)
}

fn attempt_backward(
    dynamics: &LinearGaussianDynamics,
    expansion: &RewardExpansion,
    reference: &ReferenceTrajectory,
    mu: f64,
) -> Option<(AffineController, ValueRecursion)> {
    let horizon = dynamics.horizon();
    let mut v_s = vec![DVector::zeros(0); horizon + 1];
    let mut v_ss = vec![DMatrix::zeros(0, 0); horizon + 1];
    let mut dv = vec![0.0; horizon + 1];
    let mut gains = vec![DMatrix::zeros(0, 0); horizon];
    let mut feedforward = vec![DVector::zeros(0); horizon];
    v_s[horizon] = expansion.r_s[horizon].clone();
    v_ss[horizon] = expansion.r_ss[horizon].clone();

    for t in (0..horizon).rev() {
        let (a, b) = (&dynamics.a[t], &dynamics.b[t]);
        let q = q_expansion(a, b, expansion, t, &v_s[t + 1], &v_ss[t + 1], 0.0);
        let q_reg = if mu > 0.0 {
            q_expansion(a, b, expansion, t, &v_s[t + 1], &v_ss[t + 1], mu)
        } else {
            q.clone()
        };
        let neg_q_aa = -&q_reg.q_aa;
        let chol = cholesky(&neg_q_aa)?;
        // K = −Q_aa⁻¹ Q_as = (−Q_aa)⁻¹ Q_as, likewise for k.
        let gain = chol.solve(&q_reg.q_as);
        let ff = chol.solve(&q.q_a);
        if gain.iter().chain(ff.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        let kt = gain.transpose();
        dv[t] = 0.5 * ff.dot(&(&q.q_aa * &ff)) + ff.dot(&q.q_a);
        v_s[t] = &q.q_s + &kt * (&q.q_aa * &ff) + &kt * &q.q_a + q.q_as.transpose() * &ff;
        let vss = &q.q_ss + &kt * &q.q_aa * &gain + &kt * &q.q_as + q.q_as.transpose() * &gain;
        v_ss[t] = symmetrize(&vss);
        if v_s[t].iter().chain(v_ss[t].iter()).any(|v| !v.is_finite()) {
            return None;
        }
        gains[t] = gain;
        feedforward[t] = ff;
    }
    Some((
        AffineController {
            gains,
            feedforward,
            reference: reference.clone(),
        },
        ValueRecursion { v_s, v_ss, dv, mu },
    ))
}

/// Sample `n` rollouts of `controller` (feedforward scaled by `alpha`) on the
/// environment. Rollout `i` draws its noise from stream `(seed, i, t)`.
///
/// Rollouts that diverge are dropped; more than 10% failures is an error.
pub fn forward_pass(
    env: &Environment,
    reward: &QuadraticReward,
    controller: &AffineController,
    alpha: f64,
    n: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    if controller.reference.state_dim() != env.spec.state_dim
        || controller.reference.action_dim() != env.spec.action_dim
        || controller.horizon() != reward.horizon()
    {
        return Err(CctoError::Dimension("controller does not match environment or reward".into()));
    }
    if n == 0 {
        return Err(CctoError::InvalidInput("forward pass needs at least one rollout".into()));
    }
    let policy = ScaledController { controller, alpha };
    let results = map_indexed(n, |i| rollout(env, reward, &policy, seed, i as u64));
    let total = results.len();
    let mut ok = Vec::with_capacity(total);
    let mut failed = 0usize;
    for r in results {
        match r {
            Ok(r) => ok.push(r),
            Err(CctoError::EnvironmentNonFinite { .. }) => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if failed as f64 > MAX_FAILED_FRACTION * total as f64 {
        return Err(CctoError::RolloutFailures { failed, total });
    }
    if failed > 0 {
        log::warn!("{failed} of {total} rollouts diverged and were dropped");
    }
    TrajectoryBatch::new(ok)
}
