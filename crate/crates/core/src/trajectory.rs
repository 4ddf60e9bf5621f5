//! Sampled rollouts.

use nalgebra::DVector;

use crate::error::{CctoError, Result};

/// One sampled trajectory: `T + 1` states, `T` actions and the per-step
/// rewards. The terminal reward is stored separately.
///
/// `actions` are the controller's commands clipped to the actuator box;
/// `applied` are the actions the plant received after actuator noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<DVector<f64>>,
    pub actions: Vec<DVector<f64>>,
    pub applied: Vec<DVector<f64>>,
    pub rewards: Vec<f64>,
    pub terminal_reward: f64,
}

impl Rollout {
    /// A rollout without actuator noise (`applied == actions`).
    pub fn noiseless(states: Vec<DVector<f64>>, actions: Vec<DVector<f64>>, rewards: Vec<f64>, terminal_reward: f64) -> Self {
        Self {
            applied: actions.clone(),
            states,
            actions,
            rewards,
            terminal_reward,
        }
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() + self.terminal_reward
    }
}

/// `N` rollouts sharing horizon and dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    rollouts: Vec<Rollout>,
    state_dim: usize,
    action_dim: usize,
    horizon: usize,
}

impl TrajectoryBatch {
    pub fn new(rollouts: Vec<Rollout>) -> Result<Self> {
        let first = rollouts
            .first()
            .ok_or_else(|| CctoError::InvalidInput("empty trajectory batch".into()))?;
        let horizon = first.actions.len();
        if horizon == 0 {
            return Err(CctoError::InvalidInput("horizon must be positive".into()));
        }
        let state_dim = first.states[0].len();
        let action_dim = first.actions[0].len();
        for (i, r) in rollouts.iter().enumerate() {
            if r.states.len() != horizon + 1
                || r.actions.len() != horizon
                || r.applied.len() != horizon
                || r.rewards.len() != horizon
            {
                return Err(CctoError::Dimension(format!(
                    "rollout {i}: expected {} states, {horizon} actions and rewards, got {}/{}/{}",
                    horizon + 1,
                    r.states.len(),
                    r.actions.len(),
                    r.rewards.len()
                )));
            }
            if r.states.iter().any(|s| s.len() != state_dim)
                || r.actions.iter().chain(&r.applied).any(|a| a.len() != action_dim)
            {
                return Err(CctoError::Dimension(format!("rollout {i}: inconsistent state/action size")));
            }
            let finite = r.states.iter().all(|s| s.iter().all(|v| v.is_finite()))
                && r.actions.iter().chain(&r.applied).all(|a| a.iter().all(|v| v.is_finite()))
                && r.rewards.iter().all(|v| v.is_finite())
                && r.terminal_reward.is_finite();
            if !finite {
                return Err(CctoError::NonFinite(format!("rollout {i} of the trajectory batch")));
            }
        }
        Ok(Self {
            rollouts,
            state_dim,
            action_dim,
            horizon,
        })
    }

    pub fn rollouts(&self) -> &[Rollout] {
        &self.rollouts
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn total_rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(Rollout::total_reward).collect()
    }

    /// Mean and sample standard deviation of the total reward.
    pub fn reward_stats(&self) -> (f64, f64) {
        let totals = self.total_rewards();
        let n = totals.len() as f64;
        let mean = totals.iter().sum::<f64>() / n;
        let var = if totals.len() > 1 {
            totals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    }
}
