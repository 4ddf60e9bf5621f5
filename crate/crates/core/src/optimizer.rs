//! The CCTO outer loop and the plain iLQG baseline.
//!
//! One iteration: mean trajectory of the last batch, per-step dynamics fit,
//! backward pass, (CCTO only) the chance-constrained QP over the stacked
//! feedforward warm-started at the backward-pass solution, then a new batch
//! with the feedforward scaled by `α`.


use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::augmented::{belief_covariance, build_augmented, build_constraint_rows, build_qp_objective, risk_budget};
use crate::chance::{empirical_violation, HalfPlaneConstraintSet, RiskLevels, ViolationReport};
use crate::dynamics_fit::{fit_time_variant_dynamics_with, mean_trajectory, FitOptions, ReferenceTrajectory, DEFAULT_RIDGE};
use crate::env::Environment;
use crate::error::{CctoError, Result};
use crate::ilqg::{backward_pass, forward_pass, quadratize_reward, relax_regularization, AffineController, QuadraticReward};
use crate::qp::{solve, QpSettings, QpStatus, QuadraticProgram};
use crate::rng::derive_seed;
use crate::trajectory::TrajectoryBatch;

/// Iterations in a row whose reward change must stay below the tolerance.
pub const CONVERGENCE_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ccto,
    Ilqg,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ccto => "ccto",
            Algorithm::Ilqg => "ilqg",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    /// Feedforward scaling in the forward pass, `0 < α ≤ 1`.
    pub alpha: f64,
    pub rollouts: usize,
    pub iterations: usize,
    /// Joint risk levels; these replace the levels stored in the constraint set.
    pub risk: RiskLevels,
    pub fit: FitOptions,
    pub mu0: f64,
    /// Stop once the mean reward changes by less than this for
    /// [`CONVERGENCE_WINDOW`] iterations in a row.
    pub tolerance: Option<f64>,
    pub seed: u64,
    pub qp: QpSettings,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ccto,
            alpha: 0.1,
            rollouts: 50,
            iterations: 45,
            risk: RiskLevels::default(),
            fit: FitOptions {
                ridge: DEFAULT_RIDGE,
                standardize: false,
            },
            mu0: 0.0,
            tolerance: None,
            seed: 0,
            qp: QpSettings::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, state_dim: usize, action_dim: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(CctoError::Config(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if self.rollouts < state_dim + action_dim + 2 {
            return Err(CctoError::Config(format!(
                "rollouts must be at least n + m + 2 = {}, got {}",
                state_dim + action_dim + 2,
                self.rollouts
            )));
        }
        self.risk.validate()?;
        if !(self.fit.ridge >= 0.0 && self.fit.ridge.is_finite()) {
            return Err(CctoError::Config(format!("ridge must be >= 0, got {}", self.fit.ridge)));
        }
        if !(self.mu0 >= 0.0 && self.mu0.is_finite()) {
            return Err(CctoError::Config(format!("mu0 must be >= 0, got {}", self.mu0)));
        }
        if let Some(tol) = self.tolerance {
            if !(tol >= 0.0) {
                return Err(CctoError::Config(format!("tolerance must be >= 0, got {tol}")));
            }
        }
        Ok(())
    }
}

/// Range of one constrained direction along the nominal trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NominalRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    /// Regularization used by this iteration's backward pass.
    pub mu_reg: f64,
    /// `None` for the baseline and for the initial pass.
    pub qp_status: Option<QpStatus>,
    pub qp_iterations: usize,
    /// Rows flagged as unsatisfiable before the QP was solved.
    pub infeasible_rows: usize,
    pub violation: ViolationReport,
    /// Mean of this iteration's rollouts.
    pub nominal: ReferenceTrajectory,
    /// One entry per distinct state normal, then per distinct action normal.
    pub nominal_ranges: Vec<NominalRange>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub controller: AffineController,
    pub reference: ReferenceTrajectory,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

/// An aborted run with the iterations that completed before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: CctoError,
    pub records: Vec<IterationRecord>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} recorded iterations)", self.error, self.records.len())
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<CctoError> for RunFailure {
    fn from(error: CctoError) -> Self {
        Self { error, records: Vec::new() }
    }
}

/// Nominal-range projections for every constrained direction.
pub fn nominal_ranges(nominal: &ReferenceTrajectory, constraints: &HalfPlaneConstraintSet) -> Vec<NominalRange> {
    let range = |values: Vec<f64>| NominalRange {
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    };
    let project = |h: &[f64], x: &DVector<f64>| h.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
    let mut out: Vec<NominalRange> = constraints
        .state_directions()
        .iter()
        .map(|h| range(nominal.states.iter().map(|s| project(h, s)).collect()))
        .collect();
    out.extend(
        constraints
            .action_directions()
            .iter()
            .map(|f| range(nominal.actions.iter().map(|a| project(f, a)).collect())),
    );
    out
}

fn sample_covariance(states: impl Iterator<Item = DVector<f64>> + Clone, n: usize) -> DMatrix<f64> {
    let count = states.clone().count();
    let mean = states.clone().fold(DVector::zeros(n), |acc, s| acc + s) / count as f64;
    let mut cov = DMatrix::zeros(n, n);
    for s in states {
        let e = s - &mean;
        cov += &e * e.transpose();
    }
    cov / (count.max(2) - 1) as f64
}

struct Loop<'a> {
    env: &'a Environment,
    reward: &'a QuadraticReward,
    constraints: HalfPlaneConstraintSet,
    cfg: &'a OptimizerConfig,
    records: Vec<IterationRecord>,
}

impl Loop<'_> {
    fn record(&mut self, iteration: usize, batch: &TrajectoryBatch, mu_reg: f64, qp: Option<(QpStatus, usize, usize)>) -> Result<ReferenceTrajectory> {
        let (mean_reward, std_reward) = batch.reward_stats();
        let nominal = mean_trajectory(batch)?;
        let (qp_status, qp_iterations, infeasible_rows) = match qp {
            Some((s, it, inf)) => (Some(s), it, inf),
            None => (None, 0, 0),
        };
        self.records.push(IterationRecord {
            iteration,
            mean_reward,
            std_reward,
            mu_reg,
            qp_status,
            qp_iterations,
            infeasible_rows,
            violation: empirical_violation(batch, &self.constraints),
            nominal_ranges: nominal_ranges(&nominal, &self.constraints),
            nominal: nominal.clone(),
        });
        Ok(nominal)
    }

    /// Replace the feedforward by the QP optimum; returns status, pivots and flagged rows.
    fn constrain(&self, controller: &mut AffineController, dynamics: &crate::dynamics_fit::LinearGaussianDynamics, batch: &TrajectoryBatch) -> Result<(QpStatus, usize, usize)> {
        let reference = &controller.reference;
        let s0 = reference.states[0].clone();
        let n = s0.len();
        let initial_cov = sample_covariance(batch.rollouts().iter().map(|r| r.states[0].clone()), n);
        let sys = build_augmented(dynamics, controller, self.reward, &initial_cov)?;
        let cov = belief_covariance(&sys)?;
        let objective = build_qp_objective(&sys, &cov, &s0)?;
        let budget = risk_budget(&self.constraints, sys.horizon)?;
        let rows = build_constraint_rows(&sys, &cov, &self.constraints, &budget, &s0)?;
        let flagged = rows.infeasible.iter().filter(|f| **f).count();
        if flagged > 0 {
            log::debug!("{flagged} constraint rows cannot be satisfied; the QP will keep slack on them");
        }
        let qp = QuadraticProgram::new(objective.h, objective.g, rows.l, rows.rhs)?
            .with_warm_start(controller.stacked_feedforward())
            .with_settings(self.cfg.qp);
        let sol = solve(&qp)?;
        match sol.status {
            QpStatus::Optimal | QpStatus::RelaxedWithSlack | QpStatus::MaxIterations => {
                controller.set_stacked_feedforward(&sol.x);
            }
            // An unbounded direction means the fitted model is degenerate;
            // keep the unconstrained feedforward rather than a huge step.
            QpStatus::Unbounded => log::warn!("QP unbounded; keeping the backward-pass feedforward"),
        }
        Ok((sol.status, sol.iterations, flagged))
    }
}

fn run(
    env: &Environment,
    reward: &QuadraticReward,
    constraints: &HalfPlaneConstraintSet,
    cfg: &OptimizerConfig,
) -> std::result::Result<RunOutput, RunFailure> {
    let n = env.spec.state_dim;
    let m = env.spec.action_dim;
    cfg.validate(n, m)?;
    constraints.validate(n, m)?;
    if reward.state_dim() != n || reward.action_dim() != m {
        return Err(CctoError::Dimension("reward does not match the environment".into()).into());
    }
    let mut state = Loop {
        env,
        reward,
        constraints: constraints.clone().with_risk(cfg.risk),
        cfg,
        records: Vec::new(),
    };
    match iterate(&mut state) {
        Ok((controller, reference, converged)) => Ok(RunOutput {
            controller,
            reference,
            records: state.records,
            converged,
        }),
        Err(error) => Err(RunFailure {
            error,
            records: state.records,
        }),
    }
}

fn iterate(state: &mut Loop<'_>) -> Result<(AffineController, ReferenceTrajectory, bool)> {
    let (env, reward, cfg) = (state.env, state.reward, state.cfg);
    let horizon = reward.horizon();
    let initial = ReferenceTrajectory::constant(&env.spec.initial_mean, env.spec.action_dim, horizon);
    let mut controller = AffineController::zero(initial);
    let mut batch = forward_pass(env, reward, &controller, cfg.alpha, cfg.rollouts, derive_seed(cfg.seed, 0))?;
    if cfg.iterations == 0 {
        let nominal = state.record(0, &batch, cfg.mu0, None)?;
        return Ok((controller, nominal, false));
    }

    let mut mu = cfg.mu0;
    let mut nominal = mean_trajectory(&batch)?;
    let mut calm = 0usize;
    let mut converged = false;
    for it in 1..=cfg.iterations {
        let reference = nominal;
        let dynamics = fit_time_variant_dynamics_with(&batch, &cfg.fit)?;
        let expansion = quadratize_reward(reward, &reference)?;
        let (mut next, values) = backward_pass(&dynamics, &expansion, &reference, mu)?;
        let qp = match cfg.algorithm {
            Algorithm::Ccto => Some(state.constrain(&mut next, &dynamics, &batch)?),
            Algorithm::Ilqg => None,
        };
        controller = next;
        batch = forward_pass(env, reward, &controller, cfg.alpha, cfg.rollouts, derive_seed(cfg.seed, it as u64))?;
        let previous = state.records.last().map(|r| r.mean_reward);
        nominal = state.record(it, &batch, values.mu, qp)?;
        mu = relax_regularization(values.mu);
        log::debug!(
            "{} iteration {it}: reward {:.6e}, mu {:e}",
            cfg.algorithm,
            state.records[state.records.len() - 1].mean_reward,
            values.mu
        );

        if let (Some(tol), Some(prev)) = (cfg.tolerance, previous) {
            let change = (state.records[state.records.len() - 1].mean_reward - prev).abs();
            calm = if change < tol { calm + 1 } else { 0 };
            if calm >= CONVERGENCE_WINDOW {
                converged = true;
                break;
            }
        }
    }
    Ok((controller, nominal, converged))
}

/// Chance-constrained trajectory optimization.
pub fn run_ccto(
    env: &Environment,
    reward: &QuadraticReward,
    constraints: &HalfPlaneConstraintSet,
    cfg: &OptimizerConfig,
) -> std::result::Result<RunOutput, RunFailure> {
    let cfg = OptimizerConfig {
        algorithm: Algorithm::Ccto,
        ..cfg.clone()
    };
    run(env, reward, constraints, &cfg)
}

/// Plain iLQG; violations are still measured against `constraints`.
pub fn run_ilqg(
    env: &Environment,
    reward: &QuadraticReward,
    constraints: &HalfPlaneConstraintSet,
    cfg: &OptimizerConfig,
) -> std::result::Result<RunOutput, RunFailure> {
    let cfg = OptimizerConfig {
        algorithm: Algorithm::Ilqg,
        ..cfg.clone()
    };
    run(env, reward, constraints, &cfg)
}

/// Dispatch on `cfg.algorithm`.
pub fn run_algorithm(
    env: &Environment,
    reward: &QuadraticReward,
    constraints: &HalfPlaneConstraintSet,
    cfg: &OptimizerConfig,
) -> std::result::Result<RunOutput, RunFailure> {
    run(env, reward, constraints, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Task;

    fn quick(algorithm: Algorithm, iterations: usize) -> OptimizerConfig {
        OptimizerConfig {
            algorithm,
            alpha: 1.0,
            rollouts: 20,
            iterations,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_iterations_keep_the_initial_controller() {
        let task = Task::linear().unwrap();
        let c = &task.env.spec.constraints;
        let out = run_ccto(&task.env, &task.reward, c, &quick(Algorithm::Ccto, 0)).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].iteration, 0);
        assert!(out.controller.gains.iter().all(|g| g.amax() == 0.0));
        assert!(out.controller.feedforward.iter().all(|k| k.amax() == 0.0));
    }

    #[test]
    fn one_record_per_iteration() {
        let task = Task::linear().unwrap();
        let c = &task.env.spec.constraints;
        let out = run_ilqg(&task.env, &task.reward, c, &quick(Algorithm::Ilqg, 2)).unwrap();
        let idx: Vec<usize> = out.records.iter().map(|r| r.iteration).collect();
        assert_eq!(idx, vec![1, 2]);
        assert!(out.records.iter().all(|r| r.qp_status.is_none()));
    }

    #[test]
    fn single_iteration_applies_the_backward_pass_once() {
        let task = Task::linear().unwrap();
        let c = &task.env.spec.constraints;
        let cfg = quick(Algorithm::Ilqg, 1);
        let out = run_ilqg(&task.env, &task.reward, c, &cfg).unwrap();

        let init = ReferenceTrajectory::constant(&task.env.spec.initial_mean, 1, task.reward.horizon());
        let batch = forward_pass(&task.env, &task.reward, &AffineController::zero(init), 1.0, 20, derive_seed(3, 0)).unwrap();
        let reference = mean_trajectory(&batch).unwrap();
        let dynamics = fit_time_variant_dynamics_with(&batch, &cfg.fit).unwrap();
        let expansion = quadratize_reward(&task.reward, &reference).unwrap();
        let (ctrl, _) = backward_pass(&dynamics, &expansion, &reference, 0.0).unwrap();
        assert_eq!(out.controller, ctrl);
    }

    #[test]
    fn fixed_seed_gives_identical_traces() {
        let task = Task::linear().unwrap();
        let c = &task.env.spec.constraints;
        let a = run_ccto(&task.env, &task.reward, c, &quick(Algorithm::Ccto, 3)).unwrap();
        let b = run_ccto(&task.env, &task.reward, c, &quick(Algorithm::Ccto, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_alpha_is_a_config_error() {
        let task = Task::linear().unwrap();
        let mut cfg = quick(Algorithm::Ccto, 1);
        cfg.alpha = 0.0;
        let err = run_ccto(&task.env, &task.reward, &task.env.spec.constraints, &cfg).unwrap_err();
        assert!(matches!(err.error, CctoError::Config(_)));
    }
}
