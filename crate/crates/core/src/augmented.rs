//! The whole trajectory as one stacked linear-Gaussian system in the
//! feedforward sequence `k̃`.
//!
//! With the closed loop `Â_t = A_t + B_t K_t` and offset
//! `d_t = c_t − B_t K_t s_r,t + B_t a_r,t`, the stacked states satisfy
//! `s̃ = Ã s₀ + B̃ k̃ + G̃ w̃ + G̃ d̃`. The mean is affine in `k̃` and the
//! covariances do not depend on `k̃` at all, so the expected reward is a
//! concave quadratic in `k̃` and every chance constraint becomes one linear
//! row with a constant back-off.

use nalgebra::{DMatrix, DVector};

use crate::chance::{allocate_risk, backoff, HalfPlane, HalfPlaneConstraintSet, RiskAllocation};
use crate::dynamics_fit::LinearGaussianDynamics;
use crate::error::{CctoError, Result};
use crate::ilqg::{AffineController, QuadraticReward};
use crate::linalg::{all_finite_vec, set_block, symmetrize};

/// Diagonal entries of a covariance may dip this far below zero from rounding.
const COVARIANCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    /// `(T+1)n × n`, block `t` is `Â_{t−1}⋯Â_0`.
    pub a_tilde: DMatrix<f64>,
    /// `(T+1)n × Tm`.
    pub b_tilde: DMatrix<f64>,
    /// `(T+1)n × Tn`.
    pub g_tilde: DMatrix<f64>,
    pub d_tilde: DVector<f64>,
    /// `Tm × Tn`, block diagonal in the gains.
    pub k_tilde: DMatrix<f64>,
    pub m_tilde: DMatrix<f64>,
    pub d_weights: DMatrix<f64>,
    /// Block `t` is `M_t + K_tᵀ D_t K_t`, the terminal block `M_T`.
    pub m_c: DMatrix<f64>,
    pub noise_cov: DMatrix<f64>,
    pub initial_cov: DMatrix<f64>,
    /// Stacked reference states `s̃_r`, actions `ã_r` and goals `s̃_g`.
    pub state_ref: DVector<f64>,
    pub action_ref: DVector<f64>,
    pub goal: DVector<f64>,
}

impl AugmentedSystem {
    /// Rows of `B̃` for state step `t`.
    pub fn b_rows(&self, t: usize) -> DMatrix<f64> {
        self.b_tilde.rows(t * self.state_dim, self.state_dim).into_owned()
    }

    /// `K̃` padded with a zero terminal column block: maps `s̃` to the feedback part of `ã`.
    pub fn feedback_map(&self) -> DMatrix<f64> {
        let (n, m, horizon) = (self.state_dim, self.action_dim, self.horizon);
        let mut p = DMatrix::zeros(horizon * m, (horizon + 1) * n);
        p.columns_mut(0, horizon * n).copy_from(&self.k_tilde);
        p
    }

    /// `Ã s₀ + G̃ d̃`, the mean state at `k̃ = 0`.
    pub fn free_mean(&self, s0: &DVector<f64>) -> DVector<f64> {
        &self.a_tilde * s0 + &self.g_tilde * &self.d_tilde
    }

    /// `∂ã/∂k̃ = K̃ B̃ + I` and the mean action at `k̃ = 0`.
    fn action_map(&self, s0: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.feedback_map();
        let d = self.horizon * self.action_dim;
        let e = &p * &self.b_tilde + DMatrix::identity(d, d);
        let e0 = &p * (self.free_mean(s0) - &self.state_ref) + &self.action_ref;
        (e, e0)
    }
}

pub fn build_augmented(
    dynamics: &LinearGaussianDynamics,
    controller: &AffineController,
    reward: &QuadraticReward,
    initial_cov: &DMatrix<f64>,
) -> Result<AugmentedSystem> {
    let horizon = dynamics.horizon();
    let n = dynamics.state_dim();
    let m = dynamics.action_dim();
    let reference = &controller.reference;
    if controller.horizon() != horizon
        || reward.horizon() != horizon
        || reference.state_dim() != n
        || reference.action_dim() != m
        || reward.state_dim() != n
        || reward.action_dim() != m
        || initial_cov.shape() != (n, n)
    {
        return Err(CctoError::Dimension(
            "dynamics, controller, reward and initial covariance disagree".into(),
        ));
    }

    let closed: Vec<DMatrix<f64>> = (0..horizon)
        .map(|t| &dynamics.a[t] + &dynamics.b[t] * &controller.gains[t])
        .collect();
    let mut a_tilde = DMatrix::zeros((horizon + 1) * n, n);
    let mut g_tilde = DMatrix::zeros((horizon + 1) * n, horizon * n);
    let mut b_tilde = DMatrix::zeros((horizon + 1) * n, horizon * m);
    let mut d_tilde = DVector::zeros(horizon * n);
    set_block(&mut a_tilde, 0, 0, &DMatrix::identity(n, n));
    for i in 1..=horizon {
        let ahat = &closed[i - 1];
        let prev = a_tilde.rows((i - 1) * n, n).into_owned();
        set_block(&mut a_tilde, i * n, 0, &(ahat * prev));
        // Block (i, j) = Â_{i−1} · block (i−1, j) for j < i−1, identity at j = i−1.
        for j in 0..i - 1 {
            let prev = g_tilde.view(((i - 1) * n, j * n), (n, n)).into_owned();
            set_block(&mut g_tilde, i * n, j * n, &(ahat * prev));
        }
        set_block(&mut g_tilde, i * n, (i - 1) * n, &DMatrix::identity(n, n));
        for j in 0..i {
            let gij = g_tilde.view((i * n, j * n), (n, n)).into_owned();
            set_block(&mut b_tilde, i * n, j * m, &(gij * &dynamics.b[j]));
        }
    }
    for t in 0..horizon {
        let (b, k) = (&dynamics.b[t], &controller.gains[t]);
        let d = &dynamics.c[t] - b * (k * &reference.states[t]) + b * &reference.actions[t];
        d_tilde.rows_mut(t * n, n).copy_from(&d);
    }

    let mut k_tilde = DMatrix::zeros(horizon * m, horizon * n);
    let mut m_tilde = DMatrix::zeros((horizon + 1) * n, (horizon + 1) * n);
    let mut m_c = DMatrix::zeros((horizon + 1) * n, (horizon + 1) * n);
    let mut d_weights = DMatrix::zeros(horizon * m, horizon * m);
    let mut noise_cov = DMatrix::zeros(horizon * n, horizon * n);
    for t in 0..=horizon {
        let mt = &reward.state_weights[t];
        set_block(&mut m_tilde, t * n, t * n, mt);
        if t < horizon {
            let (k, dt) = (&controller.gains[t], &reward.action_weights[t]);
            set_block(&mut k_tilde, t * m, t * n, k);
            set_block(&mut d_weights, t * m, t * m, dt);
            set_block(&mut m_c, t * n, t * n, &symmetrize(&(mt + k.transpose() * dt * k)));
            set_block(&mut noise_cov, t * n, t * n, &symmetrize(&dynamics.noise_cov[t]));
        } else {
            set_block(&mut m_c, t * n, t * n, mt);
        }
    }

    Ok(AugmentedSystem {
        state_dim: n,
        action_dim: m,
        horizon,
        a_tilde,
        b_tilde,
        g_tilde,
        d_tilde,
        k_tilde,
        m_tilde,
        d_weights,
        m_c,
        noise_cov,
        initial_cov: symmetrize(initial_cov),
        state_ref: stack(&reference.states),
        action_ref: stack(&reference.actions),
        goal: stack(&reward.goals),
    })
}

pub fn stack(blocks: &[DVector<f64>]) -> DVector<f64> {
    let len: usize = blocks.iter().map(|b| b.len()).sum();
    DVector::from_iterator(len, blocks.iter().flat_map(|b| b.iter().cloned()))
}

/// The `k̃`-independent part of the belief.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefCovariance {
    pub state: DMatrix<f64>,
    pub action: DMatrix<f64>,
}

impl BeliefCovariance {
    pub fn state_block(&self, t: usize, n: usize) -> DMatrix<f64> {
        self.state.view((t * n, t * n), (n, n)).into_owned()
    }

    pub fn action_block(&self, t: usize, m: usize) -> DMatrix<f64> {
        self.action.view((t * m, t * m), (m, m)).into_owned()
    }
}

/// `Σ̃_s̃ = Ã Σ₀ Ãᵀ + G̃ Σ̃_w̃ G̃ᵀ` and `Σ̃_ã = K̃ Σ̃_s̃[..T] K̃ᵀ`.
pub fn belief_covariance(sys: &AugmentedSystem) -> Result<BeliefCovariance> {
    let a = &sys.a_tilde;
    let g = &sys.g_tilde;
    let state = symmetrize(&(a * &sys.initial_cov * a.transpose() + g * &sys.noise_cov * g.transpose()));
    let p = sys.feedback_map();
    let action = symmetrize(&(&p * &state * p.transpose()));
    for (name, cov) in [("state", &state), ("action", &action)] {
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(CctoError::NonFinite(format!("{name} covariance of the stacked belief")));
        }
        if let Some(v) = cov.diagonal().iter().find(|v| **v < -COVARIANCE_TOLERANCE) {
            return Err(CctoError::NotPsd(format!("{name} covariance has diagonal entry {v:e}")));
        }
    }
    Ok(BeliefCovariance { state, action })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBelief {
    pub state_mean: DVector<f64>,
    pub action_mean: DVector<f64>,
    pub state_cov: DMatrix<f64>,
    pub action_cov: DMatrix<f64>,
}

impl TrajectoryBelief {
    pub fn state_mean_at(&self, t: usize, n: usize) -> DVector<f64> {
        self.state_mean.rows(t * n, n).into_owned()
    }
}

pub fn propagate_belief(sys: &AugmentedSystem, k: &DVector<f64>, s0: &DVector<f64>) -> Result<TrajectoryBelief> {
    check_inputs(sys, k, s0)?;
    let cov = belief_covariance(sys)?;
    let state_mean = sys.free_mean(s0) + &sys.b_tilde * k;
    let action_mean = sys.feedback_map() * (&state_mean - &sys.state_ref) + &sys.action_ref + k;
    if !all_finite_vec(&state_mean) || !all_finite_vec(&action_mean) {
        return Err(CctoError::NonFinite("stacked mean trajectory".into()));
    }
    Ok(TrajectoryBelief {
        state_mean,
        action_mean,
        state_cov: cov.state,
        action_cov: cov.action,
    })
}

fn check_inputs(sys: &AugmentedSystem, k: &DVector<f64>, s0: &DVector<f64>) -> Result<()> {
    if k.len() != sys.horizon * sys.action_dim || s0.len() != sys.state_dim {
        return Err(CctoError::Dimension(format!(
            "expected k̃ of length {} and s₀ of length {}",
            sys.horizon * sys.action_dim,
            sys.state_dim
        )));
    }
    Ok(())
}

/// Expected total reward `J̃(k̃) = −½ k̃ᵀ H k̃ + gᵀ k̃ + c0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpObjective {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c0: f64,
}

impl QpObjective {
    pub fn evaluate(&self, k: &DVector<f64>) -> f64 {
        -0.5 * k.dot(&(&self.h * k)) + self.g.dot(k) + self.c0
    }

    pub fn gradient(&self, k: &DVector<f64>) -> DVector<f64> {
        &self.g - &self.h * k
    }
}

/// Expected reward of the closed loop `a_t = a_r,t + k_t + K_t (s_t − s_r,t)`
/// on the stacked model, started from `s₀ ~ N(s0, Σ₀)`.
pub fn build_qp_objective(sys: &AugmentedSystem, cov: &BeliefCovariance, s0: &DVector<f64>) -> Result<QpObjective> {
    check_inputs(sys, &DVector::zeros(sys.horizon * sys.action_dim), s0)?;
    let mu0 = sys.free_mean(s0);
    let (e, e0) = sys.action_map(s0);
    let err0 = &mu0 - &sys.goal;
    let mb = &sys.m_tilde * &sys.b_tilde;
    let de = &sys.d_weights * &e;
    let h = symmetrize(&((sys.b_tilde.transpose() * &mb + e.transpose() * &de) * 2.0));
    let g = -(mb.transpose() * &err0 + de.transpose() * &e0) * 2.0;
    let c0 = -err0.dot(&(&sys.m_tilde * &err0))
        - e0.dot(&(&sys.d_weights * &e0))
        - (&sys.m_tilde * &cov.state).trace()
        - (&sys.d_weights * &cov.action).trace();
    if h.iter().chain(g.iter()).any(|v| !v.is_finite()) || !c0.is_finite() {
        return Err(CctoError::NonFinite("QP objective".into()));
    }
    Ok(QpObjective { h, g, c0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    StateUpper,
    StateLower,
    ActionUpper,
    ActionLower,
}

impl RowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RowKind::StateUpper => "state_upper",
            RowKind::StateLower => "state_lower",
            RowKind::ActionUpper => "action_upper",
            RowKind::ActionLower => "action_lower",
        }
    }
}

/// Origin of a constraint row: family, index within the family, time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowTag {
    pub kind: RowKind,
    pub constraint: usize,
    pub step: usize,
}

/// `L k̃ ≤ rhs`, one row per half-plane and step.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRows {
    pub l: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub tags: Vec<RowTag>,
    /// Rows that cannot hold for any `k̃`: a paired upper/lower band whose
    /// back-offs cross, or a row with no dependence on `k̃` and negative slack.
    pub infeasible: Vec<bool>,
}

impl ConstraintRows {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn any_infeasible(&self) -> bool {
        self.infeasible.iter().any(|f| *f)
    }
}

/// Per-step budgets for upper and lower constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskBudget {
    pub upper: RiskAllocation,
    pub lower: RiskAllocation,
}

pub fn risk_budget(constraints: &HalfPlaneConstraintSet, horizon: usize) -> Result<RiskBudget> {
    let r = &constraints.risk;
    Ok(RiskBudget {
        upper: allocate_risk(r.state_upper, r.action_upper, horizon)?,
        lower: allocate_risk(r.state_lower, r.action_lower, horizon)?,
    })
}

/// Deterministic rows for every state constraint at steps `1..=T` and every
/// action constraint at steps `0..T`.
pub fn build_constraint_rows(
    sys: &AugmentedSystem,
    cov: &BeliefCovariance,
    constraints: &HalfPlaneConstraintSet,
    budget: &RiskBudget,
    s0: &DVector<f64>,
) -> Result<ConstraintRows> {
    let (n, m, horizon) = (sys.state_dim, sys.action_dim, sys.horizon);
    check_inputs(sys, &DVector::zeros(horizon * m), s0)?;
    constraints.validate(n, m)?;
    let mu0 = sys.free_mean(s0);
    let (e, e0) = sys.action_map(s0);

    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs = Vec::new();
    let mut tags = Vec::new();
    let mut push = |row: DVector<f64>, r: f64, tag: RowTag| {
        rows.push(row);
        rhs.push(r);
        tags.push(tag);
    };

    for t in 1..=horizon {
        let sens = sys.b_rows(t);
        let mean = mu0.rows(t * n, n).into_owned();
        let sigma = cov.state_block(t, n);
        for (kind, planes, alloc) in [
            (RowKind::StateUpper, &constraints.state_upper, &budget.upper),
            (RowKind::StateLower, &constraints.state_lower, &budget.lower),
        ] {
            for (c, p) in planes.iter().enumerate() {
                let (row, r) = directed_row(kind, p, &sens, &mean, &sigma, alloc.state_at(t))?;
                push(row, r, RowTag { kind, constraint: c, step: t });
            }
        }
    }
    for t in 0..horizon {
        let sens = e.rows(t * m, m).into_owned();
        let mean = e0.rows(t * m, m).into_owned();
        let sigma = cov.action_block(t, m);
        for (kind, planes, alloc) in [
            (RowKind::ActionUpper, &constraints.action_upper, &budget.upper),
            (RowKind::ActionLower, &constraints.action_lower, &budget.lower),
        ] {
            for (c, p) in planes.iter().enumerate() {
                let (row, r) = directed_row(kind, p, &sens, &mean, &sigma, alloc.action[t])?;
                push(row, r, RowTag { kind, constraint: c, step: t });
            }
        }
    }

    let d = horizon * m;
    let mut l = DMatrix::zeros(rows.len(), d);
    for (i, row) in rows.iter().enumerate() {
        l.row_mut(i).copy_from(&row.transpose());
    }
    let rhs = DVector::from_vec(rhs);
    let infeasible = flag_infeasible(&l, &rhs, &tags, constraints);
    Ok(ConstraintRows { l, rhs, tags, infeasible })
}

/// One row in `≤` form. Upper: `hᵀS k ≤ b − hᵀμ − β`; lower: `−hᵀS k ≤ hᵀμ − b − β`.
fn directed_row(
    kind: RowKind,
    plane: &HalfPlane,
    sensitivity: &DMatrix<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    risk: f64,
) -> Result<(DVector<f64>, f64)> {
    let h = plane.normal_vector();
    let beta = backoff(&h, cov, risk)?;
    let row = sensitivity.transpose() * &h;
    let proj = h.dot(mean);
    Ok(match kind {
        RowKind::StateUpper | RowKind::ActionUpper => (row, plane.bound - proj - beta),
        RowKind::StateLower | RowKind::ActionLower => (-row, proj - plane.bound - beta),
    })
}

fn flag_infeasible(
    l: &DMatrix<f64>,
    rhs: &DVector<f64>,
    tags: &[RowTag],
    constraints: &HalfPlaneConstraintSet,
) -> Vec<bool> {
    let mut flags: Vec<bool> = (0..tags.len())
        .map(|i| rhs[i] < 0.0 && l.row(i).amax() == 0.0)
        .collect();
    let plane = |tag: &RowTag| -> &HalfPlane {
        match tag.kind {
            RowKind::StateUpper => &constraints.state_upper[tag.constraint],
            RowKind::StateLower => &constraints.state_lower[tag.constraint],
            RowKind::ActionUpper => &constraints.action_upper[tag.constraint],
            RowKind::ActionLower => &constraints.action_lower[tag.constraint],
        }
    };
    let partner = |kind: RowKind| match kind {
        RowKind::StateUpper => Some(RowKind::StateLower),
        RowKind::ActionUpper => Some(RowKind::ActionLower),
        _ => None,
    };
    for (i, ti) in tags.iter().enumerate() {
        let Some(lower_kind) = partner(ti.kind) else { continue };
        for (j, tj) in tags.iter().enumerate() {
            // Upper row: x ≤ r_i, lower row: −x ≤ r_j; the band is empty when r_i + r_j < 0.
            if tj.kind == lower_kind
                && tj.step == ti.step
                && plane(ti).normal == plane(tj).normal
                && rhs[i] + rhs[j] < 0.0
            {
                flags[i] = true;
                flags[j] = true;
            }
        }
    }
    flags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics_fit::ReferenceTrajectory;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar_setup(a: f64, b: f64, k: f64, noise: f64, horizon: usize) -> (LinearGaussianDynamics, AffineController, QuadraticReward) {
        let dynamics = LinearGaussianDynamics {
            a: vec![s(a); horizon],
            b: vec![s(b); horizon],
            c: vec![DVector::zeros(1); horizon],
            noise_cov: vec![s(noise); horizon],
            ridge: 0.0,
        };
        let mut ctrl = AffineController::zero(ReferenceTrajectory::constant(&DVector::zeros(1), 1, horizon));
        for g in ctrl.gains.iter_mut() {
            *g = s(k);
        }
        let reward = QuadraticReward::time_invariant(s(1.0), s(2.0), s(0.5), DVector::from_element(1, 1.0), horizon).unwrap();
        (dynamics, ctrl, reward)
    }

    #[test]
    fn identity_dynamics_blocks() {
        let (dynamics, mut ctrl, reward) = scalar_setup(1.0, 1.0, 0.0, 0.0, 2);
        ctrl.reference.actions = vec![DVector::from_element(1, 0.3), DVector::from_element(1, -0.2)];
        let sys = build_augmented(&dynamics, &ctrl, &reward, &s(0.0)).unwrap();
        assert_eq!(sys.a_tilde, DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]));
        let lower = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(sys.b_tilde, lower);
        assert_eq!(sys.g_tilde, lower);
        assert_eq!(sys.d_tilde, DVector::from_vec(vec![0.3, -0.2]));
    }

    #[test]
    fn nilpotent_closed_loop() {
        let (dynamics, ctrl, reward) = scalar_setup(0.5, 1.0, -0.5, 0.0, 3);
        let sys = build_augmented(&dynamics, &ctrl, &reward, &s(0.0)).unwrap();
        assert_eq!(sys.a_tilde, DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(sys.b_tilde[(2, 0)], 0.0);
        assert_eq!(sys.b_tilde[(1, 0)], 1.0);
    }

    #[test]
    fn scalar_variances_follow_lyapunov_recursion() {
        let (dynamics, ctrl, reward) = scalar_setup(0.9, 1.0, -0.5, 0.01, 5);
        let sys = build_augmented(&dynamics, &ctrl, &reward, &s(0.0)).unwrap();
        let cov = belief_covariance(&sys).unwrap();
        let ahat: f64 = 0.9 - 0.5;
        let mut var = 0.0;
        for t in 0..=5 {
            assert!((cov.state[(t, t)] - var).abs() < 1e-12, "t={t}");
            if t < 5 {
                assert!((cov.action[(t, t)] - 0.25 * var).abs() < 1e-12);
            }
            var = ahat * ahat * var + 0.01;
        }
    }

    #[test]
    fn open_loop_has_no_action_covariance() {
        let (dynamics, ctrl, reward) = scalar_setup(0.9, 1.0, 0.0, 0.01, 4);
        let sys = build_augmented(&dynamics, &ctrl, &reward, &s(0.1)).unwrap();
        let belief = propagate_belief(&sys, &DVector::from_element(4, 0.2), &DVector::zeros(1)).unwrap();
        assert_eq!(belief.action_cov.amax(), 0.0);
        assert!(belief.state_cov.amax() > 0.0);
    }

    #[test]
    fn deterministic_belief_is_a_point_mass() {
        let (dynamics, ctrl, reward) = scalar_setup(0.9, 1.0, -0.3, 0.0, 4);
        let sys = build_augmented(&dynamics, &ctrl, &reward, &s(0.0)).unwrap();
        let belief = propagate_belief(&sys, &DVector::from_element(4, 0.2), &DVector::zeros(1)).unwrap();
        assert_eq!(belief.state_cov.amax(), 0.0);
        assert_eq!(belief.action_cov.amax(), 0.0);
    }

    #[test]
    fn closed_loop_weight_blocks() {
        let (dynamics, ctrl, reward) = scalar_setup(0.9, 1.0, -0.5, 0.01, 3);
        let sys = build_augmented(&dynamics, &ctrl, &reward, &s(0.0)).unwrap();
        for t in 0..3 {
            assert_eq!(sys.m_c[(t, t)], 1.0 + 0.25 * 0.5);
        }
        assert_eq!(sys.m_c[(3, 3)], 2.0);
    }

    #[test]
    fn scalar_row_by_substitution() {
        let (dynamics, ctrl, reward) = scalar_setup(0.9, 1.0, 0.0, 0.01, 3);
        let sys = build_augmented(&dynamics, &ctrl, &reward, &s(0.0)).unwrap();
        let cov = belief_covariance(&sys).unwrap();
        let constraints = HalfPlaneConstraintSet {
            state_upper: vec![HalfPlane::new(vec![1.0], 0.5)],
            ..Default::default()
        };
        let budget = risk_budget(&constraints, 3).unwrap();
        let s0 = DVector::from_element(1, 0.2);
        let rows = build_constraint_rows(&sys, &cov, &constraints, &budget, &s0).unwrap();
        assert_eq!(rows.len(), 3);
        let theta_t = 0.01 / 3.0;
        for (i, tag) in rows.tags.iter().enumerate() {
            let t = tag.step;
            let var = cov.state[(t, t)];
            let expected = 0.5 - 0.9f64.powi(t as i32) * 0.2
                - (2.0 * var).sqrt() * crate::chance::erf_inv(1.0 - 2.0 * theta_t).unwrap();
            assert!((rows.rhs[i] - expected).abs() < 1e-12);
            for j in 0..3 {
                assert_eq!(rows.l[(i, j)], sys.b_tilde[(t, j)]);
            }
        }
        assert!(!rows.any_infeasible());
    }

    #[test]
    fn crossing_band_is_flagged() {
        let (dynamics, ctrl, reward) = scalar_setup(1.0, 1.0, 0.0, 1.0, 2);
        let sys = build_augmented(&dynamics, &ctrl, &reward, &s(0.0)).unwrap();
        let cov = belief_covariance(&sys).unwrap();
        let constraints = HalfPlaneConstraintSet::default().with_state_box(1, 0, -0.1, 0.1);
        let budget = risk_budget(&constraints, 2).unwrap();
        let rows = build_constraint_rows(&sys, &cov, &constraints, &budget, &DVector::zeros(1)).unwrap();
        assert!(rows.infeasible.iter().all(|f| *f));
    }

    #[test]
    fn gradient_is_minus_h_k_plus_g() {
        let (dynamics, ctrl, reward) = scalar_setup(0.9, 0.7, -0.2, 0.01, 3);
        let sys = build_augmented(&dynamics, &ctrl, &reward, &s(0.01)).unwrap();
        let cov = belief_covariance(&sys).unwrap();
        let obj = build_qp_objective(&sys, &cov, &DVector::from_element(1, -0.5)).unwrap();
        let k = DVector::from_vec(vec![0.1, -0.4, 0.3]);
        let step = 1e-5;
        let grad = obj.gradient(&k);
        for i in 0..3 {
            let mut kp = k.clone();
            let mut km = k.clone();
            kp[i] += step;
            km[i] -= step;
            let fd = (obj.evaluate(&kp) - obj.evaluate(&km)) / (2.0 * step);
            assert!((fd - grad[i]).abs() <= 1e-6 * grad[i].abs().max(1.0));
        }
    }
}
