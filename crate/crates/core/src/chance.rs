//! Linear chance constraints and their deterministic relaxation.
//!
//! A joint constraint `Pr(hᵀ s_t ≤ b for all t) ≥ 1 − θ` is split with
//! Boole's inequality into per-step constraints with budgets `θ_t = θ / T`.
//! Under a Gaussian belief each of those becomes the deterministic margin
//! `b − hᵀμ − sqrt(2 hᵀΣh) · erf⁻¹(1 − 2θ_t) ≥ 0`, which is only meaningful
//! for `θ_t < 0.5`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CctoError, Result};
use crate::trajectory::TrajectoryBatch;

const TWO_OVER_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Tolerance below which a negative `hᵀΣh` is treated as rounding noise.
const VARIANCE_TOLERANCE: f64 = 1e-12;

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Rational starting point (M. Giles' single-precision erfinv).
fn erf_inv_initial(y: f64) -> f64 {
    let mut w = -((1.0 - y) * (1.0 + y)).ln();
    let p = if w < 5.0 {
        w -= 2.5;
        let mut p = 2.810_226_36e-08;
        p = 3.432_739_39e-07 + p * w;
        p = -3.523_387_7e-06 + p * w;
        p = -4.391_506_54e-06 + p * w;
        p = 0.000_218_580_87 + p * w;
        p = -0.001_253_725_03 + p * w;
        p = -0.004_177_681_64 + p * w;
        p = 0.246_640_727 + p * w;
        1.501_409_41 + p * w
    } else {
        w = w.sqrt() - 3.0;
        let mut p = -0.000_200_214_257;
        p = 0.000_100_950_558 + p * w;
        p = 0.001_349_343_22 + p * w;
        p = -0.003_673_428_44 + p * w;
        p = 0.005_739_507_73 + p * w;
        p = -0.007_622_461_3 + p * w;
        p = 0.009_438_870_47 + p * w;
        p = 1.001_674_06 + p * w;
        2.832_976_82 + p * w
    };
    p * y
}

/// Inverse error function on `(-1, 1)`.
///
/// A rational approximation is polished with Newton steps. For `y > 0.5` the
/// residual is taken on `erfc` against `1 − y` (exact in floating point), so
/// accuracy holds in the tails. Odd by construction.
pub fn erf_inv(y: f64) -> Result<f64> {
    if !(y.abs() < 1.0) {
        return Err(CctoError::Domain(y));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let a = y.abs();
    let mut x = erf_inv_initial(a);
    let tail = a > 0.5;
    let complement = 1.0 - a;
    for _ in 0..6 {
        let slope = TWO_OVER_SQRT_PI * (-x * x).exp();
        if slope == 0.0 {
            break;
        }
        let step = if tail {
            (erfc(x) - complement) / slope
        } else {
            -(erf(x) - a) / slope
        };
        x += step;
        if step.abs() <= 1e-17 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x.copysign(y))
}

/// Standard normal quantile `Φ⁻¹(p)`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    Ok(std::f64::consts::SQRT_2 * erf_inv(2.0 * p - 1.0)?)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Joint risk levels for the four constraint families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskLevels {
    pub state_upper: f64,
    pub state_lower: f64,
    pub action_upper: f64,
    pub action_lower: f64,
}

impl RiskLevels {
    pub fn uniform(level: f64) -> Self {
        Self {
            state_upper: level,
            state_lower: level,
            action_upper: level,
            action_lower: level,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.state_upper, self.state_lower, self.action_upper, self.action_lower] {
            check_risk(v)?;
        }
        Ok(())
    }
}

impl Default for RiskLevels {
    fn default() -> Self {
        Self::uniform(0.01)
    }
}

fn check_risk(level: f64) -> Result<()> {
    if level > 0.0 && level < 0.5 {
        Ok(())
    } else {
        Err(CctoError::RiskLevel(level))
    }
}

/// Per-step risk budgets.
///
/// `state[i]` belongs to state step `i + 1` (the initial state is given, not
/// constrained); `action[t]` belongs to action step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskAllocation {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

impl RiskAllocation {
    /// Budget of state step `t` (`1 ≤ t ≤ T`).
    pub fn state_at(&self, t: usize) -> f64 {
        self.state[t - 1]
    }
}

/// Uniform allocation `θ_t = θ / T`, `ϑ_t = ϑ / T`.
pub fn allocate_risk(theta: f64, vartheta: f64, horizon: usize) -> Result<RiskAllocation> {
    check_risk(theta)?;
    check_risk(vartheta)?;
    if horizon == 0 {
        return Err(CctoError::InvalidInput("horizon must be positive".into()));
    }
    let t = horizon as f64;
    Ok(RiskAllocation {
        state: vec![theta / t; horizon],
        action: vec![vartheta / t; horizon],
    })
}

/// `hᵀ x ≤ b` (upper) or `hᵀ x ≥ b` (lower), depending on the list it sits in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfPlane {
    pub normal: Vec<f64>,
    pub bound: f64,
}

impl HalfPlane {
    pub fn new(normal: Vec<f64>, bound: f64) -> Self {
        Self { normal, bound }
    }

    pub fn unit(dim: usize, index: usize, bound: f64) -> Self {
        let mut normal = vec![0.0; dim];
        normal[index] = 1.0;
        Self { normal, bound }
    }

    pub fn normal_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.normal)
    }

    pub fn project(&self, x: &DVector<f64>) -> f64 {
        self.normal.iter().zip(x.iter()).map(|(h, v)| h * v).sum()
    }
}

/// Linear state and action limits plus the joint risk levels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfPlaneConstraintSet {
    #[serde(default)]
    pub state_upper: Vec<HalfPlane>,
    #[serde(default)]
    pub state_lower: Vec<HalfPlane>,
    #[serde(default)]
    pub action_upper: Vec<HalfPlane>,
    #[serde(default)]
    pub action_lower: Vec<HalfPlane>,
    #[serde(default)]
    pub risk: RiskLevels,
}

impl HalfPlaneConstraintSet {
    /// `lo ≤ s[index] ≤ hi` as a pair of unit half-planes.
    pub fn with_state_box(mut self, dim: usize, index: usize, lo: f64, hi: f64) -> Self {
        self.state_upper.push(HalfPlane::unit(dim, index, hi));
        self.state_lower.push(HalfPlane::unit(dim, index, lo));
        self
    }

    pub fn with_action_box(mut self, dim: usize, index: usize, lo: f64, hi: f64) -> Self {
        self.action_upper.push(HalfPlane::unit(dim, index, hi));
        self.action_lower.push(HalfPlane::unit(dim, index, lo));
        self
    }

    pub fn with_risk(mut self, risk: RiskLevels) -> Self {
        self.risk = risk;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.state_upper.is_empty()
            && self.state_lower.is_empty()
            && self.action_upper.is_empty()
            && self.action_lower.is_empty()
    }

    pub fn validate(&self, state_dim: usize, action_dim: usize) -> Result<()> {
        self.risk.validate()?;
        let groups = [
            (&self.state_upper, state_dim, "state_upper"),
            (&self.state_lower, state_dim, "state_lower"),
            (&self.action_upper, action_dim, "action_upper"),
            (&self.action_lower, action_dim, "action_lower"),
        ];
        for (planes, dim, name) in groups {
            for (i, p) in planes.iter().enumerate() {
                if p.normal.len() != dim {
                    return Err(CctoError::Dimension(format!(
                        "{name}[{i}] normal has length {}, expected {dim}",
                        p.normal.len()
                    )));
                }
                if p.normal.iter().all(|v| *v == 0.0) || p.normal.iter().any(|v| !v.is_finite()) {
                    return Err(CctoError::InvalidInput(format!("{name}[{i}] normal must be finite and nonzero")));
                }
                if !p.bound.is_finite() {
                    return Err(CctoError::InvalidInput(format!("{name}[{i}] bound must be finite")));
                }
            }
        }
        Ok(())
    }

    /// Distinct state normals, in first-seen order (upper before lower).
    pub fn state_directions(&self) -> Vec<Vec<f64>> {
        distinct_normals(self.state_upper.iter().chain(&self.state_lower))
    }

    pub fn action_directions(&self) -> Vec<Vec<f64>> {
        distinct_normals(self.action_upper.iter().chain(&self.action_lower))
    }
}

fn distinct_normals<'a>(planes: impl Iterator<Item = &'a HalfPlane>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for p in planes {
        if !out.contains(&p.normal) {
            out.push(p.normal.clone());
        }
    }
    out
}

/// `sqrt(2 hᵀΣh)`, clamping tiny negative rounding to zero.
fn spread(h: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let var = (h.transpose() * cov * h)[(0, 0)];
    if var < -VARIANCE_TOLERANCE {
        return Err(CctoError::NotPsd(format!("hᵀΣh = {var:e}")));
    }
    Ok((2.0 * var.max(0.0)).sqrt())
}

fn check_margin_risk(theta_t: f64) -> Result<()> {
    if theta_t > 0.0 && theta_t <= 0.5 {
        Ok(())
    } else {
        Err(CctoError::RiskLevel(theta_t))
    }
}

/// Deterministic margin of an upper chance constraint `Pr(hᵀs ≤ b) ≥ 1 − θ_t`.
/// The constraint holds iff the result is `≥ 0`.
pub fn state_margin(h: &DVector<f64>, b: f64, mean: &DVector<f64>, cov: &DMatrix<f64>, theta_t: f64) -> Result<f64> {
    check_margin_risk(theta_t)?;
    let backoff = spread(h, cov)? * erf_inv(1.0 - 2.0 * theta_t)?;
    Ok(b - h.dot(mean) - backoff)
}

/// Margin of a lower chance constraint `Pr(hᵀs ≥ b) ≥ 1 − θ_t`.
pub fn lower_state_margin(
    h: &DVector<f64>,
    b: f64,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    theta_t: f64,
) -> Result<f64> {
    check_margin_risk(theta_t)?;
    let backoff = spread(h, cov)? * erf_inv(1.0 - 2.0 * theta_t)?;
    Ok(h.dot(mean) - b - backoff)
}

/// Tightening `sqrt(2 hᵀΣh) · erf⁻¹(1 − 2θ_t)` applied to a bound.
pub fn backoff(h: &DVector<f64>, cov: &DMatrix<f64>, theta_t: f64) -> Result<f64> {
    check_margin_risk(theta_t)?;
    Ok(spread(h, cov)? * erf_inv(1.0 - 2.0 * theta_t)?)
}

/// Empirical violation frequencies of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationReport {
    /// `[constraint][t]`, `t = 0..=T`.
    pub state_upper: Vec<Vec<f64>>,
    pub state_lower: Vec<Vec<f64>>,
    /// `[constraint][t]`, `t = 0..T`.
    pub action_upper: Vec<Vec<f64>>,
    pub action_lower: Vec<Vec<f64>>,
    /// Fraction of rollouts violating any state constraint at any step.
    pub joint_state: f64,
    pub joint_action: f64,
}

pub fn empirical_violation(batch: &TrajectoryBatch, constraints: &HalfPlaneConstraintSet) -> ViolationReport {
    let n = batch.len() as f64;
    let horizon = batch.horizon();
    let zeros = |count: usize, len: usize| vec![vec![0.0; len]; count];
    let mut report = ViolationReport {
        state_upper: zeros(constraints.state_upper.len(), horizon + 1),
        state_lower: zeros(constraints.state_lower.len(), horizon + 1),
        action_upper: zeros(constraints.action_upper.len(), horizon),
        action_lower: zeros(constraints.action_lower.len(), horizon),
        joint_state: 0.0,
        joint_action: 0.0,
    };
    let mut joint_state = 0usize;
    let mut joint_action = 0usize;
    for r in batch.rollouts() {
        let mut state_hit = false;
        let mut action_hit = false;
        for (t, s) in r.states.iter().enumerate() {
            for (c, p) in constraints.state_upper.iter().enumerate() {
                if p.project(s) > p.bound {
                    report.state_upper[c][t] += 1.0;
                    state_hit = true;
                }
            }
            for (c, p) in constraints.state_lower.iter().enumerate() {
                if p.project(s) < p.bound {
                    report.state_lower[c][t] += 1.0;
                    state_hit = true;
                }
            }
        }
        for (t, a) in r.actions.iter().enumerate() {
            for (c, p) in constraints.action_upper.iter().enumerate() {
                if p.project(a) > p.bound {
                    report.action_upper[c][t] += 1.0;
                    action_hit = true;
                }
            }
            for (c, p) in constraints.action_lower.iter().enumerate() {
                if p.project(a) < p.bound {
                    report.action_lower[c][t] += 1.0;
                    action_hit = true;
                }
            }
        }
        joint_state += state_hit as usize;
        joint_action += action_hit as usize;
    }
    for rates in report
        .state_upper
        .iter_mut()
        .chain(report.state_lower.iter_mut())
        .chain(report.action_upper.iter_mut())
        .chain(report.action_lower.iter_mut())
    {
        for v in rates.iter_mut() {
            *v /= n;
        }
    }
    report.joint_state = joint_state as f64 / n;
    report.joint_action = joint_action as f64 / n;
    report
}
