//! Mean trajectory and time-variant linear-Gaussian dynamics fitted from
//! sampled rollouts.
//!
//! For every step `t` the model `s[t+1] = A s[t] + B a[t] + c + w`,
//! `w ~ N(0, Σ)`, is fitted by ridge regression of the absolute next state
//! on `[s; a_applied]` (centered, so the intercept is not penalized). The
//! intercept and Σ are then taken with respect to the commanded action `a`,
//! so actuator noise shows up in Σ and the fitted model passes exactly
//! through the sample means of states and commanded actions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{CctoError, Result};
use crate::linalg::{all_finite_mat, symmetrize_with_jitter};
use crate::par::map_indexed;
use crate::trajectory::TrajectoryBatch;

/// Jitter added to residual covariances whose smallest eigenvalue is below it.
pub const NOISE_JITTER: f64 = 1e-9;

/// Relative ridge weight used when none is configured.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Mean states and actions over the sample axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub states: Vec<DVector<f64>>,
    pub actions: Vec<DVector<f64>>,
}

impl ReferenceTrajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.first().map_or(0, |a| a.len())
    }

    /// A reference that sits at `s0` with zero actions.
    pub fn constant(s0: &DVector<f64>, action_dim: usize, horizon: usize) -> Self {
        Self {
            states: vec![s0.clone(); horizon + 1],
            actions: vec![DVector::zeros(action_dim); horizon],
        }
    }
}

/// Per-step `(A, B, c, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianDynamics {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub c: Vec<DVector<f64>>,
    pub noise_cov: Vec<DMatrix<f64>>,
    pub ridge: f64,
}

impl LinearGaussianDynamics {
    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn state_dim(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn predict(&self, t: usize, s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        &self.a[t] * s + &self.b[t] * a + &self.c[t]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    /// Relative ridge weight; the penalty is `ridge` times the trace of the
    /// centered design Gram matrix.
    pub ridge: f64,
    /// Scale each regressor to unit variance before fitting.
    #[serde(default)]
    pub standardize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            ridge: DEFAULT_RIDGE,
            standardize: false,
        }
    }
}

/// Elementwise mean over the rollouts.
pub fn mean_trajectory(batch: &TrajectoryBatch) -> Result<ReferenceTrajectory> {
    let n = batch.len() as f64;
    let t_len = batch.horizon();
    let mut states = vec![DVector::zeros(batch.state_dim()); t_len + 1];
    let mut actions = vec![DVector::zeros(batch.action_dim()); t_len];
    for r in batch.rollouts() {
        for (acc, s) in states.iter_mut().zip(&r.states) {
            *acc += s;
        }
        for (acc, a) in actions.iter_mut().zip(&r.actions) {
            *acc += a;
        }
    }
    for s in states.iter_mut() {
        *s /= n;
    }
    for a in actions.iter_mut() {
        *a /= n;
    }
    if states.iter().chain(actions.iter()).any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(CctoError::NonFinite("mean trajectory".into()));
    }
    Ok(ReferenceTrajectory { states, actions })
}

/// Fit with the given relative ridge weight and default options.
pub fn fit_time_variant_dynamics(batch: &TrajectoryBatch, ridge: f64) -> Result<LinearGaussianDynamics> {
    fit_time_variant_dynamics_with(
        batch,
        &FitOptions {
            ridge,
            ..FitOptions::default()
        },
    )
}

pub fn fit_time_variant_dynamics_with(batch: &TrajectoryBatch, opts: &FitOptions) -> Result<LinearGaussianDynamics> {
    let n = batch.state_dim();
    let m = batch.action_dim();
    if !(opts.ridge >= 0.0 && opts.ridge.is_finite()) {
        return Err(CctoError::InvalidInput(format!("ridge weight must be >= 0, got {}", opts.ridge)));
    }
    if batch.len() < n + m + 2 {
        return Err(CctoError::InvalidInput(format!(
            "need at least n + m + 2 = {} rollouts to fit dynamics, got {}",
            n + m + 2,
            batch.len()
        )));
    }
    let fits = map_indexed(batch.horizon(), |t| fit_step(batch, t, opts));
    let mut out = LinearGaussianDynamics {
        a: Vec::with_capacity(batch.horizon()),
        b: Vec::with_capacity(batch.horizon()),
        c: Vec::with_capacity(batch.horizon()),
        noise_cov: Vec::with_capacity(batch.horizon()),
        ridge: opts.ridge,
    };
    for fit in fits {
        let (a, b, c, cov) = fit?;
        out.a.push(a);
        out.b.push(b);
        out.c.push(c);
        out.noise_cov.push(cov);
    }
    Ok(out)
}

type StepFit = (DMatrix<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>);

fn fit_step(batch: &TrajectoryBatch, t: usize, opts: &FitOptions) -> Result<StepFit> {
    let n = batch.state_dim();
    let m = batch.action_dim();
    let p = n + m;
    let samples = batch.len();
    let count = samples as f64;

    // A and B come from the applied actions, which carry the actuator
    // excitation; c and Σ are taken against the commanded actions so that
    // actuator noise ends up in Σ.
    let mut x = DMatrix::zeros(samples, p);
    let mut x_cmd = DMatrix::zeros(samples, p);
    let mut y = DMatrix::zeros(samples, n);
    for (i, r) in batch.rollouts().iter().enumerate() {
        x.view_mut((i, 0), (1, n)).copy_from(&r.states[t].transpose());
        x.view_mut((i, n), (1, m)).copy_from(&r.applied[t].transpose());
        x_cmd.view_mut((i, 0), (1, n)).copy_from(&r.states[t].transpose());
        x_cmd.view_mut((i, n), (1, m)).copy_from(&r.actions[t].transpose());
        y.row_mut(i).copy_from(&r.states[t + 1].transpose());
    }
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    let mut xc = x.clone();
    let mut yc = y.clone();
    for i in 0..samples {
        let mut row = xc.row_mut(i);
        row -= &x_mean;
        let mut row = yc.row_mut(i);
        row -= &y_mean;
    }

    let mut scale = DVector::from_element(p, 1.0);
    if opts.standardize {
        for j in 0..p {
            let sd = (xc.column(j).norm_squared() / (count - 1.0)).sqrt();
            if sd > 0.0 {
                scale[j] = sd;
                xc.column_mut(j).unscale_mut(sd);
            }
        }
    }

    let mut gram = xc.transpose() * &xc;
    let penalty = opts.ridge * gram.trace();
    if penalty > 0.0 {
        for j in 0..p {
            gram[(j, j)] += penalty;
        }
    } else {
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let max = eig.amax();
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if max <= 0.0 || min <= 1e-12 * max {
            return Err(CctoError::RankDeficient { step: t });
        }
    }
    let rhs = xc.transpose() * &yc;
    let weights = gram
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| gram.clone().lu().solve(&rhs))
        .ok_or(CctoError::RankDeficient { step: t })?;

    // weights is p×n; coefficient row j is divided by its regressor scale.
    let mut coef = weights.transpose();
    for j in 0..p {
        coef.column_mut(j).unscale_mut(scale[j]);
    }
    let a = coef.columns(0, n).into_owned();
    let b = coef.columns(n, m).into_owned();
    let c = y_mean.transpose() - &coef * x_cmd.row_mean().transpose();

    let mut resid = y.clone();
    for i in 0..samples {
        let pred = &coef * x_cmd.row(i).transpose() + &c;
        let mut row = resid.row_mut(i);
        row -= &pred.transpose();
    }
    // Residual degrees of freedom: N minus the p slopes and the intercept.
    let dof = (count - p as f64 - 1.0).max(1.0);
    let cov = symmetrize_with_jitter(&(resid.transpose() * &resid / dof), NOISE_JITTER);

    if !all_finite_mat(&a) || !all_finite_mat(&b) || c.iter().any(|v| !v.is_finite()) || !all_finite_mat(&cov) {
        return Err(CctoError::NonFinite(format!("dynamics fit at step {t}")));
    }
    Ok((a, b, c, cov))
}
