//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export takes and returns plain values or JSON strings; the JSON
//! builders are ordinary Rust functions so they can be tested natively.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use nalgebra::DMatrix;

use ccto::chance::{backoff, normal_cdf, HalfPlane, RiskLevels};
use ccto::env::Task;
use ccto::optimizer::{run_algorithm, Algorithm, OptimizerConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeRequest {
    pub environment: String,
    pub algorithm: Algorithm,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_risk")]
    pub risk: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_iterations() -> usize {
    20
}
fn default_rollouts() -> usize {
    50
}
fn default_alpha() -> f64 {
    0.1
}
fn default_risk() -> f64 {
    0.01
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationPoint {
    pub iteration: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mu_reg: f64,
    pub joint_state_violation: f64,
    pub joint_action_violation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Bound {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeResponse {
    pub environment: String,
    pub algorithm: Algorithm,
    pub dt: f64,
    pub state_names: Vec<String>,
    pub action_names: Vec<String>,
    pub state_bounds: Vec<Bound>,
    pub action_bounds: Vec<Bound>,
    pub iterations: Vec<IterationPoint>,
    /// Nominal (mean) trajectory of the last iteration.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub error: Option<String>,
}

/// Box bounds on coordinate axes, one entry per constrained coordinate.
fn axis_bounds(upper: &[HalfPlane], lower: &[HalfPlane], names: &[String]) -> Vec<Bound> {
    let axis = |h: &HalfPlane| {
        let nz: Vec<usize> = (0..h.normal.len()).filter(|&i| h.normal[i] != 0.0).collect();
        (nz.len() == 1 && h.normal[nz[0]] == 1.0).then(|| nz[0])
    };
    let mut out: Vec<Bound> = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let high = upper.iter().filter(|h| axis(h) == Some(i)).map(|h| h.bound).fold(f64::INFINITY, f64::min);
        let low = lower.iter().filter(|h| axis(h) == Some(i)).map(|h| h.bound).fold(f64::NEG_INFINITY, f64::max);
        if high.is_finite() || low.is_finite() {
            out.push(Bound {
                name: name.clone(),
                low,
                high,
            });
        }
    }
    out
}

pub fn optimize_json(request: &str) -> Result<String, String> {
    let req: OptimizeRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    if req.iterations > 200 || req.rollouts > 500 {
        return Err("at most 200 iterations and 500 rollouts in the browser".into());
    }
    let task = Task::by_name(&req.environment).map_err(|e| e.to_string())?;
    let spec = &task.env.spec;
    let cfg = OptimizerConfig {
        algorithm: req.algorithm,
        alpha: req.alpha,
        rollouts: req.rollouts,
        iterations: req.iterations,
        risk: RiskLevels::uniform(req.risk),
        seed: req.seed,
        ..OptimizerConfig::default()
    };
    let (records, error) = match run_algorithm(&task.env, &task.reward, &spec.constraints, &cfg) {
        Ok(out) => (out.records, None),
        Err(failure) => (failure.records.clone(), Some(failure.to_string())),
    };
    let last = records.last().ok_or_else(|| error.clone().unwrap_or_else(|| "no iterations ran".into()))?;
    let c = &spec.constraints;
    let response = OptimizeResponse {
        environment: spec.name.clone(),
        algorithm: req.algorithm,
        dt: spec.dt,
        state_names: spec.state_names.clone(),
        action_names: spec.action_names.clone(),
        state_bounds: axis_bounds(&c.state_upper, &c.state_lower, &spec.state_names),
        action_bounds: axis_bounds(&c.action_upper, &c.action_lower, &spec.action_names),
        iterations: records
            .iter()
            .map(|r| IterationPoint {
                iteration: r.iteration,
                mean_reward: r.mean_reward,
                std_reward: r.std_reward,
                mu_reg: r.mu_reg,
                joint_state_violation: r.violation.joint_state,
                joint_action_violation: r.violation.joint_action,
            })
            .collect(),
        states: last.nominal.states.iter().map(|s| s.iter().copied().collect()).collect(),
        actions: last.nominal.actions.iter().map(|a| a.iter().copied().collect()).collect(),
        error,
    };
    serde_json::to_string(&response).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginResponse {
    /// `sqrt(2σ²) erf⁻¹(1 − 2θ)`.
    pub backoff: f64,
    /// Largest admissible mean, `bound − backoff`.
    pub tightened_bound: f64,
    /// `bound − mean − backoff`; the constraint holds iff it is `≥ 0`.
    pub margin: f64,
    /// Exact `Pr(x > bound)` for `x ~ N(mean, std²)`.
    pub violation_probability: f64,
}

pub fn chance_margin_json(mean: f64, std: f64, bound: f64, theta: f64) -> Result<String, String> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err("std must be finite and >= 0".into());
    }
    let h = HalfPlane::unit(1, 0, bound).normal_vector();
    let cov = DMatrix::from_element(1, 1, std * std);
    let b = backoff(&h, &cov, theta).map_err(|e| e.to_string())?;
    let p = if std > 0.0 {
        1.0 - normal_cdf((bound - mean) / std)
    } else {
        f64::from(mean > bound)
    };
    let response = MarginResponse {
        backoff: b,
        tightened_bound: bound - b,
        margin: bound - mean - b,
        violation_probability: p,
    };
    serde_json::to_string(&response).map_err(|e| e.to_string())
}

/// Run CCTO or iLQG on a bundled task. `request` is JSON with `environment`,
/// `algorithm` and optional `iterations`, `rollouts`, `alpha`, `risk`, `seed`.
#[wasm_bindgen]
pub fn optimize(request: &str) -> Result<String, JsValue> {
    optimize_json(request).map_err(|e| JsValue::from_str(&e))
}

/// Back-off of one scalar chance constraint `Pr(x ≤ bound) ≥ 1 − θ`.
#[wasm_bindgen]
pub fn chance_margin(mean: f64, std: f64, bound: f64, theta: f64) -> Result<String, JsValue> {
    chance_margin_json(mean, std, bound, theta).map_err(|e| JsValue::from_str(&e))
}

/// Names of the bundled environments.
#[wasm_bindgen]
pub fn environments() -> String {
    serde_json::to_string(&["cartpole", "furuta", "linear"]).expect("static list")
}
