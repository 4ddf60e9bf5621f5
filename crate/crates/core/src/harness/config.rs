//! JSON experiment configuration.
//!
//! Unknown keys are rejected at every level. Parse errors carry the line and
//! column reported by the JSON reader; semantic errors carry the dotted path
//! of the offending field.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::chance::RiskLevels;
use crate::dynamics_fit::{FitOptions, DEFAULT_RIDGE};
use crate::env::{CartPoleParams, FurutaParams, PendulumSetup, Task};
use crate::optimizer::{Algorithm, OptimizerConfig};
use crate::qp::QpSettings;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted field path for semantic errors, empty for syntax errors.
    pub field: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            line: None,
            column: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: ")?,
            _ => {}
        }
        if !self.field.is_empty() {
            write!(f, "{}: ", self.field)?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentConfig,
    pub algorithms: AlgorithmSet,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_trials() -> usize {
    5
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    /// `cartpole`, `furuta` or `linear`.
    pub name: String,
    #[serde(default)]
    pub overrides: EnvironmentOverrides,
}

/// Pendulum overrides. The linear test system accepts none.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running_weights: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_weights: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_weight: Option<f64>,
    /// Partial physical parameters, merged over the plant defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physics: Option<Map<String, Value>>,
}

impl EnvironmentOverrides {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    fn apply(&self, setup: &mut PendulumSetup) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { setup.$f = v; })* };
        }
        set!(dt, horizon, initial_std, process_std, action_std, state_bound, action_bound, running_weights, terminal_weights, action_weight);
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ccto: Option<AlgorithmConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ilqg: Option<AlgorithmConfig>,
}

impl AlgorithmSet {
    /// Configured algorithms in fixed order (CCTO first).
    pub fn enabled(&self) -> Vec<(Algorithm, &AlgorithmConfig)> {
        let mut out = Vec::new();
        if let Some(c) = &self.ccto {
            out.push((Algorithm::Ccto, c));
        }
        if let Some(c) = &self.ilqg {
            out.push((Algorithm::Ilqg, c));
        }
        out
    }
}

/// A single number sets all four joint risk levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RiskConfig {
    Uniform(f64),
    Levels(RiskLevels),
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig::Uniform(0.01)
    }
}

impl RiskConfig {
    pub fn levels(&self) -> RiskLevels {
        match *self {
            RiskConfig::Uniform(v) => RiskLevels::uniform(v),
            RiskConfig::Levels(l) => l,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub mu0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qp_max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qp_slack_penalty: Option<f64>,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_rollouts() -> usize {
    50
}

fn default_iterations() -> usize {
    45
}

fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            rollouts: default_rollouts(),
            iterations: default_iterations(),
            risk: RiskConfig::default(),
            ridge: DEFAULT_RIDGE,
            standardize: false,
            mu0: 0.0,
            tolerance: None,
            qp_max_iterations: None,
            qp_slack_penalty: None,
        }
    }
}

impl AlgorithmConfig {
    pub fn optimizer(&self, algorithm: Algorithm, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            algorithm,
            alpha: self.alpha,
            rollouts: self.rollouts,
            iterations: self.iterations,
            risk: self.risk.levels(),
            fit: FitOptions {
                ridge: self.ridge,
                standardize: self.standardize,
            },
            mu0: self.mu0,
            tolerance: self.tolerance,
            seed,
            qp: QpSettings {
                max_iterations: self.qp_max_iterations,
                slack_penalty: self.qp_slack_penalty,
                ..QpSettings::default()
            },
        }
    }
}

impl ExperimentConfig {
    /// Parse and validate.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError {
            field: String::new(),
            line: Some(e.line()),
            column: Some(e.column()),
            message: e.to_string().split(" at line ").next().unwrap_or_default().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::at("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let task = self.task()?;
        let algorithms = self.algorithms.enabled();
        if algorithms.is_empty() {
            return Err(ConfigError::at("algorithms", "configure at least one of ccto, ilqg"));
        }
        if self.trials == 0 {
            return Err(ConfigError::at("trials", "must be at least 1"));
        }
        let (n, m) = (task.env.spec.state_dim, task.env.spec.action_dim);
        for (alg, c) in algorithms {
            let opt = c.optimizer(alg, self.base_seed);
            opt.validate(n, m)
                .map_err(|e| ConfigError::at(format!("algorithms.{alg}"), e.to_string()))?;
            if let Some(p) = c.qp_slack_penalty {
                if !(p > 0.0 && p.is_finite()) {
                    return Err(ConfigError::at(format!("algorithms.{alg}.qp_slack_penalty"), "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Build the environment and reward described by the config.
    pub fn task(&self) -> Result<Task, ConfigError> {
        let env = &self.environment;
        let ov = &env.overrides;
        let field = |e: crate::CctoError| ConfigError::at("environment", e.to_string());
        match env.name.as_str() {
            "linear" => {
                if !ov.is_empty() {
                    return Err(ConfigError::at("environment.overrides", "the linear environment takes no overrides"));
                }
                Task::linear().map_err(field)
            }
            "cartpole" | "cart-pole" => {
                let mut setup = PendulumSetup::cart_pole();
                ov.apply(&mut setup);
                let params: CartPoleParams = merge_physics(CartPoleParams::default(), ov.physics.as_ref())?;
                Task::cart_pole_with(params, &setup).map_err(field)
            }
            "furuta" => {
                let mut setup = PendulumSetup::furuta();
                ov.apply(&mut setup);
                let params: FurutaParams = merge_physics(FurutaParams::default(), ov.physics.as_ref())?;
                Task::furuta_with(params, &setup).map_err(field)
            }
            other => Err(ConfigError::at(
                "environment.name",
                format!("unknown environment '{other}' (expected cartpole, furuta or linear)"),
            )),
        }
    }
}

fn merge_physics<T: Serialize + DeserializeOwned>(defaults: T, overrides: Option<&Map<String, Value>>) -> Result<T, ConfigError> {
    let Some(overrides) = overrides else {
        return Ok(defaults);
    };
    let mut base = match serde_json::to_value(&defaults) {
        Ok(Value::Object(map)) => map,
        _ => unreachable!("physical parameters serialize to an object"),
    };
    for (k, v) in overrides {
        if !base.contains_key(k) {
            let known: Vec<&str> = base.keys().map(String::as_str).collect();
            return Err(ConfigError::at(
                format!("environment.overrides.physics.{k}"),
                format!("unknown parameter (expected one of {})", known.join(", ")),
            ));
        }
        base.insert(k.clone(), v.clone());
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| ConfigError::at("environment.overrides.physics", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"environment": {"name": "linear"}, "algorithms": {"ccto": {}}}"#).unwrap();
        assert_eq!(cfg.trials, 5);
        assert_eq!(cfg.output_dir, PathBuf::from("results"));
        let c = cfg.algorithms.ccto.as_ref().unwrap();
        assert_eq!(c.alpha, 0.1);
        assert_eq!(c.rollouts, 50);
        assert!(cfg.algorithms.ilqg.is_none());
    }

    #[test]
    fn unknown_key_reports_position() {
        let text = "{\n  \"environment\": {\"name\": \"linear\"},\n  \"algorithms\": {\"ccto\": {\"alpah\": 0.5}}\n}";
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert_eq!(err.line, Some(3));
        assert!(err.message.contains("alpah"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let err = ExperimentConfig::from_json(r#"{"environment": {"name": "linear"}, "algorithms": {"ilqg": {"alpha": 1.5}}}"#)
            .unwrap_err();
        assert_eq!(err.field, "algorithms.ilqg");
        let err = ExperimentConfig::from_json(r#"{"environment": {"name": "moon"}, "algorithms": {"ccto": {}}}"#).unwrap_err();
        assert_eq!(err.field, "environment.name");
        let err = ExperimentConfig::from_json(r#"{"environment": {"name": "linear"}, "algorithms": {}}"#).unwrap_err();
        assert_eq!(err.field, "algorithms");
    }

    #[test]
    fn physics_overrides_merge_and_reject_unknown_names() {
        let cfg = ExperimentConfig::from_json(
            r#"{"environment": {"name": "cartpole", "overrides": {"horizon": 40, "physics": {"pole_mass": 0.2}}},
                "algorithms": {"ccto": {"risk": {"state_upper": 0.01, "state_lower": 0.02, "action_upper": 0.01, "action_lower": 0.01}}}}"#,
        )
        .unwrap();
        let task = cfg.task().unwrap();
        assert_eq!(task.env.spec.horizon, 40);
        match task.env.plant {
            crate::env::Plant::CartPole(p) => {
                assert_eq!(p.pole_mass, 0.2);
                assert_eq!(p.cart_mass, CartPoleParams::default().cart_mass);
            }
            _ => panic!("expected a cart-pole"),
        }
        assert_eq!(cfg.algorithms.ccto.unwrap().risk.levels().state_lower, 0.02);

        let err = ExperimentConfig::from_json(
            r#"{"environment": {"name": "cartpole", "overrides": {"physics": {"pole_colour": 1}}}, "algorithms": {"ccto": {}}}"#,
        )
        .unwrap_err();
        assert_eq!(err.field, "environment.overrides.physics.pole_colour");
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ExperimentConfig::from_json(
            r#"{"environment": {"name": "furuta"}, "algorithms": {"ccto": {"iterations": 3}, "ilqg": {"tolerance": 0.5}}, "trials": 2, "base_seed": 9}"#,
        )
        .unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
