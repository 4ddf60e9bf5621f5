//! Seeded multi-trial studies and their on-disk artifacts.
//!
//! Trial `i` runs every configured algorithm with seed `base_seed + i`, so
//! the algorithms see the same noise streams. Runs execute concurrently and
//! are assembled in (trial, algorithm) order, so the files do not depend on
//! scheduling.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ConfigError, ExperimentConfig};
use super::{write_file, HarnessError};
use crate::optimizer::{run_algorithm, Algorithm, IterationRecord};
use crate::par::map_indexed;

pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const NOMINAL_FILE: &str = "nominal.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Fixed leading columns of `iterations.csv`. One `nominal_<label>_min`,
/// `nominal_<label>_max` pair follows per constrained direction.
pub const BASE_COLUMNS: [&str; 9] = [
    "trial",
    "iteration",
    "algorithm",
    "mean_reward",
    "std_reward",
    "mu_reg",
    "qp_status",
    "joint_state_violation",
    "joint_action_violation",
];

#[derive(Debug, Clone)]
pub struct TrialRun {
    pub trial: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// Set when the run aborted; `records` then holds the partial trace.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub environment: String,
    pub trials: usize,
    pub base_seed: u64,
    pub state_names: Vec<String>,
    pub action_names: Vec<String>,
    /// One label per nominal range, state directions first.
    pub range_labels: Vec<String>,
    pub runs: Vec<TrialRun>,
}

/// One line of `iterations.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub trial: usize,
    pub iteration: usize,
    pub algorithm: String,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mu_reg: f64,
    pub qp_status: String,
    pub joint_state_violation: f64,
    pub joint_action_violation: f64,
    /// `(min, max)` per range label.
    pub ranges: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub trials: usize,
    /// Mean and population standard deviation over trials of the per-trial
    /// mean total reward.
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_mu_reg: f64,
    pub joint_state_violation: f64,
    pub joint_action_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub selected: Vec<IterationStats>,
    #[serde(rename = "final")]
    pub last: IterationStats,
    /// Mean of `mu_reg` over every recorded iteration and trial.
    pub mean_mu_reg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub trial: usize,
    pub algorithm: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub environment: String,
    pub trials: usize,
    pub base_seed: u64,
    pub algorithms: Vec<AlgorithmSummary>,
    pub failures: Vec<Failure>,
}

/// Run every trial of every configured algorithm.
pub fn run_study(cfg: &ExperimentConfig) -> Result<StudyResult, ConfigError> {
    cfg.validate()?;
    let task = cfg.task()?;
    let algorithms = cfg.algorithms.enabled();
    let jobs = cfg.trials * algorithms.len();
    let runs = map_indexed(jobs, |j| {
        let trial = j / algorithms.len();
        let (algorithm, alg_cfg) = algorithms[j % algorithms.len()];
        let seed = cfg.base_seed.wrapping_add(trial as u64);
        let opt = alg_cfg.optimizer(algorithm, seed);
        let run = match run_algorithm(&task.env, &task.reward, &task.env.spec.constraints, &opt) {
            Ok(out) => TrialRun {
                trial,
                seed,
                algorithm,
                records: out.records,
                converged: out.converged,
                error: None,
            },
            Err(f) => TrialRun {
                trial,
                seed,
                algorithm,
                records: f.records,
                converged: false,
                error: Some(f.error.to_string()),
            },
        };
        match &run.error {
            None => log::info!("trial {trial} {algorithm}: {} records", run.records.len()),
            Some(e) => log::warn!("trial {trial} {algorithm} aborted: {e}"),
        }
        run
    });

    let spec = &task.env.spec;
    let constraints = &spec.constraints;
    let mut range_labels: Vec<String> = constraints
        .state_directions()
        .iter()
        .enumerate()
        .map(|(k, h)| direction_label(h, &spec.state_names, "state", k))
        .collect();
    range_labels.extend(
        constraints
            .action_directions()
            .iter()
            .enumerate()
            .map(|(k, f)| direction_label(f, &spec.action_names, "action", k)),
    );
    Ok(StudyResult {
        environment: spec.name.clone(),
        trials: cfg.trials,
        base_seed: cfg.base_seed,
        state_names: spec.state_names.clone(),
        action_names: spec.action_names.clone(),
        range_labels,
        runs,
    })
}

/// Coordinate name for unit normals, a numbered label otherwise.
fn direction_label(normal: &[f64], names: &[String], kind: &str, k: usize) -> String {
    let nonzero: Vec<usize> = (0..normal.len()).filter(|&i| normal[i] != 0.0).collect();
    match nonzero.as_slice() {
        [i] if normal[*i] == 1.0 && *i < names.len() => names[*i].clone(),
        _ => format!("{kind}_direction{k}"),
    }
}

pub fn header(range_labels: &[String]) -> Vec<String> {
    let mut cols: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    for label in range_labels {
        cols.push(format!("nominal_{label}_min"));
        cols.push(format!("nominal_{label}_max"));
    }
    cols
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

impl StudyResult {
    pub fn rows(&self) -> Vec<IterationRow> {
        let mut rows = Vec::new();
        for run in &self.runs {
            for r in &run.records {
                rows.push(IterationRow {
                    trial: run.trial,
                    iteration: r.iteration,
                    algorithm: run.algorithm.as_str().to_string(),
                    mean_reward: r.mean_reward,
                    std_reward: r.std_reward,
                    mu_reg: r.mu_reg,
                    qp_status: r.qp_status.map_or("none", |s| s.as_str()).to_string(),
                    joint_state_violation: r.violation.joint_state,
                    joint_action_violation: r.violation.joint_action,
                    ranges: r.nominal_ranges.iter().map(|g| (g.min, g.max)).collect(),
                });
            }
        }
        rows
    }

    pub fn failures(&self) -> Vec<Failure> {
        self.runs
            .iter()
            .filter_map(|r| {
                r.error.as_ref().map(|e| Failure {
                    trial: r.trial,
                    algorithm: r.algorithm.as_str().to_string(),
                    error: e.clone(),
                })
            })
            .collect()
    }

    pub fn iterations_csv(&self) -> String {
        let mut w = csv_writer();
        w.write_record(header(&self.range_labels)).expect("in-memory csv");
        for row in self.rows() {
            w.write_record(row.fields()).expect("in-memory csv");
        }
        finish(w)
    }

    /// Every nominal trajectory: one line per (trial, algorithm, iteration, step).
    /// Action cells are empty on the terminal step.
    pub fn nominal_csv(&self) -> String {
        let mut w = csv_writer();
        let mut cols: Vec<String> = ["trial", "algorithm", "iteration", "step"].iter().map(|s| s.to_string()).collect();
        cols.extend(self.state_names.iter().cloned());
        cols.extend(self.action_names.iter().cloned());
        w.write_record(&cols).expect("in-memory csv");
        for run in &self.runs {
            for r in &run.records {
                let nominal = &r.nominal;
                for (t, s) in nominal.states.iter().enumerate() {
                    let mut line = vec![
                        run.trial.to_string(),
                        run.algorithm.as_str().to_string(),
                        r.iteration.to_string(),
                        t.to_string(),
                    ];
                    line.extend(s.iter().map(|v| v.to_string()));
                    match nominal.actions.get(t) {
                        Some(a) => line.extend(a.iter().map(|v| v.to_string())),
                        None => line.extend(self.action_names.iter().map(|_| String::new())),
                    }
                    w.write_record(&line).expect("in-memory csv");
                }
            }
        }
        finish(w)
    }

    pub fn summary(&self) -> StudySummary {
        StudySummary {
            environment: self.environment.clone(),
            trials: self.trials,
            base_seed: self.base_seed,
            algorithms: summarize(&self.rows()),
            failures: self.failures(),
        }
    }

    /// Write `iterations.csv`, `nominal.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        write_file(&dir.join(ITERATIONS_FILE), &self.iterations_csv())?;
        write_file(&dir.join(NOMINAL_FILE), &self.nominal_csv())?;
        let summary = serde_json::to_string_pretty(&self.summary()).expect("summary serializes") + "\n";
        write_file(&dir.join(SUMMARY_FILE), &summary)
    }
}

impl IterationRow {
    pub fn fields(&self) -> Vec<String> {
        let mut out = vec![
            self.trial.to_string(),
            self.iteration.to_string(),
            self.algorithm.clone(),
            self.mean_reward.to_string(),
            self.std_reward.to_string(),
            self.mu_reg.to_string(),
            self.qp_status.clone(),
            self.joint_state_violation.to_string(),
            self.joint_action_violation.to_string(),
        ];
        for (lo, hi) in &self.ranges {
            out.push(lo.to_string());
            out.push(hi.to_string());
        }
        out
    }

    /// Inverse of [`IterationRow::fields`].
    pub fn parse(fields: &[&str], ranges: usize) -> Result<Self, String> {
        if fields.len() != BASE_COLUMNS.len() + 2 * ranges {
            return Err(format!("expected {} fields, found {}", BASE_COLUMNS.len() + 2 * ranges, fields.len()));
        }
        let int = |i: usize| fields[i].parse::<usize>().map_err(|e| format!("{}: {e}", BASE_COLUMNS[i]));
        let real = |i: usize| fields[i].parse::<f64>().map_err(|e| format!("column {}: {e}", i + 1));
        let mut out = Self {
            trial: int(0)?,
            iteration: int(1)?,
            algorithm: fields[2].to_string(),
            mean_reward: real(3)?,
            std_reward: real(4)?,
            mu_reg: real(5)?,
            qp_status: fields[6].to_string(),
            joint_state_violation: real(7)?,
            joint_action_violation: real(8)?,
            ranges: Vec::with_capacity(ranges),
        };
        for k in 0..ranges {
            let i = BASE_COLUMNS.len() + 2 * k;
            out.ranges.push((real(i)?, real(i + 1)?));
        }
        Ok(out)
    }
}

/// First iteration, every multiple of ten after it, and the last one.
pub fn selected_iterations(iterations: &[usize]) -> Vec<usize> {
    let (Some(&first), Some(&last)) = (iterations.iter().min(), iterations.iter().max()) else {
        return Vec::new();
    };
    let mut out = vec![first];
    out.extend(iterations.iter().copied().filter(|&i| i > first && i < last && i % 10 == 0));
    if last != first {
        out.push(last);
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn stats_at(rows: &[&IterationRow], iteration: usize) -> IterationStats {
    let at: Vec<&&IterationRow> = rows.iter().filter(|r| r.iteration == iteration).collect();
    let col = |f: fn(&IterationRow) -> f64| at.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let (mean_reward, std_reward) = mean_std(&col(|r| r.mean_reward));
    IterationStats {
        iteration,
        trials: at.len(),
        mean_reward,
        std_reward,
        mean_mu_reg: mean_std(&col(|r| r.mu_reg)).0,
        joint_state_violation: mean_std(&col(|r| r.joint_state_violation)).0,
        joint_action_violation: mean_std(&col(|r| r.joint_action_violation)).0,
    }
}

/// Per-algorithm statistics across trials, algorithms in first-seen order.
pub fn summarize(rows: &[IterationRow]) -> Vec<AlgorithmSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.algorithm.as_str()) {
            names.push(&r.algorithm);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let mine: Vec<&IterationRow> = rows.iter().filter(|r| r.algorithm == name).collect();
            let mut iterations: Vec<usize> = mine.iter().map(|r| r.iteration).collect();
            iterations.sort_unstable();
            iterations.dedup();
            let selected: Vec<IterationStats> = selected_iterations(&iterations).into_iter().map(|i| stats_at(&mine, i)).collect();
            let last = selected.last().cloned().expect("at least one row");
            let mus: Vec<f64> = mine.iter().map(|r| r.mu_reg).collect();
            AlgorithmSummary {
                algorithm: name.to_string(),
                selected,
                last,
                mean_mu_reg: mean_std(&mus).0,
            }
        })
        .collect()
}
