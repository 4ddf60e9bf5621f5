//! Experiment harness: JSON configuration, seeded multi-trial studies,
//! CSV/JSON artifacts, summary reports and a runtime self-test.

pub mod config;
pub mod report;
pub mod selftest;
pub mod study;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{AlgorithmConfig, ConfigError, EnvironmentConfig, ExperimentConfig};
pub use report::{build_report, write_report, Report};
pub use selftest::{run_selftest, CheckResult};
pub use study::{run_study, StudyResult, StudySummary};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed results: {0}")]
    Data(String),

    #[error("{failed} run(s) aborted; partial results were written")]
    Aborted { failed: usize },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

/// Run a study and write its artifacts to `out`.
///
/// Artifacts are written even when some runs abort; the error then reports
/// how many did.
pub fn run_to_dir(cfg: &ExperimentConfig, out: &Path) -> Result<StudyResult, HarnessError> {
    let result = run_study(cfg)?;
    result.write(out)?;
    let failed = result.runs.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        return Err(HarnessError::Aborted { failed });
    }
    Ok(result)
}
