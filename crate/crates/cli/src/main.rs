//! `ccto`: run seeded CCTO / iLQG studies, validate configs, build reports.
//!
//! Exit codes: 0 success, 1 runtime failure (partial results are kept),
//! 2 invalid configuration or usage. Log verbosity comes from `CCTO_LOG`
//! (`error`, `warn`, `info`, `debug`, `trace`; default `warn`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ccto::harness::{self, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "ccto", version, about = "Chance-constrained trajectory optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of every configured algorithm and write CSV/JSON results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the trial count from the config.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the output directory from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file against the schema without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize a results directory into report.md, report.csv and envelope.csv.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
    /// Compare library routines against independent reference computations.
    Selftest,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CCTO_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, trials, out } => run(config, trials, out),
        Command::Validate { config } => validate(config),
        Command::Report { results } => report(results),
        Command::Selftest => selftest(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, HarnessError> {
    ExperimentConfig::load(path).map_err(|e| {
        let mut e = e;
        e.message = format!("{}: {}", path.display(), e.message);
        HarnessError::Config(e)
    })
}

fn run(config: PathBuf, trials: Option<usize>, out: Option<PathBuf>) -> Result<ExitCode, HarnessError> {
    let mut cfg = load(&config)?;
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    let result = harness::run_to_dir(&cfg, &dir)?;
    let summary = result.summary();
    println!("{} trials on {}, results in {}", summary.trials, summary.environment, dir.display());
    for a in &summary.algorithms {
        println!(
            "{:>5}  iteration {:>3}  reward {:.3} ± {:.3}  mean mu {:.3e}  joint violation state {:.4} action {:.4}",
            a.algorithm,
            a.last.iteration,
            a.last.mean_reward,
            a.last.std_reward,
            a.mean_mu_reg,
            a.last.joint_state_violation,
            a.last.joint_action_violation
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(config: PathBuf) -> Result<ExitCode, HarnessError> {
    let cfg = load(&config)?;
    let algorithms: Vec<String> = cfg.algorithms.enabled().iter().map(|(a, _)| a.to_string()).collect();
    println!(
        "ok: environment {}, algorithms {}, {} trials from seed {}",
        cfg.environment.name,
        algorithms.join(", "),
        cfg.trials,
        cfg.base_seed
    );
    Ok(ExitCode::SUCCESS)
}

fn report(results: PathBuf) -> Result<ExitCode, HarnessError> {
    let report = harness::write_report(&results)?;
    print!("{}", report.markdown);
    Ok(ExitCode::SUCCESS)
}

fn selftest() -> Result<ExitCode, HarnessError> {
    let results = harness::run_selftest();
    let mut failed = 0;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        failed += usize::from(!r.passed);
    }
    println!("{} of {} checks passed", results.len() - failed, results.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
