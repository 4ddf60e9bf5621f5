use std::path::Path;
use std::process::{Command, Output};

fn ccto(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccto")).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path, out: &Path) -> std::path::PathBuf {
    let text = format!(
        r#"{{
  "environment": {{ "name": "linear" }},
  "algorithms": {{
    "ccto": {{ "alpha": 0.5, "rollouts": 20, "iterations": 2, "risk": 0.05 }},
    "ilqg": {{ "alpha": 0.5, "rollouts": 20, "iterations": 2, "risk": 0.05 }}
  }},
  "trials": 1,
  "base_seed": 4,
  "output_dir": {:?}
}}
"#,
        out.display().to_string()
    );
    let path = dir.join("small.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_writes_one_row_per_iteration_and_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let cfg = small_config(dir.path(), &out);
    let o = ccto(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = std::fs::read_to_string(out.join("iterations.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "trial,iteration,algorithm,mean_reward,std_reward,mu_reg,qp_status,joint_state_violation,\
         joint_action_violation,nominal_position_min,nominal_position_max,nominal_force_min,nominal_force_max"
    );
    assert_eq!(lines.len(), 1 + 2 * 2);
    for alg in ["ccto", "ilqg"] {
        let rows: Vec<&&str> = lines[1..].iter().filter(|l| l.split(',').nth(2) == Some(alg)).collect();
        assert_eq!(rows.len(), 2, "{alg}");
    }
    assert!(lines[1..].iter().filter(|l| l.contains(",ilqg,")).all(|l| l.split(',').nth(6) == Some("none")));
    assert!(out.join("nominal.csv").exists());
    assert!(out.join("summary.json").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &dir.path().join("unused"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = ccto(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["iterations.csv", "nominal.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn trials_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let cfg = small_config(dir.path(), &out);
    let o = ccto(&["run", "--config", cfg.to_str().unwrap(), "--trials", "2"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("iterations.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn report_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let cfg = small_config(dir.path(), &out);
    assert!(ccto(&["run", "--config", cfg.to_str().unwrap()]).status.success());
    let first = ccto(&["report", "--results", out.to_str().unwrap()]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let files: Vec<Vec<u8>> = ["report.md", "report.csv", "envelope.csv"]
        .iter()
        .map(|f| std::fs::read(out.join(f)).unwrap())
        .collect();
    let second = ccto(&["report", "--results", out.to_str().unwrap()]);
    assert_eq!(first.stdout, second.stdout);
    for (f, before) in ["report.md", "report.csv", "envelope.csv"].iter().zip(files) {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), before, "{f}");
    }
    let md = String::from_utf8(first.stdout).unwrap();
    assert!(md.contains("ccto") && md.contains("ilqg"));
}

#[test]
fn validate_reports_unknown_keys_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        "{\n  \"environment\": { \"name\": \"linear\" },\n  \"algorithms\": { \"ccto\": {} },\n  \"trails\": 3\n}\n",
    )
    .unwrap();
    let o = ccto(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4"), "{err}");
    assert!(err.contains("column"), "{err}");
    assert!(err.contains("trails"), "{err}");
}

#[test]
fn validate_rejects_out_of_range_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{ "environment": { "name": "cartpole" }, "algorithms": { "ccto": { "alpha": 1.5 } } }"#).unwrap();
    let o = ccto(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));
}

#[test]
fn shipped_configs_validate() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["cartpole.json", "furuta.json", "linear.json"] {
        let o = ccto(&["validate", "--config", configs.join(name).to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn selftest_passes() {
    let o = ccto(&["selftest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(!text.contains("FAIL"));
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 10);
}

#[test]
fn missing_results_fail_with_runtime_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = ccto(&["report", "--results", dir.path().join("nothing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
