//! Summary tables over a results directory written by a study.
//!
//! Reads `iterations.csv` and `nominal.csv` and writes `report.md`,
//! `report.csv` and `envelope.csv` next to them. The output depends only on
//! the input files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::study::{summarize, AlgorithmSummary, IterationRow, StudySummary, BASE_COLUMNS, ITERATIONS_FILE, NOMINAL_FILE, SUMMARY_FILE};
use super::{write_file, HarnessError};

pub const REPORT_FILE: &str = "report.md";
pub const TABLE_FILE: &str = "report.csv";
pub const ENVELOPE_FILE: &str = "envelope.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub markdown: String,
    /// Selected-iteration statistics, one line per (algorithm, iteration).
    pub table_csv: String,
    /// Per-step min/max of every nominal coordinate over iterations, per
    /// trial and pooled over trials.
    pub envelope_csv: String,
}

struct IterationData {
    labels: Vec<String>,
    rows: Vec<IterationRow>,
}

fn read(dir: &Path, name: &str) -> Result<String, HarnessError> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes())
}

fn parse_iterations(text: &str) -> Result<IterationData, HarnessError> {
    let bad = |m: String| HarnessError::Data(format!("{ITERATIONS_FILE}: {m}"));
    let mut rdr = reader(text);
    let header: Vec<String> = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
    if header.len() < BASE_COLUMNS.len() || header[..BASE_COLUMNS.len()] != BASE_COLUMNS || (header.len() - BASE_COLUMNS.len()) % 2 != 0 {
        return Err(bad(format!("unexpected header {}", header.join(","))));
    }
    let mut labels = Vec::new();
    for pair in header[BASE_COLUMNS.len()..].chunks(2) {
        let label = pair[0].strip_prefix("nominal_").and_then(|s| s.strip_suffix("_min"));
        match label {
            Some(l) if pair[1] == format!("nominal_{l}_max") => labels.push(l.to_string()),
            _ => return Err(bad(format!("unexpected range columns {},{}", pair[0], pair[1]))),
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let fields: Vec<&str> = rec.iter().collect();
        rows.push(IterationRow::parse(&fields, labels.len()).map_err(|e| bad(format!("line {}: {e}", i + 2)))?);
    }
    if rows.is_empty() {
        return Err(bad("no data rows".into()));
    }
    Ok(IterationData { labels, rows })
}

type Envelope = Vec<(f64, f64)>;

/// `(scope, algorithm, step) → per-coordinate (min, max)`; scope is the
/// trial index, or `None` for the pool over trials.
fn envelopes(text: &str) -> Result<(Vec<String>, BTreeMap<(String, Option<usize>, usize), Envelope>), HarnessError> {
    let bad = |m: String| HarnessError::Data(format!("{NOMINAL_FILE}: {m}"));
    let mut rdr = reader(text);
    let header: Vec<String> = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
    if header.len() < 5 || header[..4] != ["trial", "algorithm", "iteration", "step"] {
        return Err(bad(format!("unexpected header {}", header.join(","))));
    }
    let coords = header[4..].to_vec();
    let mut out: BTreeMap<(String, Option<usize>, usize), Envelope> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        if rec.len() != header.len() {
            return Err(bad(format!("line {line}: expected {} fields", header.len())));
        }
        let trial: usize = rec[0].parse().map_err(|e| bad(format!("line {line}: {e}")))?;
        let step: usize = rec[3].parse().map_err(|e| bad(format!("line {line}: {e}")))?;
        let mut values = Vec::with_capacity(coords.len());
        for cell in rec.iter().skip(4) {
            values.push(if cell.is_empty() {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|e| bad(format!("line {line}: {e}")))?)
            });
        }
        for scope in [Some(trial), None] {
            let env = out
                .entry((rec[1].to_string(), scope, step))
                .or_insert_with(|| vec![(f64::INFINITY, f64::NEG_INFINITY); coords.len()]);
            for (e, v) in env.iter_mut().zip(&values) {
                if let Some(v) = v {
                    e.0 = e.0.min(*v);
                    e.1 = e.1.max(*v);
                }
            }
        }
    }
    Ok((coords, out))
}

fn cell(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn envelope_csv(coords: &[String], env: &BTreeMap<(String, Option<usize>, usize), Envelope>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["scope".to_string(), "algorithm".to_string(), "step".to_string()];
    for c in coords {
        header.push(format!("{c}_min"));
        header.push(format!("{c}_max"));
    }
    w.write_record(&header).expect("in-memory csv");
    // Per-trial scopes first, pooled last, each in algorithm/step order.
    let mut keys: Vec<&(String, Option<usize>, usize)> = env.keys().collect();
    keys.sort_by_key(|(alg, scope, step)| (scope.is_none(), *scope, alg.clone(), *step));
    for key in keys {
        let (alg, scope, step) = key;
        let mut line = vec![scope.map_or("pooled".to_string(), |t| t.to_string()), alg.clone(), step.to_string()];
        for (lo, hi) in &env[key] {
            line.push(cell(*lo));
            line.push(cell(*hi));
        }
        w.write_record(&line).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

fn table_csv(summaries: &[AlgorithmSummary]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record([
        "algorithm",
        "iteration",
        "trials",
        "mean_reward",
        "std_reward",
        "mean_mu_reg",
        "joint_state_violation",
        "joint_action_violation",
    ])
    .expect("in-memory csv");
    for s in summaries {
        for st in &s.selected {
            w.write_record([
                s.algorithm.clone(),
                st.iteration.to_string(),
                st.trials.to_string(),
                st.mean_reward.to_string(),
                st.std_reward.to_string(),
                st.mean_mu_reg.to_string(),
                st.joint_state_violation.to_string(),
                st.joint_action_violation.to_string(),
            ])
            .expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

/// Markdown table with one column per algorithm and one row per iteration.
fn iteration_table(out: &mut String, summaries: &[AlgorithmSummary], cell: impl Fn(&super::study::IterationStats) -> String) {
    let mut iterations: Vec<usize> = summaries.iter().flat_map(|s| s.selected.iter().map(|x| x.iteration)).collect();
    iterations.sort_unstable();
    iterations.dedup();
    let _ = write!(out, "| iteration |");
    for s in summaries {
        let _ = write!(out, " {} |", s.algorithm);
    }
    let _ = write!(out, "\n|---:|");
    for _ in summaries {
        let _ = write!(out, "---:|");
    }
    out.push('\n');
    for it in iterations {
        let _ = write!(out, "| {it} |");
        for s in summaries {
            match s.selected.iter().find(|x| x.iteration == it) {
                Some(st) => {
                    let _ = write!(out, " {} |", cell(st));
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out.push('\n');
}

fn markdown(environment: &str, data: &IterationData, summaries: &[AlgorithmSummary], failures: &[super::study::Failure]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Study report: {environment}\n");
    for s in summaries {
        let trials: std::collections::BTreeSet<usize> = data.rows.iter().filter(|r| r.algorithm == s.algorithm).map(|r| r.trial).collect();
        let _ = writeln!(out, "- {}: {} trials, final iteration {}", s.algorithm, trials.len(), s.last.iteration);
    }
    out.push('\n');

    out.push_str("## Mean total reward (mean ± std over trials)\n\n");
    iteration_table(&mut out, summaries, |st| format!("{:.3} ± {:.3}", st.mean_reward, st.std_reward));

    out.push_str("## Mean regularization\n\n");
    iteration_table(&mut out, summaries, |st| format!("{:.3e}", st.mean_mu_reg));
    out.push_str("| algorithm | mean over all iterations |\n|---|---:|\n");
    for s in summaries {
        let _ = writeln!(out, "| {} | {:.3e} |", s.algorithm, s.mean_mu_reg);
    }
    out.push('\n');

    out.push_str("## Empirical joint violation rate at the final iteration\n\n");
    out.push_str("| algorithm | state | action |\n|---|---:|---:|\n");
    for s in summaries {
        let _ = writeln!(out, "| {} | {:.4} | {:.4} |", s.algorithm, s.last.joint_state_violation, s.last.joint_action_violation);
    }
    out.push('\n');

    if !data.labels.is_empty() {
        out.push_str("## Nominal envelopes over all iterations\n\n| trial | algorithm |");
        for l in &data.labels {
            let _ = write!(out, " {l} min | {l} max |");
        }
        out.push_str("\n|---|---|");
        for _ in &data.labels {
            out.push_str("---:|---:|");
        }
        out.push('\n');
        let mut scopes: BTreeMap<(Option<usize>, String), Vec<(f64, f64)>> = BTreeMap::new();
        for r in &data.rows {
            for scope in [Some(r.trial), None] {
                let e = scopes
                    .entry((scope, r.algorithm.clone()))
                    .or_insert_with(|| vec![(f64::INFINITY, f64::NEG_INFINITY); data.labels.len()]);
                for (e, (lo, hi)) in e.iter_mut().zip(&r.ranges) {
                    e.0 = e.0.min(*lo);
                    e.1 = e.1.max(*hi);
                }
            }
        }
        let mut keys: Vec<&(Option<usize>, String)> = scopes.keys().collect();
        keys.sort_by_key(|(scope, alg)| (scope.is_none(), *scope, alg.clone()));
        for key in keys {
            let scope = key.0.map_or("pooled".to_string(), |t| t.to_string());
            let _ = write!(out, "| {scope} | {} |", key.1);
            for (lo, hi) in &scopes[key] {
                let _ = write!(out, " {lo:.4} | {hi:.4} |");
            }
            out.push('\n');
        }
        out.push('\n');
    }

    if !failures.is_empty() {
        out.push_str("## Aborted runs\n\n");
        for f in failures {
            let _ = writeln!(out, "- trial {} {}: {}", f.trial, f.algorithm, f.error);
        }
        out.push('\n');
    }
    out
}

/// Build the report without touching the filesystem beyond reading `dir`.
pub fn build_report(dir: &Path) -> Result<Report, HarnessError> {
    let data = parse_iterations(&read(dir, ITERATIONS_FILE)?)?;
    let (coords, env) = envelopes(&read(dir, NOMINAL_FILE)?)?;
    let (environment, failures) = match read(dir, SUMMARY_FILE) {
        Ok(text) => {
            let s: StudySummary = serde_json::from_str(&text).map_err(|e| HarnessError::Data(format!("{SUMMARY_FILE}: {e}")))?;
            (s.environment, s.failures)
        }
        Err(_) => ("unknown".to_string(), Vec::new()),
    };
    let summaries = summarize(&data.rows);
    Ok(Report {
        markdown: markdown(&environment, &data, &summaries, &failures),
        table_csv: table_csv(&summaries),
        envelope_csv: envelope_csv(&coords, &env),
    })
}

/// Build the report and write it into `dir`.
pub fn write_report(dir: &Path) -> Result<Report, HarnessError> {
    let report = build_report(dir)?;
    write_file(&dir.join(REPORT_FILE), &report.markdown)?;
    write_file(&dir.join(TABLE_FILE), &report.table_csv)?;
    write_file(&dir.join(ENVELOPE_FILE), &report.envelope_csv)?;
    Ok(report)
}
