use ccto_web::{chance_margin_json, environments, optimize_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn backoff_matches_normal_quantiles() {
    let r = parse(&chance_margin_json(0.0, 2.0, 5.0, 0.025).unwrap());
    let b = r["backoff"].as_f64().unwrap();
    assert!((b - 2.0 * 1.959963985).abs() < 1e-7, "{b}");
    assert!((r["tightened_bound"].as_f64().unwrap() - (5.0 - b)).abs() < 1e-12);
    assert!((r["margin"].as_f64().unwrap() - (5.0 - b)).abs() < 1e-12);

    let r = parse(&chance_margin_json(1.0, 0.5, 2.0, 0.01).unwrap());
    assert!((r["backoff"].as_f64().unwrap() - 0.5 * 2.326347874).abs() < 1e-7);
}

#[test]
fn half_risk_needs_no_backoff_and_tail_is_exact() {
    let r = parse(&chance_margin_json(3.0, 1.0, 3.0, 0.5).unwrap());
    assert!(r["backoff"].as_f64().unwrap().abs() < 1e-12);
    assert!((r["violation_probability"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    // one sigma above the mean: 1 - Φ(1)
    let r = parse(&chance_margin_json(0.0, 1.0, 1.0, 0.1).unwrap());
    assert!((r["violation_probability"].as_f64().unwrap() - 0.158_655_253_9).abs() < 1e-9);
}

#[test]
fn margin_rejects_bad_input() {
    assert!(chance_margin_json(0.0, -1.0, 1.0, 0.1).is_err());
    assert!(chance_margin_json(0.0, f64::NAN, 1.0, 0.1).is_err());
    assert!(chance_margin_json(0.0, 1.0, 1.0, 0.0).is_err());
}

#[test]
fn optimize_returns_a_full_trajectory() {
    let out = optimize_json(r#"{"environment":"linear","algorithm":"ccto","iterations":3,"rollouts":20}"#).unwrap();
    let r = parse(&out);
    assert_eq!(r["iterations"].as_array().unwrap().len(), 3);
    let states = r["states"].as_array().unwrap();
    let actions = r["actions"].as_array().unwrap();
    assert_eq!(states.len(), actions.len() + 1);
    assert!(!r["state_bounds"].as_array().unwrap().is_empty());
    assert!(r["error"].is_null());
    // same seed, same answer
    let again = optimize_json(r#"{"environment":"linear","algorithm":"ccto","iterations":3,"rollouts":20}"#).unwrap();
    assert_eq!(out, again);
}

#[test]
fn optimize_rejects_bad_requests() {
    assert!(optimize_json(r#"{"environment":"moon","algorithm":"ccto"}"#).is_err());
    assert!(optimize_json(r#"{"environment":"linear","algorithm":"ccto","rollout":5}"#).is_err());
    assert!(optimize_json(r#"{"environment":"linear","algorithm":"ccto","iterations":1000}"#).is_err());
    assert!(optimize_json("not json").is_err());
}

#[test]
fn environment_list_resolves() {
    let names: Vec<String> = serde_json::from_str(&environments()).unwrap();
    for n in names {
        let req = format!(r#"{{"environment":"{n}","algorithm":"ilqg","iterations":1,"rollouts":10}}"#);
        assert!(optimize_json(&req).is_ok(), "{n}");
    }
}
