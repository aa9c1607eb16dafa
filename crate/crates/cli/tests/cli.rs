use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn riskreach(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskreach")).args(args).output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_always_compensate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.jsonl");
    let cfg = dir.path().join("a.config.json");
    let o = riskreach(&["simulate", "--agent", "always-ha2", "--seed", "1", "--out", path_str(&out), "--config-out", path_str(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 100);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["human_action"], "HA2");
        assert_eq!(v["success"], true);
    }
    let config: Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    assert_eq!(config["levels"], serde_json::json!([0.1, 0.3, 0.5, 0.7, 0.9]));
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("{i}.jsonl"));
            let o = riskreach(&["simulate", "--agent", "cpt", "--theta", "0.67,0.53,1.30,9.21", "--order", "random", "--seed", "4", "--out", path_str(&out)]);
            assert!(o.status.success());
            std::fs::read(&out).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let stdout = riskreach(&["simulate", "--agent", "cpt", "--theta", "0.67,0.53,1.30,9.21", "--order", "random", "--seed", "4"]);
    assert_eq!(stdout.stdout, runs[0]);
}

#[test]
fn invalid_agent_spec_is_a_usage_error() {
    for args in [
        vec!["simulate", "--agent", "cpt"],
        vec!["simulate", "--agent", "cpt", "--theta", "1,2"],
        vec!["simulate", "--agent", "threshold", "--theta", "1.5"],
        vec!["simulate", "--agent", "telepathic"],
        vec!["simulate", "--agent", "always-ha1", "--order", "sideways"],
    ] {
        let o = riskreach(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn fit_all_compensate_log_caps_intercept() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("p08.jsonl");
    let out = dir.path().join("fit.json");
    assert!(riskreach(&["simulate", "--agent", "always-ha2", "--participant", "P08", "--out", path_str(&log)]).status.success());
    let o = riskreach(&["fit", "--in", path_str(&log), "--out", path_str(&out), "--chains", "2", "--warmup", "300", "--samples", "300"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let p = &v[0];
    assert_eq!(p["participant_id"], "P08");
    assert_eq!(p["blr_map"]["beta0"], 10.0);
    assert_eq!(p["cluster"], "always_compensate");
    assert!(p["cpt_fit"]["params"]["c"].as_f64().unwrap() <= 0.05);
    assert_eq!(p["empirical_p2"].as_array().unwrap().len(), 10);
    assert_eq!(p["blr_posterior"]["chains"], 2);
}

#[test]
fn fit_reports_empty_and_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = riskreach(&["fit", "--in", path_str(&empty), "--chains", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no trials"));

    let good = riskreach(&["simulate", "--agent", "always-ha1", "--seed", "2"]).stdout;
    let good = String::from_utf8(good).unwrap();
    let lines: Vec<&str> = good.lines().collect();
    let text = format!("{}\n{}\n{{\"participant_id\": 3}}\n", lines[0], lines[1]);
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, text).unwrap();
    let o = riskreach(&["fit", "--in", path_str(&bad), "--chains", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn analyze_shows_rising_compensation_for_a_steep_agent() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("p06.jsonl");
    let cfg = dir.path().join("big.json");
    std::fs::write(&cfg, r#"{"successes_per_block": 200, "rounds": 1}"#).unwrap();
    let o = riskreach(&[
        "simulate", "--agent", "cpt", "--theta", "0.67,0.53,1.30,9.21", "--seed", "6", "--config", path_str(&cfg), "--out", path_str(&log),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = riskreach(&["analyze", "--in", path_str(&log), "--json"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let p2: Vec<f64> = v[0]["empirical_p2"].as_array().unwrap().iter().map(|e| e["p2"].as_f64().unwrap()).collect();
    assert_eq!(p2.len(), 5);
    assert!(p2[4] - p2[0] > 0.5, "{p2:?}");
    assert!(p2.windows(2).all(|w| w[1] >= w[0] - 0.05), "{p2:?}");

    let text = riskreach(&["analyze", "--in", path_str(&log)]);
    let table = String::from_utf8(text.stdout).unwrap();
    assert!(table.starts_with("participant_id\tround\tp_r\ttrials\tp2\n"));
    assert_eq!(table.lines().count(), 6);
}

#[test]
fn curve_csv_output() {
    let o = riskreach(&["curve", "--model", "blr", "--theta", "0,0", "--points", "11"]);
    assert!(o.status.success());
    let csv = String::from_utf8(o.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("p_r,p2"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| r.ends_with(",0.5")));
    assert_eq!(rows[0], "0,0.5");
    assert_eq!(rows[10], "1,0.5");

    let o = riskreach(&["curve", "--model", "cpt", "--theta", "1.61,1.17,1.16,1.76", "--points", "3"]);
    let csv = String::from_utf8(o.stdout).unwrap();
    let mid: f64 = csv.lines().nth(2).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((mid - 0.44985568860374800292).abs() < 1e-12);
    assert_eq!(riskreach(&["curve", "--model", "cpt", "--theta", "1,2"]).status.code(), Some(2));
}
