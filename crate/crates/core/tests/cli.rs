use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const CANTOR: &str = r#"{
  "dimension": 1,
  "alphabet_size": 2,
  "domain": {"min": [0], "max": [1]},
  "maps": [{"components": ["x1/3"]}, {"components": ["x1/3 + 2/3"]}],
  "measure": {"probabilities": [0.5, 0.5]}
}"#;

fn ifsdim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifsdim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON report on stdout")
}

#[test]
fn dim_sing_on_cantor_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cantor.json", CANTOR);
    let out = ifsdim(&["dim-sing", "--config", &cfg, "--depth", "10", "--tol", "1e-6"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let s = v["result"]["estimate"]["s_star"].as_f64().unwrap();
    assert!((s - 2f64.ln() / 3f64.ln()).abs() < 1e-6);
    assert_eq!(v["tool"], "ifsdim");
    assert_eq!(v["command"], "dim-sing");
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    assert!(v["version"].is_string() && v["seed"].is_u64());
}

#[test]
fn single_map_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"dimension": 1, "alphabet_size": 1, "domain": {"min": [0], "max": [1]},
        "maps": [{"components": ["x1/2"]}]}"#;
    let cfg = write(dir.path(), "one.json", text);
    let out = ifsdim(&["dim-sing", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alphabet must have at least 2 symbols"));
}

#[test]
fn unknown_key_reports_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.json",
        &CANTOR.replace("\"max\": [1]", "\"max\": [1], \"step\": 2"),
    );
    let out = ifsdim(&["dim-sing", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("domain") && err.contains("step"), "{err}");
}

#[test]
fn audit_rejects_delta_above_radius() {
    let out = ifsdim(&["audit-gtc", "--system", "gtc_family", "--delta", "0.75"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta"));
}

#[test]
fn lyapunov_needs_a_measure() {
    let out = ifsdim(&["dim-lyap", "--system", "cantor4"]);
    assert_eq!(out.status.code(), Some(0));
    let out = ifsdim(&["dim-lyap", "--system", "gtc_family"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn enumeration_budget_has_its_own_status() {
    let out = ifsdim(&["dim-sing", "--system", "cantor", "--depth", "40"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn props_pass() {
    let out = ifsdim(&["props", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["result"]["pass"], true);
    assert_eq!(v["result"]["suites"].as_array().unwrap().len(), 7);
}

#[test]
fn check_gtc_reports_failures_without_failing() {
    let out = ifsdim(&["check-gtc", "--system", "bad_ratio"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["result"]["overall"], false);
    assert!((v["result"]["ratio_value"].as_f64().unwrap() - 1.1).abs() < 1e-12);
}

/// Runs a command into files and returns (json, csv) bytes.
fn run_to_files(dir: &Path, tag: &str, args: &[&str]) -> (Vec<u8>, Vec<u8>) {
    let out_path = dir.join(format!("{tag}.json"));
    let csv_path = dir.join(format!("{tag}.csv"));
    let mut all: Vec<&str> = args.to_vec();
    let (o, c) = (out_path.to_str().unwrap().to_string(), csv_path.to_str().unwrap().to_string());
    all.extend(["--out", &o, "--csv", &c]);
    let out = ifsdim(&all);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    (std::fs::read(out_path).unwrap(), std::fs::read(csv_path).unwrap_or_default())
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let commands: [&[&str]; 7] = [
        &["dim-sing", "--system", "nonlinear_triangular", "--depth", "8"],
        &[
            "dim-lyap",
            "--system",
            "nonlinear_triangular",
            "--samples",
            "2000",
            "--seed",
            "5",
        ],
        &[
            "dim-box",
            "--system",
            "triangular_affine",
            "--samples",
            "100000",
            "--seed",
            "5",
        ],
        &["check-gtc", "--system", "cantor4"],
        &["audit-gtc", "--system", "gtc_family", "--samples", "20000"],
        &["survey", "--system", "cantor_family", "--samples", "50000", "--depth", "8"],
        &["props", "--samples", "200", "--seed", "8"],
    ];
    for (k, args) in commands.iter().enumerate() {
        let mut first = None;
        for threads in ["1", "1", "4"] {
            let mut a = args.to_vec();
            a.extend(["--threads", threads]);
            let got = run_to_files(dir.path(), &format!("{k}-{threads}"), &a);
            match &first {
                None => first = Some(got),
                Some(f) => assert!(f == &got, "{args:?} differs with --threads {threads}"),
            }
        }
    }
}
