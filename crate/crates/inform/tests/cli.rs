//! End-to-end tests against the built binary: exit codes, report schema,
//! determinism, and file emission.

use std::path::Path;
use std::process::{Command, Output};

fn inform(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inform"))
        .args(args)
        .env_remove("INFORM_MAX_STATES")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Minimal structural validation against the shipped schema: all required
/// keys present, no keys outside the declared properties, types of the
/// scalar fields match.
fn assert_matches_schema(value: &serde_json::Value) {
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../schemas/run_report.schema.json")).unwrap();
    let obj = value.as_object().expect("report is an object");
    let props = schema["properties"].as_object().unwrap();
    for req in schema["required"].as_array().unwrap() {
        assert!(
            obj.contains_key(req.as_str().unwrap()),
            "missing required key {}",
            req
        );
    }
    for key in obj.keys() {
        assert!(props.contains_key(key), "undeclared key {}", key);
    }
    assert_eq!(value["schema_version"], 1);
    assert_eq!(value["tool"], "inform");
    assert!(value["wall_ms"].is_u64());
    let model = value["model"].as_object().unwrap();
    for req in schema["properties"]["model"]["required"].as_array().unwrap() {
        assert!(model.contains_key(req.as_str().unwrap()));
    }
    let hash = model["hash"].as_str().unwrap();
    assert_eq!(hash.len(), 16);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
}

#[test]
fn check_reports_exact_answer() {
    let out = inform(&["check", "sir", "--init", "8,2,0", "--query", "popinc"]);
    let v = stdout_json(&out);
    assert_matches_schema(&v);
    assert_eq!(v["engine"], "exact");
    assert!((v["exact"]["value"].as_f64().unwrap() - 1.0).abs() < 1e-10);
    assert!(v["violation_probability"].as_f64().unwrap().abs() < 1e-10);
    assert!(v["n_states"].as_u64().unwrap() > 1);
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let args = [
        "simulate", "sir", "--init", "8,2,0", "--query", "eoe", "--width", "2", "--seed", "42",
    ];
    let mut a = stdout_json(&inform(&args));
    let mut b = stdout_json(&inform(&args));
    assert_matches_schema(&a);
    a["wall_ms"] = 0.into();
    b["wall_ms"] = 0.into();
    assert_eq!(a, b);
    assert_eq!(a["seed"], 42);
    assert_eq!(a["estimate"]["method"], "clt");
}

#[test]
fn compile_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = inform(&["compile", "sir", "--out", dir.path().to_str().unwrap()]);
    let v = stdout_json(&out);
    assert_matches_schema(&v);
    for ext in ["prism", "props", "scm.json"] {
        let path = dir.path().join(format!("sir.{ext}"));
        assert!(path.exists(), "missing {}", path.display());
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
    }
    // the machine description parses back
    let scm: inform::scm::Scm =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sir.scm.json")).unwrap())
            .unwrap();
    inform::scm::validate_scm(&scm).unwrap();
}

#[test]
fn info_describes_model_file() {
    let model = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/covid_be.cms");
    let out = inform(&["info", model.to_str().unwrap()]);
    let v = stdout_json(&out);
    assert_matches_schema(&v);
    assert_eq!(v["model"]["compartments"], 10);
    assert_eq!(v["edge_details"].as_array().unwrap().len(), 13);
    assert!(v["state_space_estimate"].as_f64().unwrap() > 10.0);
}

#[test]
fn parse_error_exits_one_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.cms");
    std::fs::write(&path, "-meta-\npop x\n").unwrap();
    let out = inform(&["check", path.to_str().unwrap(), "--query", "eoe"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "stderr: {err}");
}

#[test]
fn state_space_cap_exits_two() {
    let out = Command::new(env!("CARGO_BIN_EXE_inform"))
        .args(["check", "sir", "--init", "8,2,0", "--query", "eoe"])
        .env("INFORM_MAX_STATES", "5")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("simulate"), "stderr: {err}");
}

#[test]
fn sample_cap_exits_three() {
    let out = inform(&[
        "simulate", "sir", "--init", "8,2,0", "--query", "eoe", "--width", "0.00001",
        "--max-samples", "500",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sample cap"));
}

#[test]
fn unknown_input_exits_one() {
    let out = inform(&["info", "no-such-model"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn init_length_mismatch_exits_one() {
    let out = inform(&["check", "sir", "--init", "1,2", "--query", "eoe"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("compartments"));
}
