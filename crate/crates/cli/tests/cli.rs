use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ldplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldplab")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

#[test]
fn validate_bundled_harvesting() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = ldplab(&["--out", out.to_str().unwrap(), "model", "validate", "--builtin", "birth_death_harvesting"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("model_validate.json")).unwrap();
    assert!(report.contains("\"config_sha256\""));
    assert!(out.join("timestamp.json").exists());
}

#[test]
fn malformed_json_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", "{\n  \"model\": \"yule\",\n  \"n\": 10,\n  oops\n}");
    let o = ldplab(&["--out", dir.path().join("o").to_str().unwrap(), "simulate", "--config", &cfg]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn invalid_model_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "m.json",
        r#"{"name":"bad","space":{"dim":1,"closed":[{"base":[0],"normal":[1]}]},
            "transitions":[{"gamma":[-1],"rate":"1","kind":"interaction"}]}"#,
    );
    let o = ldplab(&["--out", dir.path().join("o").to_str().unwrap(), "model", "validate", "--config", &cfg]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_file_is_an_io_error() {
    let o = ldplab(&["--out", "/tmp/ldplab-never", "lln", "--config", "/nonexistent/config.json"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn too_few_hits_is_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "mc.json",
        r#"{"method":"monte_carlo","model":"birth_death_immigration","event":{"kind":"terminal","coord":0,"cmp":"ge","threshold":5.0},
            "x0":[1.0],"n":200,"horizon":1.0,"reps":50,"seed":1}"#,
    );
    let o = ldplab(&["--out", dir.path().join("o").to_str().unwrap(), "ldp-rate", "--config", &cfg]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn schema_is_printed() {
    let o = ldplab(&["hj", "solve", "--schema"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["properties"]["lambda"].is_object());
}

#[test]
fn yule_failure_demo_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "d.json", r#"{"replicas": 100000, "n": 100, "segments": 10000, "seed": 3}"#);
    let out = dir.path().join("o");
    let o = ldplab(&["--out", out.to_str().unwrap(), "demo", "yule-failure", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("yule_failure.json")).unwrap()).unwrap();
    assert!((v["report"]["action"].as_f64().unwrap() - 0.5265).abs() < 1e-3);
    assert_eq!(v["report"]["hits"].as_u64(), Some(0));
    assert_eq!(v["provenance"]["seed"].as_u64(), Some(3));
}
