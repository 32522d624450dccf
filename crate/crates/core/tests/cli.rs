use std::path::PathBuf;
use std::process::{Command, Output};

fn tevc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tevc")).args(args).output().unwrap()
}

fn program(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("programs")
        .join(name)
        .display()
        .to_string()
}

fn scratch(name: &str, contents: &str) -> String {
    let dir = std::env::temp_dir().join(format!("tevc-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn parse_prints_program_and_json() {
    let o = tevc(&["parse", &program("accumulate.tev")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("for i in 0..15"));
    let o = tevc(&["parse", "--json", &program("accumulate.tev")]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["name"], "forward");
}

#[test]
fn syntax_error_exits_1() {
    let f = scratch("bad.tev", "func f(x: tensor<2>) { for i in 0..3 { x = add(x, } return x }");
    assert_eq!(tevc(&["parse", &f]).status.code(), Some(1));
    let f = scratch("shape.tev", "func f(x: tensor<2>, y: tensor<3>) { z = add(x, y) return z }");
    assert_eq!(tevc(&["parse", &f]).status.code(), Some(1));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(tevc(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tevc(&[]).status.code(), Some(1));
    assert_eq!(tevc(&["--help"]).status.code(), Some(0));
}

#[test]
fn analyze_shows_chains() {
    let o = tevc(&["analyze", &program("accumulate.tev")]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("{x, +, a}"), "{text}");
    assert!(text.contains("exit: 15*a + x"), "{text}");
    let o = tevc(&["analyze", "--json", &program("row_sum.tev")]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["tripCount"], 15);
    assert!(v["trace"].as_array().unwrap().iter().all(|e| e["rule"].is_string()));
}

#[test]
fn analyze_exits_2_when_blocked() {
    let f = scratch("square.tev", "func f(v: tensor<2>) { for i in 0..4 { v = mul(v, v) } return v }");
    assert_eq!(tevc(&["analyze", &f]).status.code(), Some(2));
}

#[test]
fn optimize_writes_loop_free_program() {
    let out = std::env::temp_dir().join(format!("tevc-opt-{}.tev", std::process::id()));
    let o = tevc(&["optimize", &program("row_sum.tev"), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(!text.contains("for "));
    tev::ir::parse_program(&text).unwrap();
}

#[test]
fn run_reports_returns_and_headers() {
    let inputs = scratch(
        "inputs.json",
        r#"{"a": {"shape": [2], "data": [1, 1]}, "x": {"shape": [2], "data": [0, 0]}}"#,
    );
    let o = tevc(&["run", &program("accumulate.tev"), "--inputs", &inputs, "--record-headers"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["returns"][0]["data"], serde_json::json!([15.0, 15.0]));
    assert_eq!(v["headers"]["x"].as_array().unwrap().len(), 15);
    let missing = scratch("missing.json", r#"{"a": {"shape": [2], "data": [1, 1]}}"#);
    assert_eq!(tevc(&["run", &program("accumulate.tev"), "--inputs", &missing]).status.code(), Some(1));
}

#[test]
fn verify_passes_and_is_reproducible() {
    let args = ["verify", "--json", "--trials", "30", "--seed", "5", &program("row_sum.tev")];
    let a = tevc(&args);
    assert_eq!(a.status.code(), Some(0));
    let b = tevc(&args);
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["pass"], true);
    assert_eq!(v["compared"], 30);
}

#[test]
fn verify_zero_trials_warns() {
    let o = tevc(&["verify", "--trials", "0", &program("accumulate.tev")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn verify_blocked_program_exits_2() {
    let f = scratch("exp.tev", "func f(v: tensor<2>) { for i in 0..4 { v = exp(v) } return v }");
    let o = tevc(&["verify", &f]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`v`"));
}
