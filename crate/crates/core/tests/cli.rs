use std::path::Path;
use std::process::{Command, Output};

fn model(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("models")
        .join(format!("{name}.model"));
    p.display().to_string()
}

fn ksymp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ksymp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn derive_prints_field_equations() {
    let out = ksymp(&["derive", &model("harmonic")]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("model: k = 2, n = 1\n"));
    assert!(text.contains("EL[1]: d/dt1(v1_1) + d/dt2(v1_2) + 2*q1 = 0\n"));
    assert!(text.contains("FL: p2_1 = v1_2\n"));
    assert!(text.contains("Hessian[v1_1]: 1, 0\n"));
}

#[test]
fn integrate_writes_both_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = ksymp(&[
        "integrate",
        &model("harmonic"),
        "--grid",
        "t1=0:0.2:0.05,t2=0:0.2:0.05",
        "--out",
        path_str(&out_dir),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(out_dir.join("section.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t1,t2,q1,v1_1,v1_2"));
    assert_eq!(lines.count(), 25);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("section.json")).unwrap())
            .unwrap();
    let meta = &json["metadata"];
    assert!(meta["path_independence"].as_f64().unwrap() < 1e-9);
    assert!(meta["max_error_exact"].as_f64().unwrap() < 1e-6);
}

#[test]
fn integrate_format_selects_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = ksymp(&[
        "integrate",
        &model("free"),
        "--grid",
        "t1=0:0.1:0.05,t2=0:0.1:0.05",
        "--out",
        path_str(dir.path()),
        "--format",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("section.json").exists());
    assert!(!dir.path().join("section.csv").exists());
}

#[test]
fn verify_exit_codes() {
    let pass = ksymp(&["verify", &model("harmonic"), "--samples", "10"]);
    assert_eq!(pass.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&pass.stdout).unwrap();
    assert_eq!(report["pass"], serde_json::Value::Bool(true));

    let fail = ksymp(&["verify", &model("sine_gordon"), "--samples", "10"]);
    assert_eq!(fail.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&fail.stdout).unwrap();
    assert_eq!(report["first_failure"], "integration_path_independence");
}

#[test]
fn singular_model_takes_constraint_pathway() {
    let out = ksymp(&["verify", &model("half_v11sq"), "--samples", "10"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let out = ksymp(&["constraints", &model("affine")]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        report["final_constraints"],
        serde_json::json!(["p1_1 - 1", "p2_1"])
    );
}

#[test]
fn usage_errors_exit_two() {
    let free = model("free");
    let cases: [&[&str]; 4] = [
        &["check", &free, "--bogus"],
        &["check", &free, "--samples", "0"],
        &["derive", "/nonexistent/model.model"],
        &["frobnicate"],
    ];
    for args in cases {
        let out = ksymp(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn malformed_model_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.model");
    std::fs::write(&path, "k = 1\nn = 1\nlagrangian = v1_1 *\n").unwrap();
    let out = ksymp(&["derive", path_str(&path)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("bad.model:3:"), "{err}");
}

#[test]
fn thread_count_does_not_change_output() {
    let coupled = model("coupled");
    let args = ["check", coupled.as_str(), "--samples", "30"];
    let one = Command::new(env!("CARGO_BIN_EXE_ksymp"))
        .args(args)
        .env("KSYMP_THREADS", "1")
        .output()
        .unwrap();
    let four = Command::new(env!("CARGO_BIN_EXE_ksymp"))
        .args(args)
        .env("KSYMP_THREADS", "4")
        .output()
        .unwrap();
    assert_eq!(one.stdout, four.stdout);
    let bad = Command::new(env!("CARGO_BIN_EXE_ksymp"))
        .args(args)
        .env("KSYMP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
