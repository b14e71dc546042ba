use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn lab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_higgslab"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn higgslab")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn smoke_run_writes_outputs_and_is_deterministic() {
    let cfg = configs().join("smoke.toml");
    let cfg = cfg.to_str().unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = lab(d.path(), &["--check", "run", "--config", cfg]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trajectory.csv", "report.json", "metadata.json", "snapshots/initial.bin", "snapshots/final.bin"] {
        assert!(a.path().join(f).exists(), "missing {f}");
    }
    let ra = std::fs::read(a.path().join("report.json")).unwrap();
    let rb = std::fs::read(b.path().join("report.json")).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(
        std::fs::read(a.path().join("snapshots/final.bin")).unwrap(),
        std::fs::read(b.path().join("snapshots/final.bin")).unwrap()
    );
    let report: serde_json::Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report["all_pass"], true);
    assert!(report["ymh_final"].as_f64().unwrap() < report["ymh_initial"].as_f64().unwrap());
}

#[test]
fn zero_pair_classifies_as_critical_semistable() {
    let d = tempfile::tempdir().unwrap();
    let cfg = configs().join("zero.toml");
    let o = lab(d.path(), &["--check", "run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let snap = d.path().join("snapshots/final.bin");
    let o = lab(d.path(), &["--check", "classify", "--snapshot", snap.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("classify_report.json")).unwrap()).unwrap();
    assert_eq!(rep["critical"]["critical"], true);
    assert_eq!(rep["critical"]["hn_type"]["mu"], serde_json::json!([[0, 1], [0, 1]]));
}

#[test]
fn sandbox_suite_passes_with_check() {
    let d = tempfile::tempdir().unwrap();
    let o = lab(d.path(), &["--check", "sandbox", "--trials", "10"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.path().join("sandbox_report.json").exists());
}

#[test]
fn errors_exit_2_with_json_diagnostic() {
    let d = tempfile::tempdir().unwrap();
    let o = lab(d.path(), &["run", "--config", "/nonexistent/config.toml"]);
    assert_eq!(code(&o), 2);
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line = stderr.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(line).expect("JSON diagnostic");
    assert!(v["message"].as_str().unwrap().contains("config.toml"));

    let bad = d.path().join("bad.toml");
    let text = std::fs::read_to_string(configs().join("smoke.toml")).unwrap().replace("N = 16", "N = 3");
    std::fs::write(&bad, text).unwrap();
    let o = lab(d.path(), &["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn loja_on_a_short_trajectory_is_inconclusive() {
    let d = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.toml");
    assert_eq!(code(&lab(d.path(), &["run", "--config", cfg.to_str().unwrap()])), 0);
    let csv = d.path().join("trajectory.csv");
    let o = lab(d.path(), &["loja", "--trajectory", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}
