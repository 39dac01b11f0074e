use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_faas-sim"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("faas-sim-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn coldstart_prints_both_backends() {
    let out = scratch("coldstart");
    let res = bin().args(["--seed", "3", "--out"]).arg(&out).arg("coldstart").output().unwrap();
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.contains("kernel:") && text.contains("bypass:"), "{text}");
    assert!(out.join("coldstart.json").exists());
    std::fs::remove_dir_all(out).unwrap();
}

#[test]
fn missing_config_is_a_json_error() {
    let res = bin().args(["--config", "/definitely/not/here.json", "sequential"]).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8(res.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "io");
}

#[test]
fn sequential_writes_trace() {
    let out = scratch("seq");
    let trace = out.join("trace.csv");
    let res = bin()
        .args(["--seed", "5", "--out"])
        .arg(&out)
        .arg("--trace")
        .arg(&trace)
        .arg("sequential")
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(&trace).unwrap();
    assert!(csv.lines().count() > 1);
    std::fs::remove_dir_all(out).unwrap();
}
