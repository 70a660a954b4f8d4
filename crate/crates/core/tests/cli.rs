use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_distsub"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn verify_writes_artifacts_and_exits_zero() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["verify", config("two_agents.toml").to_str().unwrap(), "--out"])
        .arg(out.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("summary.json")).unwrap()).unwrap();
    assert!((summary["bound"].as_f64().unwrap() - 80.627419).abs() < 1e-6);
    assert_eq!(summary["violations"], 0);
    assert!(out.path().join("trace.csv").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, seed) in [(&a, "5"), (&b, "6")] {
        let status = bin()
            .args(["run", config("three_agents_cycle.toml").to_str().unwrap(), "--seed", seed, "--out"])
            .arg(dir.path())
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("trace.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
}

#[test]
fn sweep_from_flags() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["sweep", config("two_agents.toml").to_str().unwrap(), "--axis", "Q", "--values", "1,10,inf", "--out"])
        .arg(out.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let table = std::fs::read_to_string(out.path().join("sweep.csv")).unwrap();
    let firsts: Vec<&str> = table.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(firsts, ["Q", "1", "10", "inf"]);
}

#[test]
fn invalid_inputs_exit_one() {
    let out = tempfile::tempdir().unwrap();
    let bad = out.path().join("bad.toml");
    std::fs::write(&bad, "n = 2\nm = 1\nalpha = -1.0\nk_max = 5\n[schedule]\nkind = \"complete\"\n[[objectives]]\nkind = \"zero\"\ndim = 1\n[[objectives]]\nkind = \"zero\"\ndim = 1\n").unwrap();
    let output = bin().arg("run").arg(&bad).arg("--out").arg(out.path()).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("alpha"));

    let output = bin()
        .args(["sweep", config("two_agents.toml").to_str().unwrap(), "--axis", "gamma", "--values", "1", "--out"])
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));

    let output = bin().args(["verify", "/nonexistent/config.toml"]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let output = bin().arg("launch").output().unwrap();
    assert_eq!(output.status.code(), Some(1));
}
