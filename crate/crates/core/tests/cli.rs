//! End-to-end runs of the `evgrid` binary.

use std::path::Path;
use std::process::Command;

fn evgrid() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evgrid"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn baseline_only_run_writes_baseline_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = evgrid()
        .args(["run", "--scenarios", "S0", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for f in ["violations.csv", "metrics.csv", "trace_S0.csv", "summary.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(!out.join("trace_S1.csv").exists());
    let violations = std::fs::read_to_string(out.join("violations.csv")).unwrap();
    assert_eq!(violations.lines().count(), 1 + 5);
}

#[test]
fn missing_prices_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "prices = \"no_such_prices.csv\"\n");
    let output = evgrid()
        .args(["run", "--scenarios", "S0", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("no_such_prices.csv"), "stderr: {stderr}");
}

#[test]
fn config_schema_violations_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[scenarios.S2]\nv2g_share = 1.5\n");
    let output = evgrid()
        .args(["run", "--scenarios", "S2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("v2g_share"));

    let cfg = write_config(dir.path(), "unknown_key = 3\n");
    let output = evgrid().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!output.status.success());
}

#[test]
fn exported_inputs_reproduce_the_bundled_run() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("inputs");
    let st = evgrid().args(["export-inputs", "--out"]).arg(&inputs).status().unwrap();
    assert!(st.success());
    let points = std::fs::read_to_string(inputs.join("points.toml")).unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "network = \"inputs/network.json\"\nprices = \"inputs/prices.csv\"\nsessions = \"inputs/sessions.csv\"\n\
             modelled_feeder = {{ lines = [[1, 2], [2, 3], [3, 4], [4, 5], [5, 6], [6, 7]], buses = [2, 3, 4, 5, 6, 7] }}\n{points}"
        ),
    );
    let run = |config: Option<&Path>, out: &Path| {
        let mut cmd = evgrid();
        cmd.args(["run", "--scenarios", "S0,S2", "--out"]).arg(out);
        if let Some(c) = config {
            cmd.arg("--config").arg(c);
        }
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run(None, &dir.path().join("a"));
    run(Some(&cfg), &dir.path().join("b"));
    let a = std::fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(a, b);
}
