use std::fs;
use std::process::Command;

fn memsync() -> Command {
    Command::new(env!("CARGO_BIN_EXE_memsync"))
}

#[test]
fn fig2_writes_table_and_chart() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("fig2.json");
    fs::write(&config, r#"{"preset": "fig2", "fig2": {"units_min": 3, "units_max": 5}}"#).unwrap();
    let out = dir.path().join("out");
    let status = memsync().arg("fig2").arg("--config").arg(&config).arg("--out").arg(&out).status().unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(out.join("fig2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9);
    assert!(csv.starts_with("series,units,p_theta"));
    let svg = fs::read_to_string(out.join("fig2.svg")).unwrap();
    assert!(svg.contains("unsynchronized") && svg.contains("μs"));
}

#[test]
fn bad_config_exits_nonzero_with_json_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"source": {"h": 1.5}}"#).unwrap();
    let output = memsync().arg("analytic").arg("--config").arg(&config).arg("--out").arg(dir.path()).output().unwrap();
    assert!(!output.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&output.stderr).unwrap();
    assert_eq!(summary["command"], "analytic");
    assert!(summary["errors"][0]["message"].as_str().unwrap().contains("source.h"));
}

#[test]
fn cell_errors_still_write_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    fs::write(&config, r#"{"units": 3}"#).unwrap();
    let output = memsync()
        .args(["analytic", "--mode", "paper_literal", "--decoherence", "linearized", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let csv = fs::read_to_string(dir.path().join("analytic.csv")).unwrap();
    assert!(csv.contains("paper_literal") && csv.contains("linearized"));
    let summary: serde_json::Value = serde_json::from_slice(&output.stderr).unwrap();
    assert_eq!(summary["errors"].as_array().unwrap().len(), 1);
}
