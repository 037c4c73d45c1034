use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sixdma"))
}

const TINY: &str = r#"
seed = 3
realizations = 2
[users]
mean_users = 4
[bo]
init_samples = 3
iterations = 1
restarts = 2
"#;

#[test]
fn validate_prints_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "").unwrap();
    let out = bin().args(["validate", "--config"]).arg(&path).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("min_separation = \"0.0625 rad\""), "{text}");
}

#[test]
fn validate_reports_bad_unit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "[radio]\nwavelength = \"3 parsecs\"\n").unwrap();
    let out = bin().args(["validate", "--config"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("radio.wavelength"));
}

#[test]
fn run_with_overrides_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, TINY).unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["run", "--config"])
        .arg(&path)
        .args(["--seed", "11", "--scheme", "cellfree_isotropic_ula", "--mode", "lmmse"])
        .args(["--sweep", "mean_users=2,4"])
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let lines: Vec<_> = summary.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2.0,cellfree_isotropic_ula,lmmse,"));
}

#[test]
fn oracle_grid_command() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "realizations = 2\n[layout]\nap_positions = [[\"20 m\", \"0 m\"]]\nsurfaces_per_ap = 2\n").unwrap();
    let out = bin().args(["oracle-grid", "--grid", "6", "--config"]).arg(&path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["evaluated"], 15);
}
