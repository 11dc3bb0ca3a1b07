//! End-to-end checks of the command-line interface.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mdlod"))
}

fn write_cross(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("cross.toml");
    std::fs::write(
        &path,
        "domain = [0.0, 0.0, 1.0, 1.0]\ninterfaces = [[[0.5, 0.0], [0.5, 1.0]], [[0.0, 0.5], [1.0, 0.5]]]\n",
    )
    .unwrap();
    path
}

fn write_config(dir: &std::path::Path, variant: &str, coarse: &str, ell: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(
        &path,
        format!(
            r#"
experiment = "cli"
geometry = "cross.toml"
variant = "{variant}"
fine = 8
coarse = {coarse}
ell = {ell}
output = "{}"

[coefficients]
a0 = 1.0
a1 = 1.0
b1 = 1.0

[sources]
f0 = "sin_pi"
f1 = "linear_x2y"
"#,
            dir.join("report.csv").display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn validate_reports_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let geom = write_cross(dir.path());
    let out = bin().arg("validate").arg(&geom).output().unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("4 bulk segment(s)"));
    assert!(text.contains("no violations"));
}

#[test]
fn validate_rejects_bad_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let geom = dir.path().join("bad.toml");
    // Dangling interface endpoint inside the bulk.
    std::fs::write(
        &geom,
        "domain = [0.0, 0.0, 1.0, 1.0]\ninterfaces = [[[0.25, 0.5], [0.75, 0.5]]]\n",
    )
    .unwrap();
    let out = bin().arg("validate").arg(&geom).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("dangle"), "{err}");
}

#[test]
fn solve_writes_report_and_solution() {
    let dir = tempfile::tempdir().unwrap();
    write_cross(dir.path());
    let cfg = write_config(dir.path(), "stabilized", "[2]", "[1]");
    let sol = dir.path().join("solution.csv");
    let out = bin()
        .arg("solve")
        .arg(&cfg)
        .arg("--threads")
        .arg("2")
        .arg("--solution")
        .arg(&sol)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
    assert!(report.starts_with("experiment,H,h,ell,variant"));
    let solution = std::fs::read_to_string(&sol).unwrap();
    assert!(solution.starts_with("x,y,segment,value"));
}

#[test]
fn convergence_prints_eoc_table() {
    let dir = tempfile::tempdir().unwrap();
    write_cross(dir.path());
    let cfg = write_config(dir.path(), "global", "[2, 4]", "[1]");
    let out = bin().arg("convergence").arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("least-squares order"), "{text}");
}

#[test]
fn decay_prints_slope_and_overrides_output() {
    let dir = tempfile::tempdir().unwrap();
    write_cross(dir.path());
    let cfg = write_config(dir.path(), "naive", "[2]", "[1, 2]");
    let alt = dir.path().join("alt.csv");
    let out = bin()
        .arg("decay")
        .arg(&cfg)
        .arg("--out")
        .arg(&alt)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("decay slope per layer"), "{text}");
    assert!(alt.exists());
    assert!(!dir.path().join("report.csv").exists());
}

#[test]
fn missing_config_fails_with_diagnostic() {
    let out = bin().arg("solve").arg("/nonexistent.toml").output().unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
