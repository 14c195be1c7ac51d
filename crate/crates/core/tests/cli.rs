use std::path::Path;
use std::process::{Command, Output};

fn gridprice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridprice"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario_path() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios/four_area.scenario")
        .display()
        .to_string()
}

#[test]
fn validate_bundled_scenario() {
    let out = gridprice(&["validate", "--scenario", &scenario_path()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("n = 4, m = 4, m_c = 4"), "{text}");
}

#[test]
fn invalid_scenario_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.scenario");
    let text = std::fs::read_to_string(scenario_path())
        .unwrap()
        .replace("damping = [2.0, 2.0, 2.0, 2.0]", "damping = [2.0, 2.0, 0.0, 2.0]");
    std::fs::write(&path, text).unwrap();
    let out = gridprice(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("physical.damping"), "{err}");
}

#[test]
fn run_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let args = ["run", "--scenario", &scenario_path(), "--controller", "internal-model", "--out", out_dir];
    let out = gridprice(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("internal-model.csv")).unwrap();
    // header plus samples at t = 0, 0.1, ..., 40
    assert_eq!(csv.lines().count(), 1 + 401);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("internal-model.report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], true);
    let segs = report["segments"].as_array().unwrap();
    assert!((segs[0]["lambda_target"].as_f64().unwrap() - 66.0 / 73.0).abs() < 1e-15);
    assert!((segs[1]["lambda_target"].as_f64().unwrap() - 69.0 / 73.0).abs() < 1e-15);
    assert!(segs.iter().all(|s| s["target_met"] == true));
    assert!(dir.path().join("internal-model.plots.json").exists());
    assert!(dir.path().join("internal-model.timing.json").exists());

    // a second run reproduces both files byte for byte
    let again = tempfile::tempdir().unwrap();
    let mut args2 = args;
    args2[6] = again.path().to_str().unwrap();
    assert_eq!(gridprice(&args2).status.code(), Some(0));
    for file in ["internal-model.csv", "internal-model.report.json"] {
        assert_eq!(
            std::fs::read(dir.path().join(file)).unwrap(),
            std::fs::read(again.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn zero_horizon_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zero.scenario");
    let text = std::fs::read_to_string(scenario_path()).unwrap();
    let text = text
        .replace("[[events]]\ntime = 1.0\nb = [1.0, 1.25, 1.5, 2.0]\n", "")
        .replace("t_end = 40.0", "t_end = 0.0");
    std::fs::write(&path, text).unwrap();
    let out = gridprice(&["run", "--scenario", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("gradient.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn t_end_override_before_event_is_rejected() {
    let out = gridprice(&["validate", "--t-end", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("events[0].time"));
}

#[test]
fn equilibrium_prints_common_price() {
    let out = gridprice(&["equilibrium", "--controller", "gradient"]);
    assert_eq!(out.status.code(), Some(0));
    let value: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((value["lambda_star"].as_f64().unwrap() - 66.0 / 73.0).abs() < 1e-14);
    assert_eq!(value["v"].as_array().unwrap().len(), 4);
}

#[test]
fn compare_writes_joint_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = gridprice(&["compare", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("compare.report.json")).unwrap()).unwrap();
    assert_eq!(report["gradient_more_oscillatory"], true);
    for name in ["internal-model", "gradient"] {
        assert!(dir.path().join(format!("{name}.csv")).exists());
    }
}
