use std::path::PathBuf;
use std::process::{Command, Output};

fn fluidqoe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fluidqoe")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name).to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn selftest_passes() {
    let o = fluidqoe(&["invert-selftest"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["max_error"].as_f64().unwrap() < 1e-6);
}

#[test]
fn overflowing_tuple_exits_two() {
    let o = fluidqoe(&["invert-selftest", "--params", "1,64,64,98.2436"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("OverflowRisk"));
}

#[test]
fn malformed_generator_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"states": 2, "Q": [[-6, 6], [2, -3]], "lambda": [2, 30], "mu": 25}"#).unwrap();
    let o = fluidqoe(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("RowSumViolation") && err.contains("row 1"), "{err}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.json");
    std::fs::write(&path, r#"{"states": 1, "Q": [[0]], "lambda": [2], "mu": 1, "muu": 3}"#).unwrap();
    let o = fluidqoe(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().contains("muu"));
}

#[test]
fn starvation_csv_header() {
    let o = fluidqoe(&["starvation", "--config", &config("ref2state.json"), "--x", "40", "--Z", "500"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,H_11,H_12,H_21,H_22,P_s"));
    assert_eq!(lines.count(), 51);
    assert!(!text.contains('\r'));
}

#[test]
fn startup_csv_header() {
    let o = fluidqoe(&["startup", "--config", &config("ref2state.json"), "--t-grid", "0:5:6"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("t,U_11,U_12,U_21,U_22,mean\n"));
}

#[test]
fn large_tail_is_a_numeric_failure() {
    let o = fluidqoe(&["events", "--config", &config("onoff.json"), "--x", "20", "--jmax", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("TailTooLarge"));
}

#[test]
fn events_json_shape() {
    let o = fluidqoe(&["events", "--config", &config("onoff.json"), "--jmax", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["pmf"].as_array().unwrap().len(), 4);
    assert!(v["tail"].as_f64().unwrap() < 0.05);
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_fluidqoe"))
        .arg("invert-selftest")
        .env("FLUIDQOE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(fluidqoe(&["starvation"]).status.code(), Some(1));
    assert_eq!(fluidqoe(&["--help"]).status.code(), Some(0));
}

#[test]
fn compare_writes_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp.csv");
    let o = fluidqoe(&[
        "compare", "--scenario", &config("scenario.json"), "--weights", "1,0.1,1", "--Z-grid", "50:1000:20", "--x", "20",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cmp.csv.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["Z_star"].as_f64(), Some(300.0));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cmp.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "compare");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}
