use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn curvrate(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_curvrate")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = curvrate(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<(String, String)>> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines.map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect()).collect()
}

fn field<'a>(row: &'a [(String, String)], key: &str) -> &'a str {
    &row.iter().find(|(k, _)| k == key).unwrap_or_else(|| panic!("no column {key}")).1
}

const SMALL_MOONS: [&str; 6] = ["--seeds", "3", "--epochs", "3", "--label-noise", "0.3"];

#[test]
fn repeated_runs_are_byte_identical_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut args = vec!["twomoons"];
    args.extend(SMALL_MOONS);
    ok(&[&args[..], &["--crr-scale", "0.003", "--out", a.to_str().unwrap(), "--jobs", "1"]].concat());
    ok(&[&args[..], &["--crr-scale", "0.003", "--out", b.to_str().unwrap(), "--jobs", "3"]].concat());
    for f in ["epochs.jsonl", "summary.csv"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
}

#[test]
fn jsonl_records_share_one_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["twomoons"];
    args.extend(SMALL_MOONS);
    args.extend(["--out", dir.path().to_str().unwrap()]);
    ok(&args);
    let keys = ["run_id", "seed", "epoch", "train_loss", "penalty", "test_error", "lambda", "ece"];
    let text = read(dir.path(), "epochs.jsonl");
    assert_eq!(text.lines().count(), 9);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let obj = v.as_object().unwrap();
        assert_eq!(obj.len(), keys.len());
        for k in keys {
            assert!(obj.contains_key(k), "missing {k} in {line}");
        }
    }
    let rows = csv_rows(&read(dir.path(), "summary.csv"));
    assert_eq!(rows.len(), 3);
    for col in ["lambda", "intercept", "r_squared", "mode", "orders_used", "n_excluded", "test_error", "ece"] {
        field(&rows[0], col);
    }
    assert_eq!(field(&rows[0], "run_id"), "twomoons-s0000");
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["twomoons", "--seeds", "1,4", "--epochs", "2", "--band", "0.4,0.7", "--out", a.to_str().unwrap()]);
    let resolved = a.join("config.resolved.json");
    ok(&["twomoons", "--config", resolved.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(read(&a, "epochs.jsonl"), read(&b, "epochs.jsonl"));
    let cfg: Value = serde_json::from_str(&read(&a, "config.resolved.json")).unwrap();
    assert_eq!(cfg["seeds"], serde_json::json!([1, 4]));
    assert_eq!(cfg["eval"]["band"], serde_json::json!([0.4, 0.7]));
    assert_eq!(cfg["train"]["epochs"], serde_json::json!(2));
}

#[test]
fn toml_config_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "seeds = [7]\n[train]\nepochs = 5\nhidden = [8]\n[crr]\nscale = 0.01\norders = [2]\n[moons]\nn_train = 200\nn_test = 100\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    ok(&["twomoons", "--config", cfg.to_str().unwrap(), "--epochs", "2", "--out", out.to_str().unwrap()]);
    let r: Value = serde_json::from_str(&read(&out, "config.resolved.json")).unwrap();
    assert_eq!(r["train"]["epochs"], serde_json::json!(2));
    assert_eq!(r["train"]["hidden"], serde_json::json!([8]));
    assert_eq!(r["moons"]["n_train"], serde_json::json!(200));
    assert_eq!(read(&out, "epochs.jsonl").lines().count(), 2);
    let row = &csv_rows(&read(&out, "summary.csv"))[0];
    assert_eq!(field(row, "mode"), "crr");
    assert_eq!(field(row, "run_id"), "twomoons-s0007");
}

#[test]
fn sweep_rows_carry_axis_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["sweep", "--axis", "crr_orders", "--values", "1;2;1,2;2,3,4;1,2,3,4", "--seeds", "1", "--epochs", "1",
        "--crr-scale", "0.01", "--out", out]);
    let rows = csv_rows(&read(dir.path(), "summary.csv"));
    assert_eq!(rows.len(), 5);
    let values: Vec<&str> = rows.iter().map(|r| field(r, "value")).collect();
    assert_eq!(values, ["1", "2", "1+2", "2+3+4", "1+2+3+4"]);
    assert!(rows.iter().all(|r| field(r, "axis") == "crr_orders"));
    ok(&["sweep", "--axis", "band", "--values", "0.48,0.52;0.45,0.65;0.40,0.70", "--seeds", "1", "--epochs", "1",
        "--out", out]);
    let rows = csv_rows(&read(dir.path(), "summary.csv"));
    assert_eq!(rows.iter().map(|r| field(r, "value")).collect::<Vec<_>>(), ["0.48-0.52", "0.45-0.65", "0.4-0.7"]);
}

#[test]
fn sanity_summary_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["sanity", "--out", dir.path().to_str().unwrap()]);
    let rows = csv_rows(&read(dir.path(), "summary.csv"));
    let fixtures: Vec<&str> = rows.iter().map(|r| field(r, "fixture")).collect();
    assert_eq!(fixtures, ["geometric_1", "geometric_2", "inv_one_minus_x_cubed", "sine", "gaussian"]);
    for r in &rows[..4] {
        assert!(field(r, "error").parse::<f64>().unwrap() < 0.01);
    }
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for args in [
        vec!["sweep", "--axis", "crr_scale", "--values", "", "--out", out],
        vec!["twomoons", "--seeds", "0", "--out", out],
        vec!["twomoons", "--band", "0.7,0.4", "--out", out],
        vec!["twomoons", "--crr-orders", "9", "--crr-scale", "1", "--out", out],
        vec!["image", "--train-path", "/nonexistent/a,/nonexistent/b", "--out", out],
        vec!["twomoons", "--unknown-flag"],
    ] {
        let o = curvrate(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
    }
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepoch = 3\n").unwrap();
    assert_eq!(curvrate(&["twomoons", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn numeric_failures_exit_with_two_and_name_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = curvrate(&["twomoons", "--seeds", "5,6", "--epochs", "1", "--crr-scale", "1e308", "--out",
        dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("twomoons-s000"));
}
