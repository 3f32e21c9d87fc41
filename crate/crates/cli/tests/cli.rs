use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn wls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wls")).args(args).env("WLS_THREADS", "1").output().expect("run wls")
}

fn ok(args: &[&str]) -> Value {
    let out = wls(args);
    assert!(out.status.success(), "wls {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("summary is JSON")
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_dataset_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds.json");
    let csv = dir.path().join("ds.csv");
    ok(&[
        "simulate", "--template", "univariate", "--noise", "additive", "--n", "50", "--m", "500", "--seed", "7",
        "--out", s(&ds), "--csv", s(&csv),
    ]);
    let v = read(&ds);
    assert_eq!(v["seed"], 7);
    assert_eq!(v["design"].as_array().unwrap().len(), 50);
    assert_eq!(v["responses"]["kind"], "samples");
    assert_eq!(v["responses"]["data"][0].as_array().unwrap().len(), 500);
    // truth follows the template marginal N(t, 1 + t²)
    for (row, t) in v["design"].as_array().unwrap().iter().zip(v["truth"].as_array().unwrap()) {
        let x = row[1].as_f64().unwrap();
        assert!((t["mean"][0].as_f64().unwrap() - x).abs() < 1e-12);
        assert!((t["cov"][0][0].as_f64().unwrap() - (1.0 + x * x)).abs() < 1e-12);
    }
    let manifest = read(&dir.path().join("ds.manifest.json"));
    assert_eq!(manifest["format_version"], 1);
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["n"], 50);
    assert!(manifest["version"].is_string());
    let lines = std::fs::read_to_string(&csv).unwrap();
    assert!(lines.starts_with("cell_id,x1,x2,value\n"));
    assert_eq!(lines.lines().count(), 1 + 50 * 500);

    // same seed, same bytes
    let again = dir.path().join("again.json");
    ok(&["simulate", "--n", "50", "--m", "500", "--seed", "7", "--out", s(&again)]);
    assert_eq!(std::fs::read(&ds).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn frechet_fit_then_eval_on_perfect_data_gives_r2_one() {
    let dir = tempfile::tempdir().unwrap();
    // responses that are exact affine images of one sample: quantiles are linear in x
    let base = [-1.3, -0.2, 0.1, 0.8, 2.0];
    let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0, i as f64 * 0.5]).collect();
    let data: Vec<Vec<f64>> = rows.iter().map(|r| base.iter().map(|b| r[1] + (1.0 + 0.1 * r[1]) * b).collect()).collect();
    let ds = dir.path().join("ds.json");
    std::fs::write(
        &ds,
        serde_json::json!({ "format_version": 1, "design": rows, "responses": { "kind": "samples", "data": data } }).to_string(),
    )
    .unwrap();
    let model = dir.path().join("m.json");
    let report = dir.path().join("r.json");
    ok(&["fit", "--data", s(&ds), "--solver", "frechet", "--out", s(&model)]);
    assert_eq!(read(&model)["kind"], "frechet_1d");
    ok(&["eval", "--data", s(&ds), "--model", s(&model), "--out", s(&report)]);
    let r2 = read(&report)["r2"].as_f64().unwrap();
    assert!((r2 - 1.0).abs() < 1e-9, "r2 = {r2}");
}

#[test]
fn oracle_two_by_two() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("p.json");
    std::fs::write(&problem, r#"{"design": [[1.0], [1.0]], "responses": [[[0.0], [2.0]], [[0.0], [2.0]]]}"#).unwrap();
    let out = dir.path().join("o.json");
    ok(&["oracle", "--problem", s(&problem), "--out", s(&out)]);
    let v = read(&out);
    assert!(v["value"].as_f64().unwrap().abs() < 1e-14);
    assert_eq!(v["matching"], serde_json::json!([[0, 1], [0, 1]]));
}

#[test]
fn errors_are_json_envelopes() {
    let dir = tempfile::tempdir().unwrap();
    let out = wls(&["fit", "--data", "/nonexistent/ds.json", "--solver", "gaussian", "--out", s(&dir.path().join("m.json"))]);
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["code"], "E_IO");

    let problem = dir.path().join("p.json");
    let design = vec![vec![1.0]; 5];
    let responses = vec![vec![vec![0.0]]; 5];
    let five = serde_json::json!({ "design": design, "responses": responses });
    std::fs::write(&problem, five.to_string()).unwrap();
    let out = wls(&["oracle", "--problem", s(&problem), "--out", s(&dir.path().join("o.json"))]);
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["code"], "E_LIMIT");
    assert!(!dir.path().join("o.json").exists());
}

#[test]
fn ingest_groups_cells_and_reports_drops() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cells.csv");
    std::fs::write(&csv, "cell_id,x1,x2,value\na,1,0,1.5\na,1,0,2.5\nb,1,1,0.5\na,1,0,3.5\nb,1,1,0.7\nc,1,2,9\n").unwrap();
    let ds = dir.path().join("ds.json");
    ok(&["ingest", "--csv", s(&csv), "--min-count", "2", "--out", s(&ds)]);
    let v = read(&ds);
    assert_eq!(v["responses"]["data"], serde_json::json!([[1.5, 2.5, 3.5], [0.5, 0.7]]));
    let manifest = read(&dir.path().join("ds.manifest.json"));
    assert_eq!(manifest["config"]["report"]["dropped"], serde_json::json!(["c"]));

    std::fs::write(&csv, "cell_id,x1,value\na,1,1.5\na,2,2.5\n").unwrap();
    let out = wls(&["ingest", "--csv", s(&csv), "--out", s(&ds)]);
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["code"], "E_PARSE");
    assert!(v["error"]["message"].as_str().unwrap().contains("line 3"));
}

#[test]
fn gaussian_fit_verify_and_condition() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds.json");
    ok(&["simulate", "--template", "bivariate", "--noise", "rotation_scale2d", "--n", "20", "--exact", "--seed", "3", "--out", s(&ds)]);
    let model = dir.path().join("g.json");
    let summary = ok(&["--verify", "fit", "--data", s(&ds), "--solver", "gaussian", "--out", s(&model)]);
    assert_eq!(summary["verified"], true);
    let report = dir.path().join("r.json");
    ok(&["eval", "--data", s(&ds), "--model", s(&model), "--out", s(&report)]);
    assert!(read(&report)["vs_truth_mean"].as_f64().unwrap() < 0.12);

    // conditioning needs a coefficient cloud
    let uni = dir.path().join("u.json");
    ok(&["simulate", "--n", "30", "--m", "200", "--seed", "5", "--out", s(&uni)]);
    let pm = dir.path().join("pm.json");
    ok(&["fit", "--data", s(&uni), "--solver", "particle", "--particles", "300", "--iters", "300", "--batch", "0", "--seed", "2", "--out", s(&pm)]);
    let query = dir.path().join("q.json");
    std::fs::write(
        &query,
        r#"{"constraints": [{"x": [1.0, -1.0], "lo": -1.3, "hi": -0.7}], "grid": [[1.0, 0.0], [1.0, 1.0]], "levels": [0.5, 0.9], "threshold": 1.0}"#,
    )
    .unwrap();
    let res = dir.path().join("c.json");
    ok(&["condition", "--model", s(&pm), "--query", s(&query), "--out", s(&res)]);
    let v = read(&res);
    assert_eq!(v["total"], 300);
    let kept = v["retained"].as_u64().unwrap();
    assert!(kept > 0 && kept < 300);
    let p = v["probabilities"][1]["probability"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));

    let out = wls(&["condition", "--model", s(&model), "--query", s(&query), "--out", s(&res)]);
    assert!(!out.status.success());
}

#[test]
fn rate_study_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rate.json");
    let csv = dir.path().join("rate.csv");
    ok(&["rate-study", "--noise", "additive", "--n", "10,40", "--seeds", "2", "--seed", "0", "--out", s(&out), "--csv", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("n,seed,error\n"));
    assert_eq!(text.lines().count(), 5);
    assert_eq!(read(&out)["medians"].as_array().unwrap().len(), 2);
}
