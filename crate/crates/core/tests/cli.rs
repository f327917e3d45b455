use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nearstab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nearstab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("record is JSON")
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("_seconds"));
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[test]
fn exit_codes() {
    assert_eq!(nearstab(&["--help"]).status.code(), Some(0));
    assert_eq!(nearstab(&["inner", "--matrix", "grcar"]).status.code(), Some(2));
    assert_eq!(
        nearstab(&["inner", "--matrix", "grcar", "--eps", "1", "--rank", "fixed:0"])
            .status
            .code(),
        Some(2)
    );
    let unknown = nearstab(&["inner", "--matrix", "nope", "--eps", "1"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("nope"));
    let capped = nearstab(&["stabilize", "--matrix", "grcar", "--n", "6", "--eps-max", "0.001"]);
    assert_eq!(capped.status.code(), Some(3));
}

#[test]
fn runs_are_deterministic() {
    let args = ["stabilize", "--matrix", "smoke_like", "--n", "8", "--seed", "4"];
    let mut a = json(&nearstab(&args));
    let mut b = json(&nearstab(&args));
    strip_timing(&mut a);
    strip_timing(&mut b);
    assert_eq!(a, b);
    assert!(a["outer"]["certificate"]["stable"].as_bool().unwrap());
}

#[test]
fn fixed_and_adaptive_rank_both_stabilize() {
    for rank in ["fixed:6", "adaptive"] {
        let r = json(&nearstab(&["stabilize", "--matrix", "illustrative", "--rank", rank]));
        let outer = &r["outer"];
        assert!(outer["final_value"].as_f64().unwrap() <= 1e-8, "{rank}");
        assert!(outer["converged"].as_bool().unwrap(), "{rank}");
        if rank == "fixed:6" {
            assert_eq!(outer["rank_at_star"].as_u64(), Some(6));
        }
    }
}

fn classes(csv_text: &str, set: &str) -> Vec<String> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    rdr.records()
        .map(|r| r.unwrap())
        .filter(|r| &r[0] == set)
        .map(|r| r[3].to_string())
        .collect()
}

#[test]
fn spectrum_classification() {
    // grcar shifted far left is already delta-stable
    let out = nearstab(&["spectrum", "--matrix", "grcar", "--n", "8", "--shift", "10"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let c = classes(&text, "original");
    assert_eq!(c.len(), 8);
    assert!(c.iter().all(|k| k == "green"));

    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let out = nearstab(&[
        "stabilize",
        "--matrix",
        "pentadiagonal",
        "--n",
        "10",
        "--structure",
        "pattern",
        "--out",
        run_s,
        "--write-delta",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["record.json", "outer_history.csv", "delta.mtx"] {
        assert!(run.join(file).exists(), "{file}");
    }
    let record = run.join("record.json");
    let out = nearstab(&["spectrum", "--record", record.to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(classes(&text, "original").iter().any(|k| k == "red"));
    let after = classes(&text, "stabilized");
    assert_eq!(after.len(), 10);
    assert!(after.iter().all(|k| k != "red"));
    delta_matches_record(&run);
}

fn delta_matches_record(run: &Path) {
    let record: Value = serde_json::from_str(&std::fs::read_to_string(run.join("record.json")).unwrap()).unwrap();
    let eps = record["outer"]["eps_star"].as_f64().unwrap();
    let text = std::fs::read_to_string(run.join("delta.mtx")).unwrap();
    let data = nearstab::gallery::parse_matrix_market(&text).unwrap();
    let delta = data.to_dense();
    let norm = nearstab::linalg::frob_norm(delta.as_ref());
    assert!((norm - eps).abs() <= 1e-10 * eps, "{norm} vs {eps}");
    // pentadiagonal pattern: nothing beyond the second off-diagonal
    for &(i, j, _) in &data.entries {
        assert!(i.abs_diff(j) <= 2);
    }
}

#[test]
fn inner_writes_histories() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("inner");
    let out = nearstab(&[
        "inner",
        "--matrix",
        "grcar",
        "--n",
        "10",
        "--eps",
        "0.5",
        "--functional",
        "hermite",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(out_dir.join("inner_history.csv")).unwrap();
    let values: Vec<f64> = rdr.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert!(!values.is_empty());
    assert!(values.windows(2).all(|w| w[1] <= w[0]));
}
