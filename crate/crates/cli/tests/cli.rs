use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn poolsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poolsel")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = poolsel(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulated dataset with the default design at the given size.
fn simulate(dir: &Path, name: &str, n: usize, pool_size: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    ok(&[
        "simulate",
        "--n",
        &n.to_string(),
        "--pool-size",
        &pool_size.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        path_str(&out),
    ]);
    out
}

#[test]
fn simulate_writes_pools_truth_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let args = ["simulate", "--n", "6", "--theta", "0,1,1", "--pool-size", "3", "--se", "1", "--sp", "1"];
    ok(&[&args[..], &["--out", path_str(&data)]].concat());

    let mut rows = csv::Reader::from_path(&data).unwrap();
    assert_eq!(rows.headers().unwrap().iter().collect::<Vec<_>>(), ["pool_id", "z", "x1", "x2"]);
    let records: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    let truth: Vec<u8> = csv::Reader::from_path(dir.path().join("d.truth.csv"))
        .unwrap()
        .records()
        .map(|r| r.unwrap()[1].parse().unwrap())
        .collect();
    assert_eq!(records.len(), 6);
    assert_eq!(truth.len(), 6);
    let pools: Vec<&str> = records.iter().map(|r| &r[0]).collect();
    assert_eq!(pools, ["1", "1", "1", "2", "2", "2"]);
    // a perfect assay reports the pool maximum of the true statuses
    for (k, chunk) in records.chunks(3).enumerate() {
        let z: u8 = chunk[0][1].parse().unwrap();
        assert_eq!(z, *truth[3 * k..3 * k + 3].iter().max().unwrap());
    }

    let manifest = read_json(&dir.path().join("d.manifest.json"));
    assert_eq!(manifest["schema"], "poolsel.manifest/1");
    assert_eq!(manifest["outputs"].as_object().unwrap().len(), 2);
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a.csv", 200, 2, 7);
    let b = simulate(dir.path(), "b.csv", 200, 2, 7);
    let c = simulate(dir.path(), "c.csv", 200, 2, 8);
    let digest = |p: &Path| {
        let m = read_json(&p.with_extension("manifest.json"));
        m["outputs"][path_str(p)].as_str().unwrap().to_string()
    };
    assert_eq!(digest(&a), digest(&b));
    assert_ne!(digest(&a), digest(&c));
}

#[test]
fn usage_and_io_errors_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let missing = poolsel(&["infer", "--data", "/nonexistent/data.csv", "--out", path_str(&out)]);
    assert_eq!(missing.status.code(), Some(3));

    let data = simulate(dir.path(), "d.csv", 100, 1, 1);
    let bad_level = poolsel(&["infer", "--data", path_str(&data), "--level", "1.5", "--out", path_str(&out)]);
    assert_eq!(bad_level.status.code(), Some(2));
    let bad_penalty = poolsel(&["infer", "--data", path_str(&data), "--lambda", "-1", "--out", path_str(&out)]);
    assert_eq!(bad_penalty.status.code(), Some(2));
    let bad_theta = poolsel(&["simulate", "--theta", "0,1,1", "--p", "1", "--out", path_str(&data)]);
    assert_eq!(bad_theta.status.code(), Some(2));
}

#[test]
fn infer_with_aic_matches_explicit_penalty() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d.csv", 1000, 2, 3);
    let auto = dir.path().join("auto.json");
    ok(&["infer", "--data", path_str(&data), "--lambda", "aic", "--out", path_str(&auto)]);
    let auto = read_json(&auto);
    assert_eq!(auto["schema"], "poolsel.infer/1");
    let chosen = auto["penalty_choice"]["chosen"].as_f64().unwrap();
    assert_eq!(auto["lambda"].as_f64().unwrap(), chosen);

    let fixed = dir.path().join("fixed.json");
    ok(&["infer", "--data", path_str(&data), "--lambda", &format!("{chosen:?}"), "--out", path_str(&fixed)]);
    let fixed = read_json(&fixed);
    assert_eq!(fixed["selected"], auto["selected"]);
    assert_eq!(fixed["theta_hat"], auto["theta_hat"]);
    assert_eq!(fixed["methods"], auto["methods"]);

    let methods = auto["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 3);
    let selected = auto["selected"].as_array().unwrap().len();
    let selective = methods.iter().find(|m| m["method"] == "selective").unwrap();
    if selective["error"].is_null() {
        for row in selective["coefficients"].as_array().unwrap() {
            assert!(row["lower"].as_f64().unwrap() <= row["point"].as_f64().unwrap());
            assert!(row["point"].as_f64().unwrap() <= row["upper"].as_f64().unwrap());
        }
        assert_eq!(selective["coefficients"].as_array().unwrap().len(), selected);
    }
}

#[test]
fn small_study_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, sub: &str| {
        let out = dir.path().join(sub);
        ok(&[
            "--threads",
            threads,
            "study",
            "--preset",
            "table1",
            "--replicates",
            "6",
            "--pool-sizes",
            "2",
            "--grid-points",
            "5",
            "--seed",
            "11",
            "--out-dir",
            path_str(&out),
        ]);
        out
    };
    let one = run("1", "one");
    let three = run("3", "three");
    // everything except the wall-clock runtime must agree
    let report = |d: &Path| {
        let mut v = read_json(&d.join("table1_m2.json"));
        v["report"].as_object_mut().unwrap().remove("runtime_secs");
        v
    };
    assert!(report(&one) == report(&three), "study reports differ between thread counts");
    assert_eq!(
        std::fs::read_to_string(one.join("table1_m2.csv")).unwrap(),
        std::fs::read_to_string(three.join("table1_m2.csv")).unwrap()
    );
    assert_eq!(report(&one)["schema"], "poolsel.study/1");
    assert!(one.join("table1_m2_lambda_choice.csv").exists());
}
