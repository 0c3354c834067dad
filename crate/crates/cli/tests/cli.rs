use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn skinny(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skinny"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("spawn skinny")
}

fn ok(cwd: &Path, args: &[&str]) {
    let out = skinny(cwd, args);
    assert!(
        out.status.success(),
        "skinny {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// 120 rows: y depends on x0 and on the colour.
fn toy_csv(dir: &Path) -> std::path::PathBuf {
    let mut s = String::from("x0,x1,x2,colour,y\n");
    for i in 0..120 {
        let x0 = ((i * 37) % 101) as f64 / 50.0 - 1.0;
        let x1 = ((i * 53) % 97) as f64 / 48.0 - 1.0;
        let x2 = ((i * 71) % 89) as f64 / 44.0 - 1.0;
        let colour = ["red", "green", "blue"][i % 3];
        let y = 2.0 * x0 + if colour == "red" { 1.0 } else { 0.0 };
        s.push_str(&format!("{x0},{x1},{x2},{colour},{y}\n"));
    }
    let path = dir.join("toy.csv");
    fs::write(&path, s).unwrap();
    path
}

const TRAIN: &[&str] = &[
    "train", "--csv", "toy.csv", "--target", "y", "--categorical", "colour", "--trees", "3",
    "--depth", "2", "--epochs", "20", "--batch", "16", "--seed", "4",
];

#[test]
fn train_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    toy_csv(dir.path());
    ok(dir.path(), &[TRAIN, &["--out", "a", "--dsl-gamma", "0.05"]].concat());
    ok(dir.path(), &[TRAIN, &["--out", "b", "--dsl-gamma", "0.05"]].concat());
    let a = dir.path().join("a");
    for f in ["model.skny", "model.json", "report.jsonl", "eval.json", "run_config.json", "data.json"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    let report = fs::read_to_string(a.join("report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 20);
    for line in report.lines() {
        let _: Value = serde_json::from_str(line).unwrap();
    }
    let eval = json(&a.join("eval.json"));
    assert!(eval["test"]["mse"].as_f64().unwrap().is_finite());
    let ma = fs::read(a.join("model.skny")).unwrap();
    let mb = fs::read(dir.path().join("b/model.skny")).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn saturating_gamma_selects_nothing() {
    let dir = tempfile::tempdir().unwrap();
    toy_csv(dir.path());
    ok(dir.path(), &[TRAIN, &["--out", "o", "--lambda0-gamma", "1e6"]].concat());
    let eval = json(&dir.path().join("o/eval.json"));
    assert_eq!(eval["test"]["selected_features"], 0);
    let model = json(&dir.path().join("o/model.json"));
    assert_eq!(model["hyperplanes"].as_array().unwrap().len(), 0);
}

#[test]
fn evaluate_roundtrip_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    toy_csv(dir.path());
    ok(dir.path(), &[TRAIN, &["--out", "t"]].concat());
    ok(
        dir.path(),
        &["evaluate", "--model", "t/model.skny", "--csv", "toy.csv", "--target", "y",
          "--categorical", "colour", "--seed", "4", "--out", "e"],
    );
    assert_eq!(
        json(&dir.path().join("e/eval.json")),
        json(&dir.path().join("t/eval.json"))
    );
    // Two features where the model expects six.
    fs::write(dir.path().join("narrow.csv"), "x0,x1,y\n0,1,2\n1,0,1\n2,2,0\n3,1,1\n4,0,2\n").unwrap();
    let out = skinny(
        dir.path(),
        &["evaluate", "--model", "t/model.skny", "--csv", "narrow.csv", "--target", "y",
          "--split", "0.4,0.2,0.4", "--out", "bad"],
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("features"), "{stderr}");
}

#[test]
fn simulate_tiny_grid() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["simulate", "--cells", "0.5:16:200:2", "--repetitions", "2", "--trials", "2",
          "--n-test", "200", "--budgets", "2,16", "--out", "sim"],
    );
    let csv = fs::read_to_string(dir.path().join("sim/results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("sigma,p,N,R,test_mse"));
    assert!(lines[1].starts_with("0.5,16,200,2,"));
    let res = json(&dir.path().join("sim/results.json"));
    assert_eq!(res["cells"][0]["repetitions"].as_array().unwrap().len(), 2);
    let abl = json(&dir.path().join("sim/ablation.json"));
    assert_eq!(abl["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gradcheck", "--out", "g"]);
    let rep = json(&dir.path().join("g/gradcheck.json"));
    assert_eq!(rep["passed"], true);
    assert_eq!(rep["instances"], 200);
    for k in ["max_rel_err_w", "max_rel_err_o"] {
        assert!(rep[k].as_f64().unwrap() <= 1e-5);
    }
}

#[test]
fn certify_descent_on_synthetic() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["certify-descent", "--synthetic", "sigma=0.5,p=8,n=100,k=2,n_test=10", "--trees", "2",
          "--depth", "2", "--lambda0", "0.001", "--lambda2", "0.1", "--lr", "0.5", "--steps", "200",
          "--out", "c"],
    );
    let cert = json(&dir.path().join("c/certificate.json"));
    assert_eq!(cert["certified"], true);
    assert_eq!(cert["bounded"], true);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    toy_csv(dir.path());
    fs::write(
        dir.path().join("run.toml"),
        "csv = \"toy.csv\"\ntarget = \"y\"\ncategorical = [\"colour\"]\ntrees = 5\ndepth = 1\nepochs = 3\nbatch = 8\n",
    )
    .unwrap();
    ok(dir.path(), &["train", "--config", "run.toml", "--trees", "2", "--out", "cf"]);
    let model = json(&dir.path().join("cf/model.json"));
    assert_eq!(model["config"]["num_trees"], 2);
    assert_eq!(model["config"]["depth"], 1);

    fs::write(dir.path().join("bad.toml"), "tress = 5\n").unwrap();
    let out = skinny(dir.path(), &["train", "--config", "bad.toml", "--out", "x"]);
    assert!(!out.status.success());
    assert!(!dir.path().join("x").exists(), "nothing is written for an invalid config");
}

#[test]
fn writes_only_under_out() {
    let dir = tempfile::tempdir().unwrap();
    toy_csv(dir.path());
    ok(dir.path(), &[TRAIN, &["--out", "only"]].concat());
    let mut entries: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    entries.sort();
    assert_eq!(entries, ["only", "toy.csv"]);
}

#[test]
fn conflicting_flags_rejected() {
    let dir = tempfile::tempdir().unwrap();
    toy_csv(dir.path());
    for extra in [&["--lambda0", "1", "--dsl-gamma", "1"][..], &["--loss", "bogus"], &["--dsl-temp", "0.1"]] {
        let out = skinny(dir.path(), &[TRAIN, &["--out", "z"], extra].concat());
        assert!(!out.status.success(), "{extra:?} accepted");
    }
    assert!(!dir.path().join("z").exists());
}
