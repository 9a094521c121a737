use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hetgp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetgp")).current_dir(dir).args(args).env("HETGP_THREADS", "1").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn simulate(dir: &Path) {
    let o = hetgp(dir, &["simulate", "--suite", "sim2", "--n", "40", "--seed", "1", "--out-prefix", "s"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulate(a.path());
    simulate(b.path());
    for f in ["s_train.csv", "s_test.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
    let test = fs::read_to_string(a.path().join("s_test.csv")).unwrap();
    assert_eq!(test.lines().next().unwrap(), "x0,y,mean,noise_sd");
    assert_eq!(test.lines().count(), 1001);
}

#[test]
fn fit_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    let fit = ["fit", "--data", "s_train.csv", "--x-cols", "x0", "--y-col", "y", "--model", "gp"];
    assert_eq!(code(&hetgp(d, &[&fit[..], &["--out", "a.json"]].concat())), 0);
    assert_eq!(code(&hetgp(d, &[&fit[..], &["--out", "b.json"]].concat())), 0);
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());

    let o = hetgp(d, &["predict", "--model-file", "a.json", "--data", "s_test.csv", "--x-cols", "x0", "--y-col", "y", "--with-density", "--out", "p.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let p = fs::read_to_string(d.join("p.csv")).unwrap();
    let mut lines = p.lines();
    assert_eq!(lines.next().unwrap(), "x0,mean_y,var_y,lower95,upper95,log_density");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 1000);
    for r in &rows {
        assert!(r[2] > 0.0 && r[3] < r[1] && r[1] < r[4] && r[5].is_finite());
    }
}

#[test]
fn unconverged_ep_exits_with_warning_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    let o = hetgp(
        d,
        &["fit", "--data", "s_train.csv", "--x-cols", "x0", "--y-col", "y", "--model", "ep-n", "--max-iter", "2", "--starts", "1", "--max-evals", "5"],
    );
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("model.json").exists());
}

#[test]
fn errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&hetgp(d, &["fit", "--data", "missing.csv", "--x-cols", "x", "--y-col", "y", "--model", "gp"])), 1);
    assert_eq!(code(&hetgp(d, &["fit", "--model", "gp"])), 1);
    assert_eq!(code(&hetgp(d, &["simulate", "--suite", "sim9", "--out-prefix", "s"])), 1);
    fs::write(d.join("bad.json"), "{\"format\": \"other\"}").unwrap();
    simulate(d);
    assert_eq!(code(&hetgp(d, &["predict", "--model-file", "bad.json", "--data", "s_test.csv", "--x-cols", "x0"])), 1);
}

#[test]
fn eval_and_benchmark_write_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    let o = hetgp(d, &["eval", "--data", "s_train.csv", "--x-cols", "x0", "--y-col", "y", "--model", "gp", "--folds", "4", "--out", "e.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let e: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("e.json")).unwrap()).unwrap();
    assert_eq!(e["folds"], 4);
    assert!(e["mlpd"].as_f64().unwrap().is_finite());

    let o = hetgp(d, &["benchmark", "--suite", "sim2", "--methods", "gp", "--repetitions", "2", "--n", "40", "--out", "b.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let b: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("b.json")).unwrap()).unwrap();
    assert_eq!(b["runs"].as_array().unwrap().len(), 2);
}
