use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TABLE2: &str = "Province,ISP,real,predict
Beijing,China Mobile,5,10
Beijing,China Unicom,10,20
Shanghai,China Unicom,30,31
Guangdong,China Mobile,10,9.8
Zhejiang,China Unicom,2,2
Guangdong,China Unicom,200,210
Shanxi,China Unicom,20,22
Jiangsu,China Unicom,200,203
Tianjin,China Mobile,41,43
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpi-rca")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn localize_table2() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t2.csv");
    fs::write(&csv, TABLE2).unwrap();
    let out = dir.path().join("report.json");
    let hist = dir.path().join("hist.csv");
    let o = run(&["localize", "--snapshot", s(&csv), "--out", s(&out), "--hist-out", s(&hist)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out);
    assert_eq!(report["version"], 1);
    assert!(report["min_gps"].is_number());
    assert!(String::from_utf8_lossy(&o.stdout).contains("Province=Beijing"));
    let lines = fs::read_to_string(&hist).unwrap().lines().count();
    assert_eq!(lines, 202);
}

#[test]
fn localize_with_history() {
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("history");
    fs::create_dir(&hist).unwrap();
    for day in 0..3 {
        fs::write(hist.join(format!("d{day}.csv")), "a,b,real\nx,p,20\nx,q,20\ny,p,20\ny,q,20\n").unwrap();
    }
    let now = dir.path().join("now.csv");
    fs::write(&now, "a,b,real\nx,p,5\nx,q,5\ny,p,20\ny,q,21\n").unwrap();
    let out = dir.path().join("r.json");
    let o = run(&["localize", "--snapshot", s(&now), "--history", s(&hist), "--window", "3", "--sequential", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.trim(), "a=x", "{stdout}");
}

#[test]
fn input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let missing = dir.path().join("nope.csv");
    assert_eq!(code(&run(&["localize", "--snapshot", s(&missing), "--out", s(&out)])), 1);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "Province,real,predict\nBeijing,x,1\n").unwrap();
    assert_eq!(code(&run(&["localize", "--snapshot", s(&bad), "--out", s(&out)])), 1);

    let two = dir.path().join("two.csv");
    fs::write(&two, "P,real_succ,predict_succ,real_total,predict_total\nA,1,1,2,2\n").unwrap();
    assert_eq!(code(&run(&["localize", "--snapshot", s(&two), "--out", s(&out)])), 1);

    let hist = dir.path().join("h.json");
    fs::write(&hist, "{\"not\": \"a list\"}").unwrap();
    assert_eq!(code(&run(&["exrc-threshold", "--history", s(&hist)])), 1);

    assert_eq!(code(&run(&["simulate", "--base", "synthetic:oops", "--out", s(dir.path())])), 1);
    assert_eq!(code(&run(&["simulate", "--base", "synthetic:3x4", "--grid", "1x", "--out", s(dir.path())])), 1);
    assert!(!out.exists());
}

#[test]
fn impossible_cell_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--base", "synthetic:2x4", "--grid", "1x3", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exrc_threshold_prints_a_number() {
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("h.json");
    fs::write(&hist, "[0.9, 0.95]").unwrap();
    let o = run(&["exrc-threshold", "--history", s(&hist)]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "0.8");
    fs::write(&hist, "[0.97, 0.98, 0.99, 0.55, 0.60]").unwrap();
    let o = run(&["exrc-threshold", "--history", s(&hist)]);
    let t: f64 = String::from_utf8_lossy(&o.stdout).trim().parse().unwrap();
    assert!(t > 0.60 && t < 0.97, "{t}");
}

#[test]
fn simulate_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = run(&[
        "simulate", "--base", "synthetic:3x6@60", "--grid", "1x1,2x2", "--per-cell", "3", "--seed", "4", "--eliminate", "1",
        "--out", s(&data),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = json(&data.join("dataset.json"));
    assert_eq!(manifest["version"], 1);
    assert_eq!(manifest["faults"], 6);
    let truth = json(&data.join("n2_l2").join("fault-0000").join("truth.json"));
    assert_eq!(truth["version"], 1);
    assert_eq!(truth["eliminated"].as_array().unwrap().len(), 1);

    let out = dir.path().join("eval.json");
    let o = run(&["evaluate", "--dataset", s(&data), "--workers", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out);
    assert_eq!(report["version"], 1);
    assert_eq!(report["cases"], 6);
    assert_eq!(report["per_setting"].as_array().unwrap().len(), 2);
    assert!(report["exrc_f1"].is_number());

    assert_eq!(code(&run(&["evaluate", "--dataset", s(&data), "--workers", "0", "--out", s(&out)])), 1);
}
