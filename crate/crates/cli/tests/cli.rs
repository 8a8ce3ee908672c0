use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn ergo(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ergo"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("ERGO_THREADS", t),
        None => cmd.env_remove("ERGO_THREADS"),
    };
    cmd.output().expect("run ergo")
}

fn run_ok(args: &[&str], threads: Option<&str>) -> Output {
    let out = ergo(args, threads);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string(value).unwrap()).unwrap();
    path
}

#[test]
fn certify_running_example() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("two_state.json");
    run_ok(&["certify", "--config", s(&cfg), "--out", s(tmp.path())], None);
    let report = read_json(&tmp.path().join("report.json"));
    assert_eq!(report["pass"], true);

    // κ₂ = κ δ_{pr-pα̲}^{1/p} with δ_17 = e^{17·ln6/17} = 6; f(k) = γ_p·2δ/(1-κ₂)² + 2α(k)
    let kappa2 = 0.1 * 6f64.sqrt();
    let pref = 0.5 * 2.0 * 6.0 / (1.0 - kappa2).powi(2);
    let (f0, f1) = (pref - 16.0, pref - 14.0);
    // largest eigenvalue of [[-1 + f0, 1], [2, -2 + f1]]
    let (a, d) = (-1.0 + f0, -2.0 + f1);
    let lmax = 0.5 * (a + d) + (0.25 * (a - d).powi(2) + 2.0).sqrt();
    let zeta = report["certificate"]["zeta"].as_f64().unwrap();
    assert!((zeta + lmax).abs() < 1e-10, "zeta {zeta} vs {}", -lmax);
    assert!((zeta - 4.477).abs() < 5e-3);
    assert!(tmp.path().join("checks.csv").exists());
}

#[test]
fn failing_certificate_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&configs().join("two_state.json"));
    cfg["constants"]["alpha"] = serde_json::json!([-8.0, 2.0]);
    let path = write_config(tmp.path(), &cfg);
    let out = ergo(&["certify", "--config", s(&path), "--out", s(&tmp.path().join("out"))], None);
    assert_eq!(out.status.code(), Some(2));
    let report = read_json(&tmp.path().join("out/report.json"));
    assert_eq!(report["pass"], false);
    assert!(report["certificate"]["zeta"].as_f64().unwrap() < 0.0);
}

#[test]
fn missing_generator_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&configs().join("two_state.json"));
    cfg.as_object_mut().unwrap().remove("generator");
    let path = write_config(tmp.path(), &cfg);
    let out = ergo(&["certify", "--config", s(&path), "--out", s(&tmp.path().join("out"))], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("generator: required"));
}

#[test]
fn config_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = read_json(&configs().join("ergodic.json"));
    cfg["sim"]["hh"] = serde_json::json!(0.1);
    let path = write_config(tmp.path(), &cfg);
    let out = ergo(&["simulate", "--config", s(&path), "--out", s(&tmp.path().join("out"))], None);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sim") && err.contains("hh"), "{err}");

    let out = ergo(&["certify", "--bogus"], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn expfunc_agrees_with_monte_carlo() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("two_state.json");
    run_ok(&["expfunc", "--config", s(&cfg), "--out", s(tmp.path())], None);
    let mut r = csv::Reader::from_path(tmp.path().join("expfunc.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["t", "exact", "mc_mean", "mc_stderr"]);
    let mut rows = 0;
    for rec in r.records() {
        let v: Vec<f64> = rec.unwrap().iter().map(|x| x.parse().unwrap()).collect();
        assert!((v[1] - v[2]).abs() <= 3.0 * v[3], "t = {}: exact {} vs {} +- {}", v[0], v[1], v[2], v[3]);
        rows += 1;
    }
    assert_eq!(rows, 3);
}

fn same_files(a: &Path, b: &Path, names: &[&str]) {
    for n in names {
        let (x, y) = (std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap());
        assert!(x == y, "{n} differs");
    }
}

#[test]
fn outputs_are_reproducible_across_threads_and_from_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("ergodic.json");
    let (one, two, again) = (tmp.path().join("one"), tmp.path().join("two"), tmp.path().join("again"));
    for (out, threads) in [(&one, "1"), (&two, "2")] {
        let args = ["couple", "--config", s(&cfg), "--out", s(out), "--paths", "300", "--horizon", "6", "--seed", "17"];
        run_ok(&args, Some(threads));
    }
    let files = ["summary.csv", "survival.csv", "tau.csv", "report.json"];
    same_files(&one, &two, &files);

    let manifest = one.join("manifest.json");
    let m = read_json(&manifest);
    assert_eq!(m["command"], "couple");
    assert_eq!(m["seed"], 17);
    assert_eq!(m["config"]["sim"]["n_paths"], 300);
    run_ok(&["couple", "--config", s(&manifest), "--out", s(&again)], None);
    same_files(&one, &again, &files);
    same_files(&one, &again, &["manifest.json"]);

    let (p1, p2) = (tmp.path().join("p1"), tmp.path().join("p2"));
    for (out, t) in [(&p1, "1"), (&p2, "3")] {
        run_ok(&["simulate", "--config", s(&cfg), "--out", s(out), "--paths", "200", "--horizon", "3"], Some(t));
    }
    same_files(&p1, &p2, &["paths.csv", "summary.csv", "report.json"]);
}

#[test]
fn decay_fits_a_curve_file() {
    let tmp = tempfile::tempdir().unwrap();
    let csv_path = tmp.path().join("curve.csv");
    let mut text = String::from("t,mean,stderr\n");
    for i in 0..=40 {
        let t = i as f64 * 0.25;
        let m = 2.0 * (-0.7 * t).exp();
        text += &format!("{t},{m},{}\n", 0.01 * m);
    }
    std::fs::write(&csv_path, text).unwrap();
    let out = tmp.path().join("out");
    run_ok(&["decay", "--input", s(&csv_path), "--out", s(&out)], None);
    let report = read_json(&out.join("report.json"));
    let rate = report["fit"]["rate"].as_f64().unwrap();
    assert!((rate - 0.7).abs() < 1e-10, "rate {rate}");
    assert_eq!(report["fit"]["window"], serde_json::json!([10.0 / 6.0, 5.0]));
}

#[test]
fn transport_is_dominated_by_the_coupling() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("ergodic.json");
    run_ok(&["ot", "--config", s(&cfg), "--out", s(tmp.path()), "--paths", "64", "--horizon", "10"], None);
    let report = read_json(&tmp.path().join("report.json"));
    let times = report["times"].as_array().unwrap();
    assert_eq!(times.len(), 2);
    assert!(times.iter().all(|t| t["dominated"] == true));
}
