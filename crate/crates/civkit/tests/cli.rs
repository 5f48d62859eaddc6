//! Black-box tests of the command-line binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_civkit")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn civkit")
}

fn run_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(bin())
        .args(args)
        .env(key, value)
        .output()
        .expect("spawn civkit")
}

fn write_small_csv(dir: &Path) -> PathBuf {
    // Two balanced categories, strong first stage, one covariate.
    let mut body = String::from("y,d,z,age\n");
    let mut state = 88172645463325252u64;
    let mut next = || {
        // xorshift: deterministic, no external dependency in the test.
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    for i in 0..120 {
        let z = if i % 2 == 0 { "a" } else { "b" };
        let m0 = if i % 2 == 0 { 0.0 } else { 1.0 };
        let age = next();
        let v = next();
        let u = 0.5 * v + 0.5 * next();
        let d = m0 + 0.3 * age + v;
        let y = 0.7 * d + 0.2 * age + u;
        body.push_str(&format!("{y},{d},{z},{age}\n"));
    }
    let path = dir.join("small.csv");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn fit_happy_path_json() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_small_csv(dir.path());
    let out = run(&[
        "fit",
        "--data",
        csv.to_str().unwrap(),
        "--y",
        "y",
        "--d",
        "d",
        "--z",
        "z",
        "--x",
        "age",
        "--estimator",
        "civ",
        "--k",
        "2",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let coefs = report["coefficients"].as_array().unwrap();
    assert_eq!(coefs[0]["parameter"], "tau");
    let tau = coefs[0]["estimate"].as_f64().unwrap();
    let se = coefs[0]["se"].as_f64().unwrap();
    let hi = coefs[0]["ci_high"].as_f64().unwrap();
    assert!((hi - (tau + 1.959964 * se)).abs() < 1e-12);
    assert_eq!(coefs[1]["parameter"], "age");
}

#[test]
fn saturated_civ_equals_tsls_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_small_csv(dir.path());
    let out = run(&[
        "fit",
        "--data",
        csv.to_str().unwrap(),
        "--y",
        "y",
        "--d",
        "d",
        "--z",
        "z",
        "--x",
        "age",
        "--estimator",
        "civ,tsls",
        "--k",
        "2",
    ]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let coefs = report["coefficients"].as_array().unwrap();
    let taus: Vec<f64> = coefs
        .iter()
        .filter(|c| c["parameter"] == "tau")
        .map(|c| c["estimate"].as_f64().unwrap())
        .collect();
    assert_eq!(taus.len(), 2);
    assert!((taus[0] - taus[1]).abs() <= 1e-8 * taus[0].abs().max(1.0));
}

#[test]
fn jive_singleton_category_exits_nonzero_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("singleton.csv");
    let mut body = String::from("y,d,z\n");
    for i in 0..30 {
        let z = if i == 0 { "lonely" } else if i % 2 == 0 { "a" } else { "b" };
        body.push_str(&format!("{}.5,{}.25,{z}\n", i, i % 7));
    }
    std::fs::write(&path, body).unwrap();
    let out = run(&[
        "fit",
        "--data",
        path.to_str().unwrap(),
        "--y",
        "y",
        "--d",
        "d",
        "--z",
        "z",
        "--estimator",
        "jive",
    ]);
    assert_eq!(out.status.code(), Some(4));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let msg = report["errors"][0]["message"].as_str().unwrap();
    assert!(msg.contains("lonely"), "message was: {msg}");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_small_csv(dir.path());
    // Unknown estimator name.
    let out = run(&[
        "fit", "--data", csv.to_str().unwrap(), "--y", "y", "--d", "d", "--z", "z",
        "--estimator", "bogus",
    ]);
    assert_eq!(out.status.code(), Some(2));
    // civ without --k.
    let out = run(&[
        "fit", "--data", csv.to_str().unwrap(), "--y", "y", "--d", "d", "--z", "z",
        "--estimator", "civ",
    ]);
    assert_eq!(out.status.code(), Some(2));
    // Power grid misconfigurations.
    let out = run(&["power", "--tau-min", "0.0", "--tau-max", "1.0", "--tau-steps", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["power", "--tau-min", "1.0", "--tau-max", "0.0", "--tau-steps", "5"]);
    assert_eq!(out.status.code(), Some(2));
    // Missing required flag (handled by the argument parser).
    let out = run(&["fit", "--y", "y"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_csv_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "y,d,z\n1.0,2.0,a\nnot_a_number,1.0,b\n").unwrap();
    let out = run(&[
        "fit", "--data", path.to_str().unwrap(), "--y", "y", "--d", "d", "--z", "z",
        "--estimator", "tsls",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2"), "stderr: {err}");
}

#[test]
fn simulate_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    let base = [
        "simulate", "--k0", "2", "--enz", "20", "--reps", "40", "--seed", "99",
        "--estimators", "oracle,civ2,tsls",
    ];
    let mut args_a: Vec<&str> = base.to_vec();
    args_a.extend(["--threads", "1", "--out", out_a.to_str().unwrap()]);
    let status_a = run(&args_a);
    assert!(status_a.status.success());
    // Thread count comes from the environment fallback this time.
    let mut args_b: Vec<&str> = base.to_vec();
    args_b.extend(["--out", out_b.to_str().unwrap()]);
    let status_b = run_env(&args_b, "CIVKIT_THREADS", "3");
    assert!(status_b.status.success());
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert_eq!(a, b);
    assert!(!a.is_empty());
}

#[test]
fn simulate_single_replication_is_defined() {
    let out = run(&[
        "simulate", "--k0", "2", "--enz", "20", "--reps", "1", "--seed", "5",
        "--estimators", "oracle",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().nth(1).unwrap();
    assert!(line.starts_with("oracle,"));
    // iqr of a single draw is zero.
    let iqr: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
    assert_eq!(iqr, 0.0);
}

#[test]
fn dumped_dataset_reloads_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("dump.csv");
    let out = run(&[
        "simulate", "--k0", "2", "--enz", "20", "--reps", "1", "--seed", "424242",
        "--estimators", "oracle", "--dump-data", dump.to_str().unwrap(), "--out",
        dir.path().join("s.csv").to_str().unwrap(),
    ]);
    assert!(out.status.success());

    let mut cfg = civkit::SimConfig::table_preset(2, 20);
    cfg.replications = 1;
    cfg.seed = 424242;
    let (expected, _) = civkit::simulate_dgp(&cfg, 0).unwrap();

    let schema = civkit::ColumnSchema {
        y: "y".into(),
        d: "d".into(),
        z: "z".into(),
        x: vec!["x1".into()],
    };
    let reloaded = civkit::load_csv(&dump, &schema).unwrap();
    assert_eq!(reloaded.y(), expected.y());
    assert_eq!(reloaded.d(), expected.d());
    assert_eq!(reloaded.z(), expected.z());
    assert_eq!(reloaded.category_labels(), expected.category_labels());
    for i in 0..expected.n() {
        assert_eq!(reloaded.x_row(i), expected.x_row(i));
    }
}

#[test]
fn power_at_zero_matches_simulate_rp05() {
    let sim = run(&[
        "simulate", "--k0", "2", "--enz", "20", "--reps", "60", "--seed", "31",
        "--estimators", "oracle",
    ]);
    assert!(sim.status.success());
    let sim_text = String::from_utf8_lossy(&sim.stdout);
    let rp05: f64 = sim_text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(3)
        .unwrap()
        .parse()
        .unwrap();

    // A grid containing tau0 = 0: at that point, testing H0: tau = 0 is the
    // same event as the simulate command's size calculation.
    let pow = run(&[
        "power", "--tau-min", "-1.0", "--tau-max", "1.0", "--tau-steps", "3",
        "--k0", "2", "--enz", "20", "--reps", "60", "--seed", "31",
        "--estimators", "oracle",
    ]);
    assert!(pow.status.success());
    let pow_text = String::from_utf8_lossy(&pow.stdout);
    let mut mid_rate = None;
    let mut edge_rates = Vec::new();
    for line in pow_text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let tau: f64 = cols[0].parse().unwrap();
        let rate: f64 = cols[2].parse().unwrap();
        if tau == 0.0 {
            mid_rate = Some(rate);
        } else {
            edge_rates.push(rate);
        }
    }
    // The simulate command centers the test at the per-replication estimand
    // (here 0), so the two rates agree up to the heterogeneity of E_n pi0(X).
    let mid = mid_rate.expect("grid midpoint missing");
    assert!((mid - rp05).abs() < 0.12, "power {mid} vs size {rp05}");
    // Far in the tails the test rejects always.
    for r in edge_rates {
        assert!(r > 0.95, "edge rejection rate {r}");
    }
}
