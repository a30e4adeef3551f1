use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hyperlq::exprlang::parse;
use hyperlq::problem::builtin_example;
use hyperlq::ProblemSpec;
use serde_json::Value;

fn hyperlq(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperlq"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("HYPERLQ_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const COARSE: [&str; 4] = ["--nz", "51", "--nt", "301"];

#[test]
fn solve_writes_summary_and_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["solve", "--example", "ex1", "--stride", "5"];
    args.extend(COARSE);
    let out = hyperlq(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("summary.json"));
    let eta0 = summary["eta0"].as_f64().unwrap();
    assert!(eta0 > 2.0 && eta0 < 3.0, "{eta0}");
    for key in ["J_quadrature", "J_closed_form", "relative_gap", "terminal_error_inf", "gamma_0", "gamma_l"] {
        assert!(summary[key].is_number(), "{key}");
    }
    assert_eq!(summary["grid"]["nz"], 51);
    assert!(summary["residuals"]["stationarity_resid"].as_f64().unwrap() < 1e-10);
    for name in ["g", "e", "psi", "x", "u", "lambda", "gamma", "terminal"] {
        assert!(dir.path().join(format!("{name}.csv")).exists(), "{name}.csv");
    }
    let terminal = fs::read_to_string(dir.path().join("terminal.csv")).unwrap();
    assert_eq!(terminal.lines().next(), Some("z,x_T,eta,error"));
    assert_eq!(terminal.lines().count(), 52);
    assert!(!dir.path().join("error.json").exists());
}

#[test]
fn field_selection() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["solve", "--example", "zero_demo", "--fields", "x"];
    args.extend(COARSE);
    assert!(hyperlq(&args, dir.path()).status.success());
    assert!(dir.path().join("x.csv").exists());
    assert!(!dir.path().join("g.csv").exists());
}

#[test]
fn cfl_violation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = hyperlq(&["solve", "--example", "ex1", "--tau", "0.005"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("CFL"), "{stderr}");
    let err = read_json(&dir.path().join("error.json"));
    assert_eq!(err["exit_code"], 2);
    assert!(!dir.path().join("summary.json").exists());
}

#[test]
fn bad_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hyperlq(&["solve", "--example", "nope"], dir.path()).status.code(), Some(2));
    assert_eq!(hyperlq(&["solve"], dir.path()).status.code(), Some(2));
    assert_eq!(hyperlq(&["frobnicate"], dir.path()).status.code(), Some(2));

    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"a": 1.8, "b": 1.3}"#).unwrap();
    let out = hyperlq(&["solve", "--config", config.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let short = ProblemSpec { horizon: 2.0, ..builtin_example("ex1").unwrap() };
    fs::write(&config, serde_json::to_string(&short).unwrap()).unwrap();
    let out = hyperlq(&["solve", "--config", config.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = read_json(&dir.path().join("error.json"));
    assert!(err["message"].as_str().unwrap().contains("horizon"), "{err}");
}

#[test]
fn huge_weights_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ProblemSpec {
        q: 2e6,
        p: parse("1e6*z").unwrap(),
        ..builtin_example("ex1").unwrap()
    };
    let config = dir.path().join("heavy.json");
    fs::write(&config, serde_json::to_string(&spec).unwrap()).unwrap();
    let mut args = vec!["solve", "--config", config.to_str().unwrap()];
    args.extend(COARSE);
    let out = hyperlq(&args, dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&dir.path().join("error.json"))["category"], "blowup");
}

#[test]
fn config_round_trip_matches_example() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("ex2.json");
    fs::write(&config, serde_json::to_string(&builtin_example("ex2").unwrap()).unwrap()).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let mut args = vec!["solve", "--config", config.to_str().unwrap()];
    args.extend(COARSE);
    assert!(hyperlq(&args, &a).status.success());
    let mut args = vec!["solve", "--example", "ex2"];
    args.extend(COARSE);
    assert!(hyperlq(&args, &b).status.success());
    assert_eq!(
        read_json(&a.join("summary.json"))["eta0"],
        read_json(&b.join("summary.json"))["eta0"]
    );
}

#[test]
fn unattainable_terminal_tolerance_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["verify", "--example", "ex1", "--terminal-tol", "1e-9"];
    args.extend(COARSE);
    let out = hyperlq(&args, dir.path());
    assert_eq!(out.status.code(), Some(5));
    let report = read_json(&dir.path().join("verify.json"));
    assert_eq!(report["passed"], false);
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(failed.contains(&"terminal_error"));
    assert!(dir.path().join("summary.json").exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("terminal_error"));
}

#[test]
fn loose_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["verify", "--example", "ex1", "--costate-tol", "0.5", "--terminal-tol", "0.5", "--cost-tol", "0.1"];
    args.extend(COARSE);
    let out = hyperlq(&args, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("verify.json"));
    assert_eq!(report["passed"], true);
}

#[test]
fn single_rung_ladder_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = hyperlq(&["converge", "--example", "ex1", "--ladder", "0.01"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("convergence.csv").exists());
}

#[test]
fn exact_transport_ladder_is_marked_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ProblemSpec {
        a: 0.0,
        q: 0.0,
        p: parse("0").unwrap(),
        ..builtin_example("zero_demo").unwrap()
    };
    let config = dir.path().join("transport.json");
    fs::write(&config, serde_json::to_string(&spec).unwrap()).unwrap();
    let out = hyperlq(
        &["converge", "--config", config.to_str().unwrap(), "--ladder", "0.04,0.02,0.01", "--tau-ratio", "2"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "h,tau,terminal_error_inf,cost_gap,state_resid,order");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].ends_with(','));
    assert!(lines[2].ends_with(",exact") && lines[3].ends_with(",exact"), "{table}");
}

#[test]
fn ex1_ladder_orders() {
    let dir = tempfile::tempdir().unwrap();
    let out = hyperlq(&["converge", "--example", "ex1", "--ladder", "0.02,0.01,0.005"], dir.path());
    assert!(out.status.success());
    let table = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let errors: Vec<f64> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{table}");
}

#[test]
fn oracle_compare_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = hyperlq(&["oracle-compare", "--example", "ex1", "--oracle-nz", "6", "--oracle-nt", "61"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("oracle_summary.json"));
    assert_eq!(summary["unknowns"], 300);
    assert!(summary["kkt_residual"].as_f64().unwrap() <= 1e-8);
    assert!(summary["domination_margin"].as_f64().unwrap() >= 0.0);
    let u = fs::read_to_string(dir.path().join("u_oracle.csv")).unwrap();
    assert!(u.lines().count() > 1);
}

#[test]
fn summaries_are_deterministic_apart_from_timings() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["solve", "--example", "ex2"];
        args.extend(COARSE);
        assert!(hyperlq(&args, &out).status.success());
        let mut v = read_json(&out.join("summary.json"));
        let timings = v.as_object_mut().unwrap().remove("timings_ms").unwrap();
        assert!(timings["riccati"].is_number());
        (v, fs::read(out.join("x.csv")).unwrap())
    };
    let (a, xa) = run("a");
    let (b, xb) = run("b");
    assert_eq!(a, b);
    assert_eq!(xa, xb);
}
