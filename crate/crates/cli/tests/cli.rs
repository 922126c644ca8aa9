use std::path::Path;
use std::process::Command;

use lieldp_cli::config::ExperimentConfig;
use lieldp_cli::{run, run_config, EXIT_CERTIFICATE, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};
use serde_json::Value;

fn run_in(dir: &Path, args: &[&str]) -> i32 {
    let mut full = vec!["lieldp".to_string()];
    full.extend(args.iter().map(|s| s.to_string()));
    full.push("--out".into());
    full.push(dir.display().to_string());
    run(full)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn without_timestamp(mut v: Value) -> Value {
    v["metadata"].as_object_mut().unwrap().remove("timestamp");
    v
}

#[test]
fn simulate_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let code = run_in(dir.path(), &["simulate", "--alpha", "1", "--beta", "1", "--n", "1000", "--m", "10", "--seed", "7"]);
    assert_eq!(code, EXIT_OK);
    let v = read_json(&dir.path().join("simulate.json"));
    assert_eq!(v["result"]["n"], 1000);
    assert_eq!(v["result"]["replacement"]["pass"], true);
    assert_eq!(v["config"]["seed"], "7");
    assert!(v["metadata"]["timestamp"].is_string());
    let csv = std::fs::read_to_string(dir.path().join("simulate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1001);
    assert!(csv.starts_with("step,distance\n1,"));
    assert!(!csv.contains('\r'));
}

#[test]
fn identical_runs_are_byte_identical_apart_from_timestamp() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["mc-estimate", "--center", "[[0.8, 0.2], [0.2, 0.8]]", "--radius", "0.1", "--ns", "10,20", "--samples", "2000", "--tilt", "auto", "--seed", "3"];
    assert_eq!(run_in(a.path(), &args), EXIT_OK);
    let mut args_b = args.to_vec();
    args_b.extend(["--workers", "1"]);
    assert_eq!(run_in(b.path(), &args_b), EXIT_OK);
    assert_eq!(
        std::fs::read(a.path().join("mc-estimate.csv")).unwrap(),
        std::fs::read(b.path().join("mc-estimate.csv")).unwrap()
    );
    let mut ja = without_timestamp(read_json(&a.path().join("mc-estimate.json")));
    let mut jb = without_timestamp(read_json(&b.path().join("mc-estimate.json")));
    ja["config"].as_object_mut().unwrap().remove("workers");
    jb["config"].as_object_mut().unwrap().remove("workers");
    ja["config"].as_object_mut().unwrap().remove("out");
    jb["config"].as_object_mut().unwrap().remove("out");
    assert_eq!(ja, jb);
    assert!(ja["metadata"]["finite_n"].is_string());
}

#[test]
fn echoed_config_reproduces_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run_in(a.path(), &["legendre", "--grid-x1", "0,1,5", "--grid-x2", "0,1,3"]), EXIT_OK);
    let v = read_json(&a.path().join("legendre.json"));
    let mut cfg = ExperimentConfig::new();
    for (k, val) in v["config"].as_object().unwrap() {
        cfg.set(k, val.as_str().unwrap()).unwrap();
    }
    cfg.set("out", b.path().display().to_string()).unwrap();
    assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    assert_eq!(run_config(&cfg), EXIT_OK);
    assert_eq!(
        std::fs::read(a.path().join("legendre.csv")).unwrap(),
        std::fs::read(b.path().join("legendre.csv")).unwrap()
    );
    let csv = std::fs::read_to_string(a.path().join("legendre.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
    // (0, 1), (0.5, 0.5) and (1, 0) lie on the constraint line
    assert_eq!(v["result"]["finite"], 3);
}

#[test]
fn legendre_single_point() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["legendre", "--x1", "1", "--x2", "0"]), EXIT_OK);
    let v = read_json(&dir.path().join("legendre.json"));
    assert!((v["result"]["value"].as_f64().unwrap() - 2f64.ln()).abs() < 1e-12);
    assert_eq!(run_in(dir.path(), &["legendre", "--x", "[[-0.2, 0.2], [0.2, -0.2]]"]), EXIT_OK);
    let v = read_json(&dir.path().join("legendre.json"));
    assert_eq!(v["result"]["value"], "inf");
}

#[test]
fn rate_reports_triple() {
    let dir = tempfile::tempdir().unwrap();
    let c = 1.0 - (-1f64).exp();
    let (m12, m21) = (0.4, c - 0.4);
    let endpoint = dir.path().join("M.json");
    std::fs::write(&endpoint, format!("[[{}, {m12}], [{m21}, {}]]", 1.0 - m12, 1.0 - m21)).unwrap();
    let code = run_in(dir.path(), &["rate", "--alpha", "1", "--endpoint", endpoint.to_str().unwrap(), "--m", "4,8", "--strict"]);
    assert_eq!(code, EXIT_OK);
    let v = read_json(&dir.path().join("rate.json"));
    let t = &v["result"]["triple"];
    let q = t["quadrature"].as_f64().unwrap();
    let d = t["discretized"].as_f64().unwrap();
    assert!(t["closed_form"].as_f64().is_some());
    assert!(d <= q + 1e-9 && d > 0.0);
    let csv = std::fs::read_to_string(dir.path().join("rate.csv")).unwrap();
    assert!(csv.starts_with("m,value,constraint_residual,converged\n4,"));
}

#[test]
fn rate_off_constraint_has_infinite_quadrature() {
    let dir = tempfile::tempdir().unwrap();
    let code = run_in(dir.path(), &["rate", "--endpoint", "[[0.7, 0.3], [0.5, 0.5]]", "--m", "2"]);
    assert_eq!(code, EXIT_OK);
    let v = read_json(&dir.path().join("rate.json"));
    assert_eq!(v["result"]["triple"]["quadrature"], "inf");
    assert_eq!(v["result"]["triple"]["closed_form"], "inf");
}

#[test]
fn verify_bounds_strict_passes() {
    let dir = tempfile::tempdir().unwrap();
    let code = run_in(dir.path(), &["verify-bounds", "--dim", "2", "--radius", "0.2", "--pairs", "500", "--seed", "1", "--strict"]);
    assert_eq!(code, EXIT_OK);
    let csv = std::fs::read_to_string(dir.path().join("verify-bounds.csv")).unwrap();
    assert!(csv.starts_with("seed,norm_x,norm_y,ad_norm,lhs,rhs,pass\n1,"));
    assert_eq!(csv.lines().count(), 501);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn numeric_failure_writes_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let code = run_in(dir.path(), &["verify-bounds", "--dim", "3", "--radius", "3", "--pairs", "50"]);
    assert_eq!(code, EXIT_NUMERIC);
    let v = read_json(&dir.path().join("diagnostic.json"));
    assert_eq!(v["module"], "bch");
    assert_eq!(v["inputs_digest"].as_str().unwrap().len(), 64);
    assert!(v["operation"].is_string() && v["error"].is_string());
}

#[test]
fn strict_certificate_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // a tilt pointing far from the event leaves no hits: degenerate tilt
    let args = [
        "mc-estimate", "--center", "[[0.7, 0.3], [0.3, 0.7]]", "--ns", "20", "--samples", "200",
        "--tilt", "[[-30, 30], [-30, 30]]", "--strict",
    ];
    assert_eq!(run_in(dir.path(), &args), EXIT_CERTIFICATE);
    let v = read_json(&dir.path().join("mc-estimate.json"));
    assert_eq!(v["certificates_pass"], false);
    let loose = &args[..args.len() - 1];
    assert_eq!(run_in(dir.path(), loose), EXIT_OK);
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["simulate", "--n", "ten"]), EXIT_USAGE);
    assert_eq!(run_in(dir.path(), &["simulate", "--bogus", "1"]), EXIT_USAGE);
    assert_eq!(run_in(dir.path(), &["rate"]), EXIT_USAGE);
    assert_eq!(run_in(dir.path(), &["simulate", "--n", "5", "--m", "9"]), EXIT_USAGE);
    assert_eq!(run_in(dir.path(), &["mc-estimate", "--center", "[[0.5, 0.4], [0.5, 0.5]]"]), EXIT_USAGE);
    assert_eq!(run_in(dir.path(), &["mc-estimate", "--center", "[[1,0],[0,1]]", "--samples", "0"]), EXIT_USAGE);
    assert_eq!(run_in(dir.path(), &["simulate", "--set", "nonsense=1"]), EXIT_USAGE);
    assert_eq!(run(["lieldp"]), EXIT_USAGE);
    assert_eq!(run(["lieldp", "--help"]), EXIT_OK);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# selftest\ncommand = exp-log-selftest\ndim = 3\nsamples = 50\nradius = 0.3\n").unwrap();
    let code = run_in(dir.path(), &["exp-log-selftest", "--config", cfg.to_str().unwrap(), "--samples", "20", "--strict"]);
    assert_eq!(code, EXIT_OK);
    let v = read_json(&dir.path().join("exp-log-selftest.json"));
    assert_eq!(v["config"]["samples"], "20");
    assert_eq!(v["config"]["dim"], "3");
    assert_eq!(v["result"]["failures"], 0);
    assert_eq!(run_in(dir.path(), &["simulate", "--config", cfg.to_str().unwrap()]), EXIT_USAGE);
}

#[test]
fn binary_honours_worker_env() {
    let exe = env!("CARGO_BIN_EXE_lieldp");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let go = |dir: &Path, workers: &str| {
        Command::new(exe)
            .args(["verify-bounds", "--pairs", "200", "--seed", "9", "--out"])
            .arg(dir)
            .env("LIELDP_WORKERS", workers)
            .status()
            .unwrap()
    };
    assert!(go(a.path(), "1").success());
    assert!(go(b.path(), "3").success());
    assert_eq!(read_json(&a.path().join("verify-bounds.json"))["config"]["workers"], "1");
    assert_eq!(
        std::fs::read(a.path().join("verify-bounds.csv")).unwrap(),
        std::fs::read(b.path().join("verify-bounds.csv")).unwrap()
    );
    let bad = Command::new(exe).args(["simulate", "--n", "-3"]).status().unwrap();
    assert_eq!(bad.code(), Some(1));
}
