use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn twopoint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twopoint"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn column(table: &str, name: &str) -> Vec<String> {
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

fn numbers(table: &str, name: &str) -> Vec<f64> {
    column(table, name).iter().map(|v| v.parse().unwrap()).collect()
}

const SMALL_RUN: [&str; 8] = ["--paths", "600", "--horizon", "2", "--dt", "0.01", "--seed", "7"];

fn simulate_into(dir: &Path, beta: &str, workers: &str) -> Output {
    let mut args = vec!["-q", "--workers", workers, "simulate", "--beta", beta, "--out", dir.to_str().unwrap()];
    args.extend(SMALL_RUN);
    twopoint(&args)
}

fn files(dir: &Path) -> (Vec<u8>, Vec<u8>) {
    (fs::read(dir.join("curve.csv")).unwrap(), fs::read(dir.join("report.json")).unwrap())
}

#[test]
fn analytic_rows() {
    let out = twopoint(&["analytic", "--beta", "0,1"]);
    assert!(out.status.success());
    let table = stdout(&out);
    assert_eq!(table.lines().count(), 3);
    let alpha = numbers(&table, "alpha_minus");
    assert_eq!(alpha[0], 0.5);
    assert!((alpha[1] - 0.542573).abs() < 1e-6);
    assert_eq!(column(&table, "limit"), ["true", "false"]);
    let p = numbers(&table, "free_energy");
    assert_eq!(p[0], 0.0);
    assert!((p[1] + 0.271287).abs() < 1e-6);
    assert!((numbers(&table, "rate_lambda")[1] - 4.372).abs() < 1e-3);
}

#[test]
fn analytic_free_energy_decreases_over_grid() {
    let out = twopoint(&["analytic", "--beta", "0.25,0.5,1,2"]);
    let p = numbers(&stdout(&out), "free_energy");
    assert_eq!(p.len(), 4);
    assert!(p.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn analytic_json_format() {
    let out = twopoint(&["analytic", "--beta", "2", "--format", "json"]);
    assert!(out.status.success());
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 1);
    assert_eq!(rows[0]["beta"], 2.0);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(twopoint(&["analytic", "--beta", "-1"]).status.code(), Some(2));
    assert_eq!(twopoint(&["simulate", "--beta", "-0.5"]).status.code(), Some(2));
    assert_eq!(twopoint(&["sweep", "--horizon", "2"]).status.code(), Some(2));
    assert_eq!(twopoint(&["simulate", "--scheme", "heun"]).status.code(), Some(2));
    assert_eq!(twopoint(&["simulate", "--dt", "0.3", "--horizon", "2"]).status.code(), Some(2));
    assert_eq!(twopoint(&["verify", "--level", "medium"]).status.code(), Some(2));
    assert_eq!(twopoint(&["--workers", "0", "analytic", "--beta", "1"]).status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(&config, r#"{"beta": 1.0, "paths": 10, "colour": "red"}"#).unwrap();
    let out = twopoint(&["simulate", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn config_file_and_flags_agree() {
    let by_flags = tempfile::tempdir().unwrap();
    let by_file = tempfile::tempdir().unwrap();
    assert!(simulate_into(by_flags.path(), "1", "1").status.success());
    let config = by_file.path().join("run.json");
    fs::write(
        &config,
        format!(
            r#"{{"beta": 1.0, "paths": 600, "horizon": 2.0, "dt": 0.01, "seed": 7, "scheme": "splitting", "out": {:?}}}"#,
            by_file.path().to_str().unwrap()
        ),
    )
    .unwrap();
    let out = twopoint(&["-q", "simulate", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(files(by_flags.path()), files(by_file.path()));
}

#[test]
fn missing_output_directory_fails_without_files() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent");
    let out = simulate_into(&missing, "1", "1");
    assert_eq!(out.status.code(), Some(1));
    assert!(!missing.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn outputs_identical_across_worker_counts_and_reruns() {
    let runs: Vec<_> = ["1", "3", "1"]
        .iter()
        .map(|w| {
            let dir = tempfile::tempdir().unwrap();
            let out = simulate_into(dir.path(), "1", w);
            assert!(out.status.success());
            (files(dir.path()), stdout(&out))
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
    assert!(runs[0].1.starts_with("beta=1 alpha_hat="));
}

#[test]
fn zero_beta_overlap_is_deterministic_flow() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate_into(dir.path(), "0", "1");
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    let t = numbers(&csv, "t");
    let u = numbers(&csv, "mean_overlap");
    assert_eq!(t.len(), 21);
    for (t, u) in t.iter().zip(u) {
        assert!((u - 0.5 * (1.0 + (-4.0 * t).exp())).abs() < 1e-6);
    }
}

#[test]
fn sweep_of_one_beta_reproduces_simulate() {
    let single = tempfile::tempdir().unwrap();
    assert!(simulate_into(single.path(), "1", "1").status.success());

    let sweep = tempfile::tempdir().unwrap();
    let mut args = vec!["-q", "sweep", "--beta", "1", "--out", sweep.path().to_str().unwrap()];
    args.extend(SMALL_RUN);
    let out = twopoint(&args);
    assert!(out.status.success());
    assert_eq!(files(single.path()), files(&sweep.path().join("beta_1")));

    let table = fs::read_to_string(sweep.path().join("sweep.csv")).unwrap();
    assert_eq!(table, stdout(&out));
    assert_eq!(numbers(&table, "beta"), [1.0]);
}

#[test]
fn sweep_rows_per_beta() {
    let mut args = vec!["-q", "sweep", "--beta", "0.25,0.5,1,2"];
    args.extend(SMALL_RUN);
    let out = twopoint(&args);
    assert!(out.status.success());
    let table = stdout(&out);
    let p = numbers(&table, "free_energy");
    assert_eq!(p.len(), 4);
    assert!(p.windows(2).all(|w| w[1] < w[0]));
    let alpha = numbers(&table, "alpha_minus");
    let stationary = numbers(&table, "stationary_overlap");
    assert!(alpha.iter().zip(&stationary).all(|(a, s)| s > a));
}
