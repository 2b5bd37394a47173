mod common;

use std::path::{Path, PathBuf};

use common::*;
use ldqos_core::cli::main_with_args;
use ldqos_core::io::{read_transition_matrix, write_matrix, write_trace};
use ldqos_core::*;
use tempfile::TempDir;

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn run(args: &[&str]) -> Run {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = main_with_args(std::iter::once("ldqos").chain(args.iter().copied()), &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn trace_file(dir: &TempDir, name: &str, pm: &TransitionMatrix, n: usize, seed: u64) -> PathBuf {
    let path = dir.path().join(name);
    write_trace(&path, &generate_trace(pm, n, seed).unwrap()).unwrap();
    path
}

fn matrix_file(dir: &TempDir, name: &str, pm: &TransitionMatrix) -> PathBuf {
    let path = dir.path().join(name);
    write_matrix(&path, pm.matrix()).unwrap();
    path
}

const BASE: [&str; 4] = ["--rates", "0.042,0.077", "--service", "0.058"];

#[test]
fn fit_cyclic_trace() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("t.txt");
    let body: String = (0..40).map(|k| format!("{}\n", k % 4 + 1)).collect();
    std::fs::write(&path, format!("sigma=4\n{body}")).unwrap();
    let mle = dir.path().join("mle.txt");
    let r = run(&[
        "fit",
        "--trace",
        path_str(&path),
        "--states",
        "4",
        "--mle-out",
        path_str(&mle),
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    let qf = read_transition_matrix(&mle).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(qf.get(i, j), if j == (i + 1) % 4 { 1.0 } else { 0.0 });
        }
    }
    let json: serde_json::Value = serde_json::from_str(&r.out).unwrap();
    assert_eq!(json["n"], 40);
    assert_eq!(json["q"][3][0], 0.25);
}

#[test]
fn fit_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = trace_file(
        &dir,
        "t.txt",
        &tm(&[&[0.5, 0.3, 0.2], &[0.1, 0.6, 0.3], &[0.3, 0.3, 0.4]]),
        3000,
        4,
    );
    let (mle, freq) = (dir.path().join("mle.txt"), dir.path().join("q.txt"));
    let r = run(&[
        "fit",
        "--trace",
        path_str(&path),
        "--states",
        "3",
        "--mle-out",
        path_str(&mle),
        "--freq-out",
        path_str(&freq),
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    let em = compute_empirical_measure(&io::read_trace(&path).unwrap(), 3).unwrap();
    let want = mle_transition(&em).unwrap();
    let got = read_transition_matrix(&mle).unwrap();
    let q = io::parse_matrix(&std::fs::read_to_string(&freq).unwrap()).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((got.get(i, j) - want.get(i, j)).abs() <= 1e-12);
            assert!((q[(i, j)] - em.q(i, j)).abs() <= 1e-12);
        }
    }
    // serializing again gives the same file
    let again = dir.path().join("mle2.txt");
    write_matrix(&again, got.matrix()).unwrap();
    assert_eq!(
        std::fs::read_to_string(&mle).unwrap(),
        std::fs::read_to_string(&again).unwrap()
    );
}

#[test]
fn missing_header_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("t.txt");
    std::fs::write(&path, "1\n2\n1\n").unwrap();
    let r = run(&["fit", "--trace", path_str(&path), "--states", "2"]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains("line 1"), "{}", r.err);
}

#[test]
fn estimate_is_deterministic_and_consistent() {
    let dir = TempDir::new().unwrap();
    let path = trace_file(&dir, "t.txt", &two_state(0.9, 0.7), 2000, 8);
    let mut args = vec!["estimate", "--trace", path_str(&path), "--buffer", "4", "--mu", "0"];
    args.extend(BASE);
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.code, 0, "{}", a.err);
    assert_eq!(a.out, b.out);
    let json: serde_json::Value = serde_json::from_str(&a.out).unwrap();
    assert_eq!(json["log_piv"], json["log_pii"]);

    let em = compute_empirical_measure(&io::read_trace(&path).unwrap(), 2).unwrap();
    let (arr, svc) = base_model();
    let ts = theta_star(&mle_transition(&em).unwrap(), &arr, &svc, &LdConfig::default()).unwrap();
    assert!(rel_err(json["log_pi"].as_f64().unwrap(), -4.0 * ts) < 1e-12);
    let pii = json["log_pii"].as_f64().unwrap();
    assert!(json["log_pi"].as_f64().unwrap() <= pii && pii <= 0.0);
    assert_eq!(json["n"], 2000);
}

#[test]
fn estimate_on_i2_trace_reports_degenerate() {
    let dir = TempDir::new().unwrap();
    let path = trace_file(&dir, "t.txt", &two_state(0.7, 0.7), 2000, 8);
    let out = dir.path().join("report.json");
    let mut args = vec![
        "estimate",
        "--trace",
        path_str(&path),
        "--buffer",
        "4",
        "--mu",
        "1",
        "--out",
        path_str(&out),
    ];
    args.extend(BASE);
    let r = run(&args);
    assert_eq!(r.code, 0, "{}", r.err);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(json["degenerate"], true);
    for key in ["log_pi", "log_pii", "log_piii_2", "log_piv"] {
        assert_eq!(json[key], 0.0, "{key}");
    }
}

fn surface(dir: &TempDir, qf: &TransitionMatrix, s: &str, grid: &str) -> Vec<Vec<String>> {
    let m = matrix_file(dir, "qf.txt", qf);
    let out = dir.path().join("surface.csv");
    let mut args = vec![
        "surface",
        "--matrix",
        path_str(&m),
        "--s",
        s,
        "--grid",
        grid,
        "--out",
        path_str(&out),
    ];
    args.extend(BASE);
    let r = run(&args);
    assert_eq!(r.code, 0, "{}", r.err);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("p11,p22,region,theta_star,i3,objective"));
    lines.map(|l| l.split(',').map(String::from).collect()).collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn surface_with_zero_weight_is_relative_entropy() {
    let dir = TempDir::new().unwrap();
    let rows = surface(&dir, &two_state(0.9, 0.7), "0", "51");
    assert_eq!(rows.len(), 51 * 51);
    let best = rows.iter().min_by(|a, b| num(&a[5]).total_cmp(&num(&b[5]))).unwrap();
    for r in &rows {
        assert_eq!(r[4], r[5]);
    }
    // grid step is 0.01996
    assert!((num(&best[0]) - 0.9).abs() <= 0.02 && (num(&best[1]) - 0.7).abs() <= 0.02);
}

#[test]
fn surface_theta_star_vanishes_on_the_i2_side() {
    let dir = TempDir::new().unwrap();
    let (r1, r2, c) = (BASE_RATES[0], BASE_RATES[1], BASE_C);
    for row in surface(&dir, &two_state(0.9, 0.7), "0.002", "41") {
        let (a, b) = (num(&row[0]), num(&row[1]));
        // mean rate minus c, times 2 - p11 - p22
        let side = (1.0 - b) * (r1 - c) + (1.0 - a) * (r2 - c);
        if side > 1e-9 {
            assert_eq!(num(&row[3]), 0.0, "{a} {b}");
        } else if side < -1e-9 {
            assert!(num(&row[3]) > 0.0, "{a} {b}");
        }
    }
}

#[test]
fn surface_minimum_agrees_with_algorithm_b() {
    let dir = TempDir::new().unwrap();
    let qf = two_state(0.9, 0.7);
    let rows = surface(&dir, &qf, "0.002", "201");
    let best = rows.iter().min_by(|a, b| num(&a[5]).total_cmp(&num(&b[5]))).unwrap();
    let (arr, svc) = base_model();
    let params = ObjectiveParams::new(1, 0.002, stationary_em(&qf), arr, svc, LdConfig::default()).unwrap();
    let b = algorithm_b(&params, &OptimizerConfig::default()).unwrap();
    let h = 0.998 / 200.0;
    assert!(num(&best[5]) >= b.final_value - 1e-9);
    assert!((num(&best[0]) - b.final_p.get(0, 0)).abs() <= 2.0 * h);
    assert!((num(&best[1]) - b.final_p.get(1, 1)).abs() <= 2.0 * h);
}

#[test]
fn surface_needs_two_states() {
    let dir = TempDir::new().unwrap();
    let m = matrix_file(
        &dir,
        "qf.txt",
        &tm(&[&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5], &[0.5, 0.0, 0.5]]),
    );
    let r = run(&[
        "surface",
        "--matrix",
        path_str(&m),
        "--s",
        "0.1",
        "--rates",
        "0,1,2",
        "--service",
        "1.5",
    ]);
    assert_eq!(r.code, 2);
}

#[test]
fn generate_then_simulate() {
    let dir = TempDir::new().unwrap();
    let m = matrix_file(&dir, "pm.txt", &two_state(0.95, 0.9));
    let t = dir.path().join("t.txt");
    let r = run(&[
        "generate-trace",
        "--matrix",
        path_str(&m),
        "--length",
        "100",
        "--seed",
        "3",
        "--out",
        path_str(&t),
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert_eq!(
        io::read_trace(&t).unwrap(),
        generate_trace(&two_state(0.95, 0.9), 100, 3).unwrap()
    );

    let args = [
        "simulate-queue",
        "--matrix",
        path_str(&m),
        "--rates",
        "0,1",
        "--service",
        "0.5",
        "--horizon",
        "100000",
        "--thresholds",
        "1,2,4",
        "--seed",
        "5",
    ];
    let a = run(&args);
    assert_eq!(a.code, 0, "{}", a.err);
    assert_eq!(a.out, run(&args).out);
    assert_eq!(a.out.lines().count(), 4);
}

#[test]
fn theta_star_and_optimize_commands() {
    let dir = TempDir::new().unwrap();
    let m = matrix_file(&dir, "pm.txt", &two_state(0.9, 0.7));
    let mut args = vec!["theta-star", "--matrix", path_str(&m)];
    args.extend(BASE);
    let r = run(&args);
    assert_eq!(r.code, 0, "{}", r.err);
    let json: serde_json::Value = serde_json::from_str(&r.out).unwrap();
    let want = TwoStateOracle::new([[0.9, 0.1], [0.3, 0.7]], BASE_RATES, BASE_C, 0.0).theta_star(0.9, 0.7);
    assert!(rel_err(json["theta_star"].as_f64().unwrap(), want) < 1e-8);
    assert_eq!(json["region"], "I1");

    let t = trace_file(&dir, "t.txt", &two_state(0.9, 0.7), 1000, 1);
    let mut args = vec!["optimize", "--trace", path_str(&t), "--s", "0.002", "--algorithm", "a"];
    args.extend(BASE);
    let r = run(&args);
    assert_eq!(r.code, 0, "{}", r.err);
    let json: serde_json::Value = serde_json::from_str(&r.out).unwrap();
    assert!(json["iterates"].as_array().unwrap().len() >= 2);
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).code, 0);
    assert_eq!(run(&["no-such-command"]).code, 2);
    let r = run(&["fit", "--trace", "/nonexistent/trace.txt", "--states", "2"]);
    assert_eq!(r.code, 2);
    assert!(r.err.starts_with("error:"));
    let dir = TempDir::new().unwrap();
    let m = matrix_file(&dir, "pm.txt", &two_state(0.9, 0.7));
    let r = run(&[
        "simulate-queue",
        "--matrix",
        path_str(&m),
        "--rates",
        "0,1",
        "--service",
        "0.1",
        "--horizon",
        "1000",
    ]);
    assert_eq!(r.code, 2, "{}", r.err);
    assert!(r.err.contains("unstable"));
}
