use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use riemann_cg::experiment::{OUTPUT_DIR_ENV, TRACE_COLUMNS};

fn cli(args: &[&str], output_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riemann-cg"))
        .args(args)
        .env(OUTPUT_DIR_ENV, output_dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn run_writes_csv_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let out = cli(
        &[
            "run",
            "--preset",
            "peculiar-sphere-20",
            "--variant",
            "scaled-fr",
            "--out",
            path.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let summary = stdout(&out);
    for key in ["final_f=", "final_dist=", "iterations=", "scaling_events="] {
        assert!(summary.contains(key), "{summary}");
    }
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# name: peculiar-sphere-20-scaled-fr\n"));
    assert!(text.contains("# x0: paper\n"));
    let lines = data_lines(&text);
    assert_eq!(lines[0], TRACE_COLUMNS.join(","));
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first.len(), TRACE_COLUMNS.len());
    assert_eq!(first[0], "0");
    assert!((first[1].parse::<f64>().unwrap() - 10.5).abs() < 1e-13);
    let last: Vec<&str> = lines.last().unwrap().split(',').collect();
    assert_eq!(last[3], "");
    assert!(last[8].parse::<f64>().unwrap() <= 1e-5);
}

#[test]
fn identical_specs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let path = dir.path().join(name);
        let out = cli(
            &[
                "run",
                "--preset",
                "svd-6x4",
                "--x0",
                "random:7",
                "--restart",
                "10",
                "--out",
                path.to_str().unwrap(),
            ],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0));
        bytes.push(fs::read(&path).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    assert!(String::from_utf8_lossy(&bytes[0]).contains("# x0: random:7\n"));
}

#[test]
fn jsonl_output_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &[
            "run",
            "--preset",
            "brockett-stiefel-4x2",
            "--variant",
            "fr",
            "--format",
            "jsonl",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let path = dir.path().join("brockett-stiefel-4x2-fr.jsonl");
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let meta: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(meta["meta"]["variant"], "fr");
    let rows: Vec<serde_json::Value> = lines.map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows[0]["k"], 0);
    assert_eq!(rows[0]["scaled_k"], false);
    assert!(rows.last().unwrap()["alpha_k"].is_null());
    let keys: Vec<&str> = rows[0]
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    let mut expected = TRACE_COLUMNS.to_vec();
    expected.sort_unstable();
    let mut keys = keys;
    keys.sort_unstable();
    assert_eq!(keys, expected);
}

#[test]
fn sweep_writes_one_trace_per_period() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &[
            "sweep",
            "--preset",
            "peculiar-sphere-20",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    for suffix in ["-N19", "-N50", "-N100", ""] {
        let path = dir
            .path()
            .join(format!("peculiar-sphere-20-scaled-fr{suffix}.csv"));
        assert!(path.exists(), "{}", path.display());
    }
}

#[test]
fn max_iter_run_is_not_a_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &[
            "run",
            "--preset",
            "peculiar-sphere-20",
            "--variant",
            "fr",
            "--max-iter",
            "50",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("status=max_iter"));
    let text = fs::read_to_string(dir.path().join("peculiar-sphere-20-fr.csv")).unwrap();
    assert_eq!(data_lines(&text).len(), 52);
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--preset", "nope"][..],
        &["run", "--preset", "svd-6x4", "--variant", "pr"],
        &["run", "--preset", "svd-6x4", "--x0", "random"],
        &["run", "--preset", "svd-6x4", "--c1", "0.5", "--c2", "0.1"],
        &["run", "--preset", "svd-6x4", "--restart", "0"],
        &["frobnicate"],
    ] {
        let out = cli(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn check_reports_machine_readable_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &["check", "--scope", "geometry", "--samples", "20", "--json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let results = report["results"].as_array().unwrap();
    assert!(!results.is_empty());
    assert!(results.iter().all(|r| r["passed"] == true));
}

#[test]
fn full_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["check", "--samples", "50"], dir.path());
    let text = stdout(&out);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
}
