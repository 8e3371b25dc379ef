use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covsched")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn gen(dir: &Path, name: &str, count: usize, n: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    let o = run(&[
        "gen-maps",
        "--count",
        &count.to_string(),
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    path
}

fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let out = dir.join("run");
    let o = run(&[
        "train", "--out", out.to_str().unwrap(), "--epochs", "1", "--steps-per-epoch", "2", "--batch-size", "2",
        "--n", "5", "--dim", "8", "--layers", "1", "--heads", "2", "--strict", "--seed", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ckpt = PathBuf::from(stdout(&o).trim());
    assert!(ckpt.exists());
    ckpt
}

#[test]
fn gen_maps_writes_one_line_per_map() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), "maps.jsonl", 10, 5, 1);
    assert_eq!(std::fs::read_to_string(path).unwrap().lines().count(), 10);
}

#[test]
fn solve_exact_prints_a_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let maps = gen(dir.path(), "maps.jsonl", 3, 5, 2);
    let o = run(&["solve", "--solver", "exact", "--map", maps.to_str().unwrap(), "--index", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["solver"], "exact");
    assert_eq!(v["decisions"].as_array().unwrap().len(), 5);
    assert!(v["cost"].as_f64().unwrap() > 0.0);

    // The oracle agrees, and the heuristics never beat it.
    let exact = v["cost"].as_f64().unwrap();
    let o = run(&["oracle", "--map", maps.to_str().unwrap()]);
    let first: serde_json::Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert_eq!(first["cost"].as_f64().unwrap(), exact);
    assert_eq!(stdout(&o).lines().count(), 3);
    for solver in ["nn", "nn+2opt"] {
        let o = run(&["solve", "--solver", solver, "--map", maps.to_str().unwrap(), "--open"]);
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(v["closed"], false);
    }
}

#[test]
fn eval_with_exact_on_large_maps_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let maps = gen(dir.path(), "big.jsonl", 2, 30, 4);
    let ckpt = tiny_checkpoint(dir.path());
    let o = run(&[
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", maps.to_str().unwrap(), "--reference",
        "exact", "--out", dir.path().join("ev").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n <= 12"), "{}", stderr(&o));
    assert!(stderr(&o).contains("Usage:"));
}

#[test]
fn eval_writes_report_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let maps = gen(dir.path(), "maps.jsonl", 4, 5, 5);
    let ckpt = tiny_checkpoint(dir.path());
    let out = dir.path().join("ev");
    let o = run(&[
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", maps.to_str().unwrap(), "--reference",
        "exact", "--out", out.to_str().unwrap(), "--seed", "9",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "map_id,n,model_cost,ref_cost,gap_ratio_pct,excess_pct");
    assert_eq!(csv.lines().count(), 5);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["meta"]["reference"], "exact");
    assert_eq!(summary["meta"]["seed"], 9);
    assert_eq!(summary["complete"], true);
    // A model can never beat the exact optimum.
    for r in summary["records"].as_array().unwrap() {
        assert!(r["gap_ratio_pct"].as_f64().unwrap() >= 100.0 - 1e-9);
    }
}

#[test]
fn policy_solve_can_trace() {
    let dir = tempfile::tempdir().unwrap();
    let maps = gen(dir.path(), "maps.jsonl", 1, 4, 6);
    let ckpt = tiny_checkpoint(dir.path());
    let o = run(&["solve", "--checkpoint", ckpt.to_str().unwrap(), "--map", maps.to_str().unwrap(), "--trace"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let trace = v["trace"].as_array().unwrap();
    assert_eq!(trace.len(), 4);
    let total: f64 = trace[0]["area_probs"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!(v["log_prob"].as_f64().unwrap() <= 0.0);

    let sampled = |seed: &str| {
        let o = run(&[
            "solve", "--checkpoint", ckpt.to_str().unwrap(), "--map", maps.to_str().unwrap(), "--sample", "--seed", seed,
        ]);
        stdout(&o)
    };
    assert_eq!(sampled("5"), sampled("5"));
}

#[test]
fn usage_errors_exit_one_with_synopsis() {
    for args in [
        &["solve", "--map", "x.jsonl"][..],
        &["gen-maps", "--count", "ten", "--n", "5", "--out", "x"][..],
        &["no-such-command"][..],
        &[][..],
        &["solve", "--solver", "exact", "--trace", "--map", "x.jsonl"][..],
    ] {
        let o = run(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(stderr(&o).contains("Usage:"), "{args:?}: {}", stderr(&o));
    }
    let dir = tempfile::tempdir().unwrap();
    let maps = gen(dir.path(), "maps.jsonl", 2, 5, 7);
    let o = run(&["solve", "--solver", "exact", "--map", maps.to_str().unwrap(), "--index", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let o = run(&["solve", "--solver", "exact", "--map", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let garbage = dir.path().join("garbage.jsonl");
    std::fs::write(&garbage, "not json\n").unwrap();
    let o = run(&["oracle", "--map", garbage.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn export_tsp_matrix_is_symmetric_and_integral() {
    let dir = tempfile::tempdir().unwrap();
    let maps = gen(dir.path(), "maps.jsonl", 2, 6, 8);
    let out = dir.path().join("m.tsp");
    for fixed in [None, Some("0:0,1:1,2:2,3:0,0:1,1:2")] {
        let mut args = vec!["export-tsp", "--map", maps.to_str().unwrap(), "--index", "1", "--out", out.to_str().unwrap()];
        if let Some(f) = fixed {
            args.extend(["--fixed", f]);
        }
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.contains("DIMENSION: 12"));
        assert!(text.contains("EDGE_WEIGHT_TYPE: EXPLICIT"));
        let body = text.split("EDGE_WEIGHT_SECTION").nth(1).unwrap();
        let rows: Vec<Vec<i64>> = body
            .lines()
            .filter(|l| !l.trim().is_empty() && l.trim() != "EOF")
            .map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 12);
        for i in 0..12 {
            assert_eq!(rows[i].len(), 12);
            assert_eq!(rows[i][i], 0);
            for j in 0..12 {
                assert_eq!(rows[i][j], rows[j][i]);
            }
        }
    }
    let o = run(&["export-tsp", "--map", maps.to_str().unwrap(), "--fixed", "0:0,1:1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn version_reports_build_and_parameter_count() {
    let o = run(&["--version"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with(&format!("covsched {}", env!("CARGO_PKG_VERSION"))));
    let o = run(&["--version", "--config", "paper"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("trainable parameters: 431232"), "{}", stdout(&o));
    assert_eq!(run(&["--version", "--config", "huge"]).status.code(), Some(1));
}
