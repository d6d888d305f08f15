use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rangebal"));
    cmd.env_remove("RANGEBAL_CONFIG");
    cmd
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn produce(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let trace = dir.join(name);
    let mut args = vec!["run", "--nodes", "8", "--ops", "2000", "--seed", "3", "--trace-out", path_str(&trace)];
    args.extend_from_slice(extra);
    run_ok(&args);
    trace
}

#[test]
fn run_writes_summary_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("m.csv");
    let trace = produce(dir.path(), "t.jsonl", &["--metrics-out", path_str(&metrics)]);
    let csv = std::fs::read_to_string(metrics).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("ops,max_ratio,moved_per_op,msgs_per_op,partition_changes_per_op,phases"));
    assert!(lines.next().unwrap().starts_with("2000,"));
    let text = std::fs::read_to_string(trace).unwrap();
    assert_eq!(text.lines().count(), 2000);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for field in ["seq", "kind", "key", "roles", "keys_moved", "queries", "min", "max", "phase", "phi_num", "phi_den"] {
        assert!(first.get(field).is_some(), "missing {field}");
    }
}

#[test]
fn identical_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = produce(dir.path(), "a.jsonl", &["--workload", "adversarial"]);
    let b = produce(dir.path(), "b.jsonl", &["--workload", "adversarial"]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn verify_passes_on_fresh_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = produce(dir.path(), "t.jsonl", &["--dist", "zipf", "--p-delete", "0.45"]);
    let out = run_ok(&["verify", path_str(&trace), "--nodes", "8"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for line in text.lines() {
        let report: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(report["passed"], true, "{line}");
    }
    assert!(!text.contains("min-monotone"));
}

#[test]
fn verify_accounting_run() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--alpha", "6", "--beta", "4", "--c", "145"];
    let trace = produce(dir.path(), "t.jsonl", &args);
    let mut v = vec!["verify", path_str(&trace), "--nodes", "8"];
    v.extend_from_slice(&args);
    let out = run_ok(&v);
    assert!(String::from_utf8(out.stdout).unwrap().contains("potential-accounting"));
}

#[test]
fn insert_only_trace_includes_min_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--mode", "insert-only", "--workload", "insert-only", "--alpha", "33/10"];
    let trace = produce(dir.path(), "t.jsonl", &args);
    let mut v = vec!["verify", path_str(&trace), "--nodes", "8"];
    v.extend_from_slice(&args);
    let out = run_ok(&v);
    assert!(String::from_utf8(out.stdout).unwrap().contains("\"check\":\"min-monotone\",\"passed\":true"));
}

#[test]
fn edited_keys_moved_fails_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let trace = produce(dir.path(), "t.jsonl", &["--workload", "adversarial"]);
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let i = lines.iter().position(|l| !l.contains("\"balance\":\"none\"")).expect("a balancing event");
    let mut record: serde_json::Value = serde_json::from_str(&lines[i]).unwrap();
    record["keys_moved"] = serde_json::json!(record["keys_moved"].as_u64().unwrap() + 1);
    lines[i] = record.to_string();
    std::fs::write(&trace, lines.join("\n") + "\n").unwrap();

    let out = bin().args(["verify", path_str(&trace), "--nodes", "8"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    let consistency = text.lines().find(|l| l.contains("\"consistency\"")).unwrap();
    let report: serde_json::Value = serde_json::from_str(consistency).unwrap();
    assert_eq!(report["passed"], false);
    assert_eq!(report["first_failing_seq"], serde_json::json!(i as u64 + 1));
}

#[test]
fn malformed_line_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let trace = produce(dir.path(), "t.jsonl", &[]);
    let mut text = std::fs::read_to_string(&trace).unwrap();
    text.insert_str(text.find('\n').unwrap() + 1, "{not json}\n");
    std::fs::write(&trace, text).unwrap();
    let out = bin().args(["verify", path_str(&trace), "--nodes", "8"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn rejected_alpha_exits_with_2() {
    let out = bin().args(["run", "--alpha", "4", "--ops", "10"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha below (3+sqrt33)/2"));

    run_ok(&["run", "--alpha", "3.3", "--mode", "insert-only", "--workload", "insert-only", "--ops", "10"]);
    run_ok(&["run", "--alpha", "5.47", "--accounting", "--ops", "10"]);
    let out = bin().args(["run", "--alpha", "5.46", "--accounting", "--ops", "10"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_from_env_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "alpha=4\nops=50\nnodes=4\n").unwrap();
    let out = bin().env("RANGEBAL_CONFIG", &conf).args(["run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().env("RANGEBAL_CONFIG", &conf).args(["run", "--alpha", "6"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().lines().nth(1).unwrap().starts_with("50,"));
}

#[test]
fn sweep_marks_rejected_rows() {
    let out = run_ok(&["sweep", "--alphas", "4.0,4.4,5.47,6.0", "--nodes", "16", "--ops", "3000"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("4,rejected"));
    for (row, alpha) in rows[1..].iter().zip([4.4, 5.47, 6.0]) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[1], "ok");
        let ratio: f64 = cols[3].parse().unwrap();
        let min: f64 = cols[8].parse().unwrap();
        assert!(ratio <= alpha + 2.0 + 4.0 / min, "{row}");
    }

    let out = bin().args(["sweep", "--alphas", ""]).output().unwrap();
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn report_summarizes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("m.csv");
    let trace = produce(dir.path(), "t.jsonl", &["--metrics-out", path_str(&metrics)]);
    let out = run_ok(&["report", path_str(&trace)]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), std::fs::read_to_string(metrics).unwrap());
}
