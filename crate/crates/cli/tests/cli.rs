use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn layerwise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_layerwise"))
        .args(args)
        .env_remove("LAYERWISE_SIDECAR_URL")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path) -> PathBuf {
    let data = dir.join("q.jsonl");
    let out = layerwise(&["synth", "--questions", "6", "--seed", "1", "--out", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("wrote 6 questions"));
    data
}

fn run_args<'a>(data: &'a str, out_dir: &'a str) -> Vec<&'a str> {
    vec![
        "--dataset",
        data,
        "--provider",
        "sim",
        "--sim-layers",
        "6",
        "--samples-per-layer",
        "5",
        "--output-dir",
        out_dir,
    ]
}

#[test]
fn validate_reports_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let data = data.to_str().unwrap();

    let ok = layerwise(&["validate", "--dataset", data, "--provider", "sim"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).contains("valid"));

    let bad = layerwise(&[
        "validate", "--dataset", data, "--provider", "sim", "--tau", "1.5", "--w-c", "0.7", "--w-h", "0.7",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let text = stdout(&bad);
    assert!(text.contains("violation: tau"), "{text}");
    assert!(text.contains("violation: weights"), "{text}");

    let missing = layerwise(&["validate", "--dataset", "/nonexistent/q.jsonl", "--provider", "sim"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stdout(&missing).contains("/nonexistent/q.jsonl"));
}

#[test]
fn run_report_and_score_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let out_dir = tmp.path().join("out");
    let (data, out_dir) = (data.to_str().unwrap(), out_dir.to_str().unwrap());

    let mut args = vec!["run"];
    args.extend(run_args(data, out_dir));
    let run = layerwise(&args);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = stdout(&run);
    assert!(text.contains("optimal layer"), "{text}");
    let run_dir = text
        .lines()
        .find_map(|l| l.strip_prefix("outputs: "))
        .expect("outputs line")
        .to_string();

    let table = layerwise(&["report", &run_dir, "--table"]);
    assert!(table.status.success());
    let table = stdout(&table);
    // header plus 6 layers at each of two temperatures
    assert_eq!(table.lines().count(), 13, "{table}");

    let plot = layerwise(&["report", &run_dir, "--kind", "hcb"]);
    assert!(plot.status.success());
    assert_eq!(stdout(&plot).lines().count(), 12);

    let unknown = layerwise(&["report", &run_dir, "--kind", "nonsense"]);
    assert_eq!(unknown.status.code(), Some(2));

    let responses = format!("{run_dir}/responses/responses.jsonl");
    let mut args = vec!["score", "--responses", responses.as_str()];
    args.extend(run_args(data, out_dir));
    let score = layerwise(&args);
    assert!(score.status.success(), "{}", String::from_utf8_lossy(&score.stderr));
    assert!(stdout(&score).contains("score-"));

    let summary = layerwise(&["report", &run_dir]);
    assert!(stdout(&summary).contains("early-exit layer"));
}

#[test]
fn run_without_dataset_is_an_error() {
    let out = layerwise(&["run", "--provider", "sim"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--dataset"));
}
