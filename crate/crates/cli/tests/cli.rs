use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn switchbench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_switchbench"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = switchbench(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn small_pipeline(dir: &Path) {
    ok(dir, &["synth", "--seed", "3", "--out", "d", "--per-class", "2", "--test-per-class", "2", "--len-min", "20", "--len-max", "40"]);
    ok(dir, &["train", "--model", "slds", "--data", "d/manifest.txt", "--out", "slds", "--seed", "3"]);
    ok(dir, &[
        "train", "--model", "rnn", "--data", "d/manifest.txt", "--out", "rnn", "--seed", "3", "--epochs", "2", "--hidden",
        "4", "--layers", "1",
    ]);
    ok(dir, &[
        "eval", "--model-file", "slds/model.params", "--model-file", "rnn/model.params", "--data", "d/manifest.txt",
        "--grid", "10:10:complete", "--out", "ev",
    ]);
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn pipeline_writes_expected_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let root = dir.path();
    for f in [
        "d/manifest.txt",
        "d/ground_truth.params",
        "slds/model.params",
        "slds/training_log.csv",
        "rnn/training_log.csv",
        "ev/accuracy.csv",
        "ev/precision.csv",
        "ev/recall.csv",
        "ev/report.json",
        "ev/confusion_slds_10.csv",
        "ev/confusion_rnn_complete.csv",
        "ev/run_config.json",
    ] {
        assert!(root.join(f).is_file(), "missing {f}");
    }
    assert_eq!(fs::read_dir(root.join("ev/traces")).unwrap().count(), 8);
    let log = fs::read_to_string(root.join("rnn/training_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,loss"));
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_pipeline(a.path());
    small_pipeline(b.path());
    assert_eq!(tree(a.path()), tree(b.path()));
}

#[test]
fn replay_reproduces_a_recorded_run() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    ok(dir.path(), &["replay", "--config", "ev/run_config.json", "--out", "ev2"]);
    let first = tree(&dir.path().join("ev"));
    let second = tree(&dir.path().join("ev2"));
    let strip = |t: Vec<(String, Vec<u8>)>| t.into_iter().filter(|(n, _)| n != "run_config.json").collect::<Vec<_>>();
    assert_eq!(strip(first), strip(second));
}

#[test]
fn thread_count_does_not_change_reports() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_switchbench"))
        .current_dir(dir.path())
        .env("SWITCHBENCH_THREADS", "3")
        .args(["eval", "--model-file", "slds/model.params", "--model-file", "rnn/model.params", "--data", "d/manifest.txt"])
        .args(["--grid", "10:10:complete", "--out", "ev3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(dir.path().join("ev/report.json")).unwrap(), fs::read(dir.path().join("ev3/report.json")).unwrap());
}

#[test]
fn trace_command_writes_one_file() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let seq = fs::read_dir(dir.path().join("d/test")).unwrap().next().unwrap().unwrap().path();
    let seq = seq.to_str().unwrap();
    let stdout = ok(dir.path(), &["trace", "--model-file", "slds/model.params", "--sequence", seq, "--out", "tr"]);
    assert!(stdout.starts_with("predicted "));
    let files: Vec<_> = fs::read_dir(dir.path().join("tr")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files.len(), 2);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["eval", "--model-file", "m", "--data", "d", "--out", "o", "--grid", "10:0:complete"],
        vec!["train", "--model", "hmm", "--data", "d", "--out", "o", "--seed", "1"],
        vec!["synth", "--out", "o"],
    ] {
        assert_eq!(switchbench(dir.path(), &args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = switchbench(dir.path(), &["train", "--model", "slds", "--data", "missing.txt", "--out", "o", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
    let out = switchbench(dir.path(), &["synth", "--seed", "1", "--out", "d", "--len-min", "50", "--len-max", "10"]);
    assert_eq!(out.status.code(), Some(1));
}
