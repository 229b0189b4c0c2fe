use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_turtleshell")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn mixg_round_trip_finds_three_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("mixg.csv");
    let out = dir.path().join("fit");
    assert!(run(&["simulate", "--family", "mixg", "--seed", "1", "--out", s(&data)]).status.success());
    let fit = run(&["fit", "--input", s(&data), "--label-col", "label,intuitive", "--out", s(&out)]);
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let eval = run(&["evaluate", "--pred", s(&out.join("labels.csv")), "--truth", s(&data), "--truth-col", "intuitive"]);
    let stdout = String::from_utf8(eval.stdout).unwrap();
    assert!(stdout.trim_end().ends_with("k=3"), "{stdout}");
    let model: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["version"], 1);
    assert_eq!(model["k"], 3);
    assert_eq!(model["dim"], 2);
}

#[test]
fn evaluate_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("cross.csv");
    assert!(run(&["simulate", "--family", "cross", "--out", s(&data)]).status.success());
    let eval = run(&["evaluate", "--pred", s(&data), "--truth", s(&data)]);
    assert_eq!(String::from_utf8(eval.stdout).unwrap().trim(), "ari=1.0 k=4");
}

#[test]
fn bad_invocations_fail_with_usage() {
    let unknown = run(&["fit", "--input", "x.csv", "--out", "o", "--bogus"]);
    assert!(!unknown.status.success());
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    let missing = run(&["fit", "--out", "o"]);
    assert!(!missing.status.success());
    let dir = tempfile::tempdir().unwrap();
    let absent = run(&["fit", "--input", s(&dir.path().join("nope.csv")), "--out", s(&dir.path().join("o"))]);
    assert!(!absent.status.success());
    assert!(!dir.path().join("o").join("labels.csv").exists());
}

#[test]
fn unparseable_row_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "x,y\n1,2\n3,oops\n").unwrap();
    let out = run(&["fit", "--input", s(&data), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}
