use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn rmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmpc")).args(args).output().expect("binary runs")
}

fn run_into(scenario: &str, out: &Path, extra: &[&str]) -> Output {
    let file = scenarios().join(format!("{scenario}.toml"));
    let mut args = vec!["run", file.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    rmpc(&args)
}

fn short_copy(dir: &Path, scenario: &str, duration: f64) -> PathBuf {
    let text = std::fs::read_to_string(scenarios().join(format!("{scenario}.toml"))).unwrap();
    let path = dir.join(format!("{scenario}-short.toml"));
    std::fs::write(&path, text.replace("duration = 10.0", &format!("duration = {duration}"))).unwrap();
    path
}

#[test]
fn successful_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s1");
    let status = run_into("scenario1", &out, &[]);
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    for file in ["run.csv", "metrics.txt", "envelope.csv", "plot_run.py", "scenario.toml"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    let csv = std::fs::read_to_string(out.join("run.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 333);

    let metrics = rmpc(&["metrics", out.join("run.csv").to_str().unwrap()]);
    assert_eq!(metrics.status.code(), Some(0));
    let text = String::from_utf8(metrics.stdout).unwrap();
    assert!(text.contains("collision = false"));
    assert!(text.lines().any(|l| l.starts_with("min_clearance = 0.")));
}

#[test]
fn collision_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s2-dmpc");
    let status = run_into("scenario2", &out, &["--mode", "dmpc"]);
    assert_eq!(status.status.code(), Some(2));
    let text = std::fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert!(text.contains("collision = true"));
}

#[test]
fn configuration_errors_exit_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(rmpc(&["run", missing.to_str().unwrap()]).status.code(), Some(4));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\nduration = 0.0\n").unwrap();
    let output = rmpc(&["run", bad.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&output.stderr).contains("error"));

    let csv = dir.path().join("run.csv");
    std::fs::write(&csv, "not,a,run\n").unwrap();
    assert_eq!(rmpc(&["metrics", csv.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_copy(dir.path(), "scenario2", 3.0);
    let mut files = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let args = ["run", scenario.to_str().unwrap(), "--out", out.to_str().unwrap(), "--noise", "on", "--seed", "5"];
        assert_eq!(rmpc(&args).status.code(), Some(0));
        files.push(std::fs::read(out.join("run.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn compare_lists_both_runs() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_copy(dir.path(), "scenario1", 1.5);
    let (a, b) = (dir.path().join("rmpc"), dir.path().join("dmpc"));
    for (out, mode) in [(&a, "rmpc"), (&b, "dmpc")] {
        let args = ["run", scenario.to_str().unwrap(), "--out", out.to_str().unwrap(), "--mode", mode];
        assert_eq!(rmpc(&args).status.code(), Some(0));
    }
    let output = rmpc(&["compare", a.join("run.csv").to_str().unwrap(), b.join("run.csv").to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0));
    let text = String::from_utf8(output.stdout).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.contains("rmpc") && header.contains("dmpc"));
    assert!(text.lines().any(|l| l.starts_with("steps") && l.matches("50").count() == 2));
}

#[test]
fn identify_w_writes_a_loadable_fragment() {
    let dir = tempfile::tempdir().unwrap();
    let fragment = dir.path().join("w.toml");
    let trials = scenarios().join("trials");
    let output = rmpc(&[
        "identify-w",
        trials.to_str().unwrap(),
        "--sensor-margin",
        "0.01,0.01,0.001,0.001,0.001",
        "--out",
        fragment.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
    let text = std::fs::read_to_string(&fragment).unwrap();
    let line = text.lines().find(|l| l.starts_with("disturbance")).unwrap();
    let values: Vec<f64> = line
        .split_once('[')
        .unwrap()
        .1
        .trim_end_matches(']')
        .split(',')
        .map(|v| v.trim().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 5);
    assert!(values[3] > 0.001);

    let base = std::fs::read_to_string(scenarios().join("scenario1.toml")).unwrap();
    let (head, tail) = base.split_once("[path]").unwrap();
    let combined = dir.path().join("combined.toml");
    std::fs::write(&combined, format!("{head}{text}\n[path]{tail}").replace("duration = 10.0", "duration = 0.3")).unwrap();
    let out = dir.path().join("combined");
    let status = rmpc(&["run", combined.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));

    let empty = tempfile::tempdir().unwrap();
    assert_ne!(rmpc(&["identify-w", empty.path().to_str().unwrap()]).status.code(), Some(0));
}
