use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use msdg::driver::ConvergenceHistory;
use msdg::output::{EIGEN_HEADER, INDICATOR_HEADER};

const RUN: &str = "\
seed = 5
[grid]
coarse = 4
fine = 5
[field]
preset = channels-inclusions
contrast = 1e3
[stop]
max_iterations = 2
[output]
eigens = true
field = true
indicators = true
timings = false
";

fn msdg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msdg"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn first_line(p: &Path) -> String {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .next()
        .unwrap_or_default()
        .to_owned()
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), RUN);
    let out = dir.path().join("out");
    let o = msdg(&["--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    assert_eq!(
        first_line(&out.join("history.csv")),
        ConvergenceHistory::HEADER
    );
    assert_eq!(
        first_line(&out.join("eigens/eigenvalues.csv")),
        EIGEN_HEADER
    );
    for it in 1..=2 {
        let p = out.join(format!("indicators/iteration_{it:03}.csv"));
        assert_eq!(first_line(&p), INDICATOR_HEADER);
    }
    assert!(out.join("field.txt").exists());
    assert!(!out.join("constants.txt").exists());
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(
        summary.contains("stop_reason: maximum iterations"),
        "{summary}"
    );
    // initial row plus four color classes per iteration
    let rows = fs::read_to_string(out.join("history.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 1 + 1 + 2 * 4);
}

#[test]
fn history_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), RUN);
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = msdg(&["--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
        assert!(o.status.success());
        runs.push(fs::read(out.join("history.csv")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn verify_passes_and_reports_constants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &RUN.replace("max_iterations = 2", "max_iterations = 1"),
    );
    let out = dir.path().join("out");
    let o = msdg(&["--config", &cfg, "--out", out.to_str().unwrap(), "--verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("verification passed"));
    let constants = fs::read_to_string(out.join("constants.txt")).unwrap();
    assert!(constants.contains("gamma"));
}

#[test]
fn broken_bound_exits_with_verification_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = RUN
        .replace("max_iterations = 2", "max_iterations = 1")
        .replace("[stop]", "[online]\nbound_scale = 1e-9\n[stop]");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = msdg(&[
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--verify",
        "--quiet",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("verification"));
}

#[test]
fn dry_run_prints_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), RUN);
    let o = msdg(&["--config", &cfg, "--dry-run", "--seed", "9"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("seed = 9"));
    assert!(text.contains("gamma = 2"));
    let back = msdg::config::RunConfig::parse(&text).unwrap();
    assert_eq!(back.seed, 9);
}

#[test]
fn bad_config_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[solver]\ngamma = -1\n[field]\npreset = four-channels\ncontrast = 10\n",
    );
    let o = msdg(&["--config", &cfg, "--dry-run"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));

    let o = msdg(&["--config", "/nonexistent/run.cfg"]);
    assert_eq!(o.status.code(), Some(1));
}
