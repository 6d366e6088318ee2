//! End-to-end checks of the `farebid` binary: exit codes, output files,
//! determinism, and report round-trips.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn farebid() -> Command {
    Command::new(env!("CARGO_BIN_EXE_farebid"))
}

fn repo_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("farebid-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).expect("create temp dir");
    dir
}

fn run_ok(output: &Output) {
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn run_writes_three_outputs_and_is_deterministic() {
    let out_a = temp_dir("run-a");
    let out_b = temp_dir("run-b");
    for out in [&out_a, &out_b] {
        let output = farebid()
            .args(["run"])
            .arg(repo_file("scenario-t2.toml"))
            .args(["--seed", "11"])
            .arg("--out")
            .arg(out)
            .output()
            .expect("spawn");
        run_ok(&output);
    }
    for name in ["report.json", "metrics.csv", "events.jsonl"] {
        let a = fs::read(out_a.join(name)).expect("output written");
        let b = fs::read(out_b.join(name)).expect("output written");
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    // The report round-trips through its own parser.
    let text = fs::read_to_string(out_a.join("report.json")).expect("report");
    let report = farebid_core::report::RunReport::from_json(&text).expect("parses");
    assert_eq!(report.to_json(), text);
    assert_eq!(report.seed, 11);
    assert!(report.ledger.balanced);
}

#[test]
fn env_var_sets_default_output_directory() {
    let out = temp_dir("env-out");
    let output = farebid()
        .env("FAREBID_OUT", &out)
        .args(["run"])
        .arg(repo_file("scenario-t2.toml"))
        .output()
        .expect("spawn");
    run_ok(&output);
    assert!(out.join("report.json").exists());
}

#[test]
fn run_refuses_overwrite_without_force() {
    let out = temp_dir("force");
    let mut base = farebid()
        .args(["run"])
        .arg(repo_file("scenario-t2.toml"))
        .arg("--out")
        .arg(&out)
        .output()
        .expect("spawn");
    run_ok(&base);
    base = farebid()
        .args(["run"])
        .arg(repo_file("scenario-t2.toml"))
        .arg("--out")
        .arg(&out)
        .output()
        .expect("spawn");
    assert_eq!(base.status.code(), Some(2), "existing outputs need --force");
    base = farebid()
        .args(["run"])
        .arg(repo_file("scenario-t2.toml"))
        .arg("--out")
        .arg(&out)
        .arg("--force")
        .output()
        .expect("spawn");
    run_ok(&base);
}

#[test]
fn malformed_scenario_exits_two_with_diagnostics() {
    let dir = temp_dir("malformed");
    let path = dir.join("broken.toml");
    fs::write(&path, "format_version = 1\nseed = \"not a number\"\n").expect("write");
    let output = farebid().args(["run"]).arg(&path).output().expect("spawn");
    assert_eq!(output.status.code(), Some(2));
    assert!(!output.stderr.is_empty(), "diagnostics go to stderr");

    let oversized = dir.join("oversized.toml");
    let text = fs::read_to_string(repo_file("scenario-t2.toml")).expect("read");
    fs::write(&oversized, text.replace("max_selected = 15", "max_selected = 20"))
        .expect("write");
    let output = farebid().args(["run"]).arg(&oversized).output().expect("spawn");
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("15"), "names the violated bound: {stderr}");
}

#[test]
fn verify_reports_and_exits_zero() {
    let output = farebid()
        .args(["verify"])
        .arg(repo_file("instance-multistable.toml"))
        .output()
        .expect("spawn");
    run_ok(&output);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("dsic_gap"));
    assert!(stdout.contains("fixed_points"));
}

#[test]
fn oversized_instance_exits_three() {
    let dir = temp_dir("oversized-instance");
    let path = dir.join("instance.toml");
    let mut text = fs::read_to_string(repo_file("instance-multistable.toml")).expect("read");
    // Four drivers with seven levels plus no-bid exceeds the bound.
    text = text.replace("no_bid_allowed = false", "no_bid_allowed = true");
    let driver_block = "\n[[drivers]]\ncost_variable = 500\ncost_fixed = 200\neta_seconds = 100\nquality = 0.5\nlevels = [600, 650, 700, 750, 800, 850, 900]\n";
    for _ in 0..2 {
        text.push_str(driver_block);
    }
    text = text.replace(
        "levels = [\n    600,\n    800,\n    1000,\n]",
        "levels = [600, 650, 700, 750, 800, 850, 900]",
    );
    fs::write(&path, &text).expect("write");
    let output = farebid().args(["verify"]).arg(&path).output().expect("spawn");
    assert_eq!(
        output.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    let malformed = dir.join("broken.toml");
    fs::write(&malformed, "mechanism = 7\n").expect("write");
    let output = farebid().args(["verify"]).arg(&malformed).output().expect("spawn");
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn compare_emits_paired_rows_and_summary() {
    let out = temp_dir("compare");
    let output = farebid()
        .args(["compare"])
        .arg(repo_file("scenario-t2.toml"))
        .args(["--seed-from", "0", "--seed-to", "8"])
        .arg("--out")
        .arg(&out)
        .output()
        .expect("spawn");
    run_ok(&output);
    let csv = fs::read_to_string(out.join("compare.csv")).expect("csv written");
    assert_eq!(csv.lines().count(), 9, "header plus one row per seed");
    assert!(csv.starts_with("seed,mechanism,mech_dwl,base_dwl"));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("sign test"), "summary on stderr: {stderr}");

    // Empty seed range is a usage error.
    let empty = farebid()
        .args(["compare"])
        .arg(repo_file("scenario-t2.toml"))
        .args(["--seed-from", "5", "--seed-to", "5"])
        .arg("--out")
        .arg(&out)
        .output()
        .expect("spawn");
    assert_eq!(empty.status.code(), Some(2));
}
