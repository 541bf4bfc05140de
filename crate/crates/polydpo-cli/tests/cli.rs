//! End-to-end tests of the `polydpo` binary: every subcommand, flag
//! overrides, determinism of written artifacts, and failure modes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

/// A deliberately small configuration so each test runs in well under a
/// second of training; everything else stays at the defaults.
const CONFIG: &str = r#"
[model]
hidden = [16, 16]
time_embed = 8
cond_embed = 4

[data]
n_pairs = 200

[sft]
n_steps = 300

[trainer]
n_steps = 40

[sweep]
grid = [0.0, 2.0]
n_seeds = 1
n_eval_per_condition = 16
"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.toml"), CONFIG).unwrap();
    dir
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polydpo"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn the CLI binary")
}

fn assert_success(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("reading {rel}: {e}"))
}

#[test]
fn gen_data_is_deterministic_and_reports_clean_consistency() {
    let dir = setup();
    let stdout = assert_success(&run_in(dir.path(), &["--config", "config.toml", "gen-data"]));
    assert!(stdout.contains("consistency 1.0000"), "stdout: {stdout}");
    let first = read(dir.path(), "runs/clean.pairs.jsonl");
    assert_success(&run_in(dir.path(), &["--config", "config.toml", "gen-data"]));
    assert_eq!(
        first,
        read(dir.path(), "runs/clean.pairs.jsonl"),
        "re-running gen-data changed the dataset file"
    );
}

#[test]
fn conflicting_generation_hits_its_consistency_target() {
    let dir = setup();
    let stdout = assert_success(&run_in(
        dir.path(),
        &[
            "--config",
            "config.toml",
            "gen-data",
            "--regime",
            "conflicting",
            "--n-pairs",
            "2000",
            "--out",
            "conf.jsonl",
        ],
    ));
    let tail = stdout.split("consistency ").nth(1).unwrap_or_else(|| {
        panic!("no consistency figure in output: {stdout}")
    });
    let rate: f64 = tail.trim_end().trim_end_matches(')').parse().unwrap();
    assert!((rate - 0.21).abs() <= 0.03, "measured consistency {rate}, target 0.21");
}

#[test]
fn analyze_prints_and_writes_report_and_rejects_corrupt_files() {
    let dir = setup();
    assert_success(&run_in(dir.path(), &["--config", "config.toml", "gen-data"]));
    let stdout = assert_success(&run_in(
        dir.path(),
        &["analyze", "runs/clean.pairs.jsonl", "--out", "report.json"],
    ));
    assert!(stdout.contains("consistency 1.0000"), "stdout: {stdout}");
    let report = fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(report.contains("\"consistency_rate\": 1.0"), "report: {report}");

    let text = fs::read_to_string(dir.path().join("runs/clean.pairs.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{\"not\": \"a pair\"}";
    fs::write(dir.path().join("bad.jsonl"), lines.join("\n")).unwrap();
    let out = run_in(dir.path(), &["analyze", "bad.jsonl"]);
    assert!(!out.status.success(), "corrupt dataset was accepted");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 4"), "stderr does not locate the bad line: {stderr}");

    let out = run_in(dir.path(), &["analyze", "missing.jsonl"]);
    assert!(!out.status.success(), "missing dataset was accepted");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing.jsonl"), "stderr does not name the path: {stderr}");
}

#[test]
fn sft_then_train_writes_artifacts_and_plain_dpo_flag_equals_alpha_zero() {
    let dir = setup();
    assert_success(&run_in(dir.path(), &["--config", "config.toml", "gen-data"]));
    let stdout = assert_success(&run_in(dir.path(), &["--config", "config.toml", "sft"]));
    assert!(stdout.contains("diffusion loss"), "stdout: {stdout}");
    assert!(dir.path().join("runs/sft.ckpt").exists());
    assert!(dir.path().join("runs/sft.metrics.csv").exists());

    let stdout = assert_success(&run_in(
        dir.path(),
        &["--config", "config.toml", "train", "--alpha", "0", "--out", "runs/a.ckpt"],
    ));
    assert!(stdout.contains("alpha 0"), "stdout: {stdout}");
    assert_success(&run_in(
        dir.path(),
        &["--config", "config.toml", "train", "--diffusion-dpo", "--out", "runs/b.ckpt"],
    ));
    assert_eq!(
        read(dir.path(), "runs/a.metrics.csv"),
        read(dir.path(), "runs/b.metrics.csv"),
        "the plain Diffusion-DPO flag and --alpha 0 should train identically"
    );
    assert_eq!(
        read(dir.path(), "runs/a.ckpt"),
        read(dir.path(), "runs/b.ckpt"),
        "the plain Diffusion-DPO flag and --alpha 0 should produce identical checkpoints"
    );

    let out = run_in(
        dir.path(),
        &["--config", "config.toml", "train", "--alpha", "1", "--diffusion-dpo"],
    );
    assert!(!out.status.success(), "--alpha and --diffusion-dpo should conflict");
}

#[test]
fn sweep_writes_its_table_and_env_worker_override_changes_nothing() {
    let dir = setup();
    assert_success(&run_in(dir.path(), &["--config", "config.toml", "gen-data"]));
    assert_success(&run_in(dir.path(), &["--config", "config.toml", "sft"]));

    let out = Command::new(env!("CARGO_BIN_EXE_polydpo"))
        .args(["--config", "config.toml", "sweep"])
        .env("POLYDPO_WORKERS", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    let stdout = assert_success(&out);
    assert!(stdout.contains("best alpha"), "stdout: {stdout}");
    let table = fs::read_to_string(dir.path().join("runs/sweep.csv")).unwrap();
    assert!(
        table.starts_with("alpha,seed,alignment,aesthetic,compactness,axis,ring,composite"),
        "table: {table}"
    );
    assert_eq!(table.lines().count(), 3, "expected a header plus one row per cell: {table}");

    let parallel = read(dir.path(), "runs/sweep.csv");
    assert_success(&run_in(dir.path(), &["--config", "config.toml", "sweep"]));
    assert_eq!(
        parallel,
        read(dir.path(), "runs/sweep.csv"),
        "worker count changed the sweep results"
    );

    let out = Command::new(env!("CARGO_BIN_EXE_polydpo"))
        .args(["--config", "config.toml", "sweep"])
        .env("POLYDPO_WORKERS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success(), "a malformed POLYDPO_WORKERS value should fail fast");
}

#[test]
fn grad_curve_matches_the_closed_form() {
    let dir = setup();
    assert_success(&run_in(
        dir.path(),
        &["grad-curve", "--grid", "0", "--points", "3", "--out", "curve.csv"],
    ));
    assert_eq!(
        fs::read_to_string(dir.path().join("curve.csv")).unwrap(),
        "p,alpha,magnitude\n0.25,0,0.75\n0.5,0,0.5\n0.75,0,0.25\n"
    );
}

#[test]
fn unknown_config_keys_fail_fast() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[trainer]\nlearning_rte = 0.1\n").unwrap();
    let out = run_in(dir.path(), &["--config", "bad.toml", "gen-data"]);
    assert!(!out.status.success(), "a misspelled config key should be rejected");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("learning_rte"), "stderr does not name the bad key: {stderr}");
}

#[test]
fn seed_flag_overrides_the_config_root_seed() {
    let dir = setup();
    assert_success(&run_in(
        dir.path(),
        &["--config", "config.toml", "gen-data", "--out", "s0.jsonl"],
    ));
    assert_success(&run_in(
        dir.path(),
        &["--config", "config.toml", "--seed", "1", "gen-data", "--out", "s1.jsonl"],
    ));
    assert_success(&run_in(
        dir.path(),
        &["--config", "config.toml", "--seed", "1", "gen-data", "--out", "s1-again.jsonl"],
    ));
    let base = read(dir.path(), "s0.jsonl");
    let seeded = read(dir.path(), "s1.jsonl");
    assert_ne!(base, seeded, "--seed 1 reproduced the seed-0 dataset");
    assert_eq!(seeded, read(dir.path(), "s1-again.jsonl"), "--seed 1 is not reproducible");
}
