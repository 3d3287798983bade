//! End-to-end checks of the installed binary and the on-disk formats:
//! process exit codes, train/eval agreement through a checkpoint and a CSV
//! round trip, and byte-stable synth output.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fldmamba_cli::config::{AppConfig, SplitChoice};
use fldmamba_cli::csvio::{load_csv_with_choice, save_csv};
use fldmamba_cli::train::load_dataset;

const BIN: &str = env!("CARGO_BIN_EXE_fldmamba");

const TINY_CONFIG: &str = "\
model.lookback = 12
model.horizon = 4
model.blocks = 1
ssm.state_dim = 4
ilt.modes = 2
train.lr = 1e-3
train.batch = 16
train.epochs = 2
train.seed = 7
synth.t = 240
synth.variates = 2
synth.periods = 24
synth.period_amps = 1.0
synth.noise_std = 0.05
synth.seed = 3
";

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process should exit, not signal")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

/// One line of the form `key = value` extracted from report-style text.
fn line_of<'t>(text: &'t str, key: &str) -> &'t str {
    text.lines()
        .find(|l| l.starts_with(key) && l[key.len()..].starts_with(" = "))
        .unwrap_or_else(|| panic!("no `{key}` line in:\n{text}"))
}

#[test]
fn train_writes_artifacts_and_eval_reproduces_the_test_score() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.conf", TINY_CONFIG);
    let out_dir = dir.path().join("run");

    let out = run(&["train", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "train failed: {}", stderr_of(&out));
    let ck = out_dir.join("checkpoint.fldm");
    let report_path = out_dir.join("report.txt");
    assert!(ck.is_file());
    assert!(report_path.is_file());
    let report = fs::read_to_string(&report_path).unwrap();
    let stdout = stdout_of(&out);
    assert!(stdout.contains(line_of(&report, "test.mse")));

    // Evaluating the checkpoint against the raw series written to CSV must
    // reproduce the training report's test score exactly: same split, same
    // stored normalization statistics, same windows.
    let app = AppConfig::parse(TINY_CONFIG).unwrap();
    let raw = load_dataset(&app).unwrap();
    let csv = dir.path().join("series.csv");
    save_csv(&csv, &raw).unwrap();

    let out = run(&[
        "eval",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--dataset",
        csv.to_str().unwrap(),
        "--horizon",
        "4",
    ]);
    assert_eq!(code(&out), 0, "eval failed: {}", stderr_of(&out));
    let eval_text = stdout_of(&out);
    assert_eq!(
        line_of(&eval_text, "test.mse"),
        line_of(&report, "test.mse"),
        "eval and train disagree on the test score"
    );
    assert_eq!(
        line_of(&eval_text, "test.mae"),
        line_of(&report, "test.mae")
    );
}

#[test]
fn eval_rejects_a_horizon_the_checkpoint_was_not_trained_for() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.conf", TINY_CONFIG);
    let out_dir = dir.path().join("run");
    let out = run(&["train", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);

    let app = AppConfig::parse(TINY_CONFIG).unwrap();
    let csv = dir.path().join("series.csv");
    save_csv(&csv, &load_dataset(&app).unwrap()).unwrap();

    let out = run(&[
        "eval",
        "--checkpoint",
        out_dir.join("checkpoint.fldm").to_str().unwrap(),
        "--dataset",
        csv.to_str().unwrap(),
        "--horizon",
        "5",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("horizon"));
}

#[test]
fn exit_codes_separate_config_data_and_numeric_failures() {
    let dir = tempfile::tempdir().unwrap();

    // 1: config file missing.
    let out = run(&["train", "--config", dir.path().join("no.conf").to_str().unwrap()]);
    assert_eq!(code(&out), 1);

    // 1: unknown key.
    let cfg = write_config(dir.path(), "typo.conf", "synth.t = 960\nbogus.key = 1\n");
    let out = run(&["train", "--config", &cfg]);
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("bogus.key"));

    // 2: dataset file missing.
    let cfg = write_config(
        dir.path(),
        "missing_data.conf",
        "data.path = /nonexistent/series.csv\n",
    );
    let out = run(&["train", "--config", &cfg]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr_of(&out));

    // 3: numeric divergence under an absurd learning rate.
    let exploding = TINY_CONFIG.replace("train.lr = 1e-3", "train.lr = 1e308");
    let cfg = write_config(dir.path(), "exploding.conf", &exploding);
    let out_dir = dir.path().join("boom");
    let out = run(&["train", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr_of(&out));

    // 0: help.
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(stdout_of(&out).contains("bench-scaling"));

    // 1: unknown flag.
    let out = run(&["train", "--confg", "x"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn synth_output_is_byte_stable_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_config(
        dir.path(),
        "spec.conf",
        "synth.t = 960\nsynth.variates = 3\nsynth.periods = 24\nsynth.period_amps = 1.0\nsynth.seed = 9\n",
    );
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = run(&["synth", "--spec", &spec, "--out", path.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "synth failed: {}", stderr_of(&out));
    }
    let bytes_a = fs::read(&a).unwrap();
    let bytes_b = fs::read(&b).unwrap();
    assert_eq!(bytes_a, bytes_b, "same spec must serialize identically");

    let ds = load_csv_with_choice(&a, "a", "hour", SplitChoice::Auto).unwrap();
    assert_eq!(ds.len(), 960);
    assert_eq!(ds.n_variates(), 3);

    // A spec pointing at a file is not a synth spec.
    let not_synth = write_config(dir.path(), "notsynth.conf", "data.path = x.csv\n");
    let out = run(&["synth", "--spec", &not_synth, "--out", a.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn ablate_and_robust_smoke_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.conf", TINY_CONFIG);

    let out = run(&["ablate", "--config", &cfg, "--variants", "ilt"]);
    assert_eq!(code(&out), 0, "ablate failed: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("data_hash = 0x"));
    assert!(text.contains("full"));
    assert!(text.contains("w/o ilt"));

    let out = run(&["ablate", "--config", &cfg, "--variants", "warp"]);
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("warp"));

    let out = run(&["robust", "--config", &cfg, "--levels", "0.0,0.1"]);
    assert_eq!(code(&out), 0, "robust failed: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("clean_mse"));
    assert!(text.contains("worbf_delta"));
    // Level zero adds no noise, so degradation is exactly zero.
    let zero_row = text
        .lines()
        .find(|l| l.trim_start().starts_with("0 "))
        .expect("level-0 row");
    assert!(zero_row.split_whitespace().any(|f| f == "0.000000"));

    let out = run(&["robust", "--config", &cfg, "--levels", "1.5"]);
    assert_eq!(code(&out), 1);
}
