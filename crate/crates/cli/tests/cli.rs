use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3
architectures = ["LogisticBaseline"]
top_k = 3

[synth]
n_patients = 150
dp_vocab_size = 20
n_medications = 5
n_planted = 3
intercept = -2.0

[load]
min_code_stays = 2

[train]
epochs = 2

[bayes]
max_epochs = 2
"#;

fn readmit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_readmit"))
        .args(args)
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    dir
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn synth_is_byte_reproducible() {
    let dir = setup();
    assert_ok(&readmit(&["--config", "run.toml", "--out", "a", "synth"], dir.path()));
    assert_ok(&readmit(&["--config", "run.toml", "--out", "b", "synth"], dir.path()));
    for f in ["stays.csv", "events.csv", "planted.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn baseline_benchmark_emits_one_row_then_report() {
    let dir = setup();
    let out = readmit(&["--config", "run.toml", "--out", "res", "benchmark"], dir.path());
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Logistic"), "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("res/benchmark.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(dir.path().join("res/split_hash.txt").exists());
    assert_ok(&readmit(&["--out", "res", "report"], dir.path()));
    let report = std::fs::read_to_string(dir.path().join("res/report.md")).unwrap();
    assert!(report.contains("## Model comparison") && report.contains("0.331"));
}

#[test]
fn arch_and_seed_flags_override_the_config() {
    let dir = setup();
    let out = readmit(
        &[
            "--config",
            "run.toml",
            "--seed",
            "11",
            "--arch",
            "AttnConcatTime",
            "--out",
            "t",
            "train",
        ],
        dir.path(),
    );
    assert_ok(&out);
    let manifest = std::fs::read_to_string(dir.path().join("t/AttnConcatTime/manifest.json")).unwrap();
    assert!(manifest.contains("AttnConcatTime"));
    let two = readmit(
        &[
            "--config", "run.toml", "--arch", "OdeRnn", "--arch", "OdeAttn", "--out", "t", "train",
        ],
        dir.path(),
    );
    assert!(!two.status.success());
}

#[test]
fn interpret_with_stay_query_and_missing_checkpoint() {
    let dir = setup();
    let out = readmit(
        &["--config", "run.toml", "--out", "i", "interpret", "--stay-id", "1"],
        dir.path(),
    );
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("stay 1: risk"), "{stdout}");
    assert!(dir.path().join("i/odds_ratios.csv").exists());
    assert!(dir.path().join("i/code_scores.md").exists());
    assert!(dir.path().join("i/bbb/rho.bin").exists());

    let again = readmit(
        &[
            "--config",
            "run.toml",
            "--out",
            "j",
            "interpret",
            "--checkpoint",
            "i/bbb",
        ],
        dir.path(),
    );
    assert_ok(&again);
    let missing = readmit(
        &[
            "--config",
            "run.toml",
            "--out",
            "j",
            "interpret",
            "--checkpoint",
            "nowhere",
        ],
        dir.path(),
    );
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("checkpoint"));
}

#[test]
fn environment_overrides_apply() {
    let dir = setup();
    let out = Command::new(env!("CARGO_BIN_EXE_readmit"))
        .args(["--config", "run.toml", "--out", "e", "synth"])
        .env("READMIT_SYNTH__N_PATIENTS", "0")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_ok(&out);
    let stays = std::fs::read_to_string(dir.path().join("e/stays.csv")).unwrap();
    assert_eq!(stays.lines().count(), 1);
}

#[test]
fn missing_seed_and_bad_arch_fail_cleanly() {
    let dir = setup();
    assert!(!readmit(&["synth"], dir.path()).status.success());
    assert!(!readmit(&["--seed", "1", "--arch", "Bogus", "synth"], dir.path())
        .status
        .success());
    assert!(!readmit(&["--config", "absent.toml", "synth"], dir.path())
        .status
        .success());
}
