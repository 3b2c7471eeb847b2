use super::*;
use crate::data::SynthConfig;
use crate::training::TrainConfig;

fn small_config(seed: u64) -> RunConfig {
    let text = format!(
        r#"
seed = {seed}
architectures = ["LogisticBaseline", "AttnConcatTime"]
top_k = 3

[synth]
n_patients = 120
dp_vocab_size = 20
n_medications = 5
n_planted = 3
intercept = -2.0

[load]
min_code_stays = 2

[train]
epochs = 2
batch_size = 32

[bayes]
max_epochs = 3
"#
    );
    RunConfig::from_toml_str(&text, std::iter::empty()).unwrap()
}

#[test]
fn config_defaults_and_overrides() {
    let cfg = RunConfig::from_toml_str("seed = 4", std::iter::empty()).unwrap();
    assert_eq!(cfg.seed, 4);
    assert_eq!(cfg.train, TrainConfig::default());
    assert_eq!(cfg.synth, SynthConfig::default());
    assert_eq!(cfg.architectures.len(), 14);
    assert_eq!(cfg.jobs, 1);

    let env = vec![
        ("READMIT_TRAIN__EPOCHS".to_string(), "7".to_string()),
        ("READMIT_TRAIN__LR".to_string(), "0.01".to_string()),
        ("READMIT_SEED".to_string(), "9".to_string()),
        ("READMIT_ARCHITECTURES".to_string(), r#"["OdeRnn"]"#.to_string()),
        ("READMIT_OUT_DIR".to_string(), "elsewhere".to_string()),
        ("HOME".to_string(), "/root".to_string()),
    ];
    let cfg = RunConfig::from_toml_str("seed = 4\n[train]\nepochs = 3\n", env).unwrap();
    assert_eq!(cfg.train.epochs, 7);
    assert_eq!(cfg.train.lr, 0.01);
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.architectures, vec![ArchitectureSpec::OdeRnn]);
    assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
}

#[test]
fn config_errors() {
    assert!(RunConfig::from_toml_str("", std::iter::empty()).is_err());
    assert!(RunConfig::from_toml_str("seed = 1\nbogus = 2", std::iter::empty()).is_err());
    assert!(RunConfig::from_toml_str("seed = 1\narchitectures = [\"Nope\"]", std::iter::empty()).is_err());
    assert!(RunConfig::from_toml_str("seed = 1\narchitectures = []", std::iter::empty()).is_err());
    assert!(RunConfig::from_toml_str("seed = 1\n[train]\ndropout = 1.5", std::iter::empty()).is_err());
    let env = vec![("READMIT_TRAIN__".to_string(), "1".to_string())];
    assert!(RunConfig::from_toml_str("seed = 1", env).is_err());
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = small_config(3);
    let text = cfg.to_toml().unwrap();
    let back = RunConfig::from_toml_str(&text, std::iter::empty()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn synth_files_are_reproducible_and_empty_cohorts_have_headers() {
    let cfg = small_config(2);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_synth(&cfg, a.path()).unwrap();
    cmd_synth(&cfg, b.path()).unwrap();
    for f in [
        crate::data::STAYS_FILE,
        crate::data::EVENTS_FILE,
        crate::data::PLANTED_FILE,
    ] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }

    let mut empty = cfg.clone();
    empty.synth.n_patients = 0;
    let dir = tempfile::tempdir().unwrap();
    cmd_synth(&empty, dir.path()).unwrap();
    for f in [crate::data::STAYS_FILE, crate::data::EVENTS_FILE] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().count(), 1, "{f}: {text}");
    }
}

#[test]
fn benchmark_rows_share_a_split_and_reproduce() {
    let cfg = small_config(5);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = cmd_benchmark(&cfg, a.path()).unwrap();
    let mut par = cfg.clone();
    par.jobs = 2;
    let rb = cmd_benchmark(&par, b.path()).unwrap();
    assert_eq!(ra.rows.len(), 2);
    assert!(ra.rows.iter().all(|r| r.error.is_none()));
    for f in [BENCHMARK_CSV, BENCHMARK_MD, SPLIT_HASH_FILE] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }
    assert_eq!(ra.split_hash, rb.split_hash);
    let md = std::fs::read_to_string(a.path().join(BENCHMARK_MD)).unwrap();
    assert!(md.contains("| Architecture | AP | AUROC | F1 | Sensitivity | Specificity |"));
    assert!(md.contains("0.331") && md.contains("0.257"));
    let timings = std::fs::read_to_string(a.path().join(TIMINGS_CSV)).unwrap();
    assert_eq!(timings.lines().count(), 3);
}

#[test]
fn benchmark_records_failures_per_row() {
    let mut cfg = small_config(5);
    cfg.architectures = vec![ArchitectureSpec::LogisticBaseline];
    cfg.train.class_weight = crate::training::ClassWeight::Auto;
    let mut cohort = load_run_cohort(&cfg).unwrap();
    cohort.stays.iter_mut().for_each(|s| s.label = 0);
    let report = run_benchmark(&cfg, &cohort).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert!(report.rows[0].error.is_some());
    let csv_row = BenchmarkCsvRow::from_row(&report.rows[0]);
    assert!(csv_row.metrics().is_none());
    assert!(benchmark_markdown(&[csv_row]).contains("failed"));
}

#[test]
fn train_writes_checkpoint_and_logs() {
    let cfg = small_config(6);
    let dir = tempfile::tempdir().unwrap();
    let t = cmd_train(&cfg, ArchitectureSpec::AttnConcatTime, dir.path()).unwrap();
    let sub = dir.path().join("AttnConcatTime");
    let back = crate::models::Model::load(&sub).unwrap();
    assert_eq!(back.params, t.outcome.model.params);
    assert!(sub.join("epochs.csv").exists() && sub.join("metrics.json").exists());
}

#[test]
fn interpret_writes_tables_and_reloads() {
    let cfg = small_config(7);
    let dir = tempfile::tempdir().unwrap();
    let stay = load_run_cohort(&cfg).unwrap().stays[0].stay_id;
    let first = cmd_interpret(&cfg, dir.path(), None, Some(stay)).unwrap();
    assert_eq!(first.odds_ratios.len(), crate::data::N_STATIC + 2);
    let (id, risk) = first.stay_risk.unwrap();
    assert_eq!(id, stay);
    assert!(risk.lo <= risk.point && risk.point <= risk.hi);
    for f in [ODDS_RATIOS_CSV, ODDS_RATIOS_MD, CODE_SCORES_MD, ELBO_CSV] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let md = std::fs::read_to_string(dir.path().join(CODE_SCORES_MD)).unwrap();
    assert_eq!(md.matches("| 1 |").count(), 2);

    let out2 = tempfile::tempdir().unwrap();
    let again = cmd_interpret(&cfg, out2.path(), Some(&dir.path().join(BBB_DIR)), None).unwrap();
    assert_eq!(again.odds_ratios, first.odds_ratios);
    assert_eq!(
        std::fs::read(dir.path().join(ODDS_RATIOS_CSV)).unwrap(),
        std::fs::read(out2.path().join(ODDS_RATIOS_CSV)).unwrap()
    );

    assert!(cmd_interpret(&cfg, out2.path(), Some(&dir.path().join("absent")), None).is_err());
    assert!(cmd_interpret(&cfg, out2.path(), Some(&dir.path().join(BBB_DIR)), Some(u64::MAX)).is_err());

    let report = cmd_report(dir.path(), 3).unwrap();
    let text = std::fs::read_to_string(report).unwrap();
    assert!(text.contains("## Odds ratios") && text.contains("## Code risk scores"));
    assert!(cmd_report(tempfile::tempdir().unwrap().path(), 3).is_err());
}

#[test]
fn degenerate_zero_posterior_formats_as_unit_odds() {
    let row = OddsRatio {
        covariate: "gender_male".into(),
        or_mean: 1.0,
        or_lo: 1.0,
        or_hi: 1.0,
        or_at_mean: 1.0,
    };
    let md = odds_ratio_markdown(&[row]);
    assert!(md.contains("| Gender: Male | 1.000 [1.000,1.000] | 1.000 |"), "{md}");
}
