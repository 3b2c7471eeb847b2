use super::*;
use crate::compute::sigmoid;

fn small_cfg() -> SynthConfig {
    SynthConfig {
        n_patients: 300,
        ..SynthConfig::default()
    }
}

#[test]
fn synthetic_generation_is_deterministic() {
    let a = generate_synthetic(&small_cfg(), 7).unwrap();
    let b = generate_synthetic(&small_cfg(), 7).unwrap();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    a.write_dir(dir_a.path()).unwrap();
    b.write_dir(dir_b.path()).unwrap();
    for f in [STAYS_FILE, EVENTS_FILE, PLANTED_FILE] {
        let x = std::fs::read(dir_a.path().join(f)).unwrap();
        let y = std::fs::read(dir_b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let c = generate_synthetic(&small_cfg(), 8).unwrap();
    assert_ne!(a.raw.events, c.raw.events);
}

#[test]
fn prevalence_without_effects_matches_intercept() {
    let cfg = SynthConfig {
        n_patients: 40_000,
        extra_stay_prob: 0.0,
        effect: 0.0,
        intercept: -2.0,
        static_effects: Default::default(),
        ..SynthConfig::default()
    };
    let s = generate_synthetic(&cfg, 3).unwrap();
    let prev = s.raw.stays.iter().filter(|r| r.label == 1).count() as f64 / s.raw.stays.len() as f64;
    assert!((prev - sigmoid(-2.0)).abs() < 0.01, "prevalence {prev}");
}

#[test]
fn planted_code_at_admission_gives_intercept_plus_effect() {
    let cfg = SynthConfig {
        intercept: -2.0,
        effect: 2.0,
        static_effects: Default::default(),
        ..SynthConfig::default()
    };
    let p = cfg.stay_probability(&[0.0], &StaticVector::default());
    assert!((p - 0.5).abs() < 1e-12);
    let far = cfg.stay_probability(&[1e6], &StaticVector::default());
    assert!((far - sigmoid(-2.0)).abs() < 1e-12);
}

#[test]
fn synthetic_cohort_loads_and_relabels() {
    let s = generate_synthetic(&small_cfg(), 11).unwrap();
    let cohort = s
        .to_cohort(&LoadOptions {
            min_code_stays: 20,
            ..LoadOptions::default()
        })
        .unwrap();
    assert_eq!(cohort.len(), s.raw.stays.len());
    assert!(cohort.dp_vocab.len() < 150);
    for stay in &cohort.stays {
        stay.statics.validate().unwrap();
        assert!(stay.events(Stream::Dp).windows(2).all(|w| w[0].elapsed >= w[1].elapsed));
    }
    let planted = s.planted_codes();
    assert_eq!(planted.len(), 10);
}

#[test]
fn invalid_synth_config_is_rejected() {
    let bad = SynthConfig {
        n_planted: 200,
        ..SynthConfig::default()
    };
    assert!(generate_synthetic(&bad, 0).is_err());
    let mut bad = SynthConfig::default();
    bad.static_effects.insert("height".into(), 1.0);
    assert!(matches!(generate_synthetic(&bad, 0), Err(crate::Error::Config(_))));
}

#[test]
fn split_keeps_patients_together() {
    let s = generate_synthetic(&small_cfg(), 5).unwrap();
    let cohort = s.to_cohort(&LoadOptions::default()).unwrap();
    let split = split_by_patient(&cohort, &SplitConfig::default(), 1).unwrap();
    let pid =
        |ix: &[usize]| -> std::collections::BTreeSet<u64> { ix.iter().map(|&i| cohort.stays[i].patient_id).collect() };
    let (tr, va, te) = (pid(&split.train), pid(&split.val), pid(&split.test));
    assert!(tr.is_disjoint(&te) && tr.is_disjoint(&va) && va.is_disjoint(&te));
    assert_eq!(split.train.len() + split.val.len() + split.test.len(), cohort.len());
    let again = split_by_patient(&cohort, &SplitConfig::default(), 1).unwrap();
    assert_eq!(split, again);
    assert_eq!(split.fingerprint(&cohort), again.fingerprint(&cohort));
}

#[test]
fn split_fraction_and_single_patient() {
    let cfg = SynthConfig {
        n_patients: 1000,
        ..SynthConfig::default()
    };
    let s = generate_synthetic(&cfg, 2).unwrap();
    let cohort = s.to_cohort(&LoadOptions::default()).unwrap();
    let split = split_by_patient(&cohort, &SplitConfig::default(), 4).unwrap();
    let test_patients: std::collections::BTreeSet<u64> =
        split.test.iter().map(|&i| cohort.stays[i].patient_id).collect();
    let frac = test_patients.len() as f64 / 1000.0;
    assert!((frac - 0.10).abs() <= 0.02);

    let one = cohort.subset(&[0]);
    let sp = split_by_patient(&one, &SplitConfig::default(), 0).unwrap();
    assert_eq!(sp.train.len() + sp.val.len() + sp.test.len(), 1);
    let bad = SplitConfig {
        test_fraction: 0.7,
        val_fraction: 0.5,
    };
    assert!(split_by_patient(&cohort, &bad, 0).is_err());
}
