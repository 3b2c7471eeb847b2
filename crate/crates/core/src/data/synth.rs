//! Synthetic cohorts with a planted, time-decaying code signal.
//!
//! A latent condition places codes from a small "planted" set into a stay's
//! diagnosis history. The readmission logit is
//! `intercept + effect * max_j exp(-elapsed_j / decay_days) + sum_k beta_k x_k`,
//! the maximum running over planted events of the stay (zero when absent).

use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, Poisson, Zipf};
use serde::{Deserialize, Serialize};

use super::io::{LoadOptions, RawCohort, RawEvent, RawStay};
use super::record::{Cohort, Stream};
use super::statics::{static_index, StaticVector, INDICATOR_GROUPS};
use super::vitals::{VitalBinner, VitalKind, VITAL_PREFIX};
use crate::compute::{sigmoid, RngStream};
use crate::error::{Error, Result};

pub const PLANTED_FILE: &str = "planted.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patients: usize,
    /// Probability of each additional stay for a patient (geometric).
    pub extra_stay_prob: f64,
    pub dp_vocab_size: usize,
    pub n_medications: usize,
    pub n_planted: usize,
    /// Log-odds added by a planted code at elapsed 0.
    pub effect: f64,
    pub intercept: f64,
    pub decay_days: f64,
    /// Fraction of stays carrying the latent condition that emits planted codes.
    pub condition_rate: f64,
    /// Probability that a planted code belongs to the current admission.
    pub planted_recent_prob: f64,
    /// Mean of the exponential elapsed-time distribution of past diagnosis codes.
    pub history_mean_days: f64,
    pub dp_codes_per_admission: f64,
    pub prior_admission_rate: f64,
    pub meds_per_stay: f64,
    pub vital_rounds: f64,
    pub zipf_exponent: f64,
    /// Probability that a stay follows elective surgery.
    pub elective_rate: f64,
    /// Log-odds effect per unit of a named static feature.
    pub static_effects: BTreeMap<String, f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 5000,
            extra_stay_prob: 0.25,
            dp_vocab_size: 150,
            n_medications: 18,
            n_planted: 10,
            effect: 5.0,
            intercept: -5.25,
            decay_days: 30.0,
            condition_rate: 0.25,
            planted_recent_prob: 0.5,
            history_mean_days: 90.0,
            dp_codes_per_admission: 5.0,
            prior_admission_rate: 0.5,
            meds_per_stay: 4.0,
            vital_rounds: 2.0,
            zipf_exponent: 1.0,
            elective_rate: 0.3,
            static_effects: BTreeMap::from([
                ("age_years".to_string(), 0.02),
                ("elective_surgery".to_string(), -1.5),
                ("n_recent_admissions".to_string(), 0.3),
            ]),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_planted > self.dp_vocab_size {
            return bad(format!(
                "n_planted {} exceeds dp_vocab_size {}",
                self.n_planted, self.dp_vocab_size
            ));
        }
        if self.dp_vocab_size == self.n_planted || self.n_medications == 0 {
            return bad("need at least one background diagnosis code and one medication".into());
        }
        for (name, p) in [
            ("extra_stay_prob", self.extra_stay_prob),
            ("condition_rate", self.condition_rate),
            ("planted_recent_prob", self.planted_recent_prob),
            ("elective_rate", self.elective_rate),
        ] {
            if !(0.0..1.0).contains(&p) && !(name != "extra_stay_prob" && p == 1.0) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if !(self.decay_days > 0.0 && self.history_mean_days > 0.0) {
            return bad("decay_days and history_mean_days must be positive".into());
        }
        if !(self.dp_codes_per_admission >= 1.0 && self.meds_per_stay >= 1.0 && self.vital_rounds >= 1.0) {
            return bad("per-stay event rates must be at least 1".into());
        }
        if !(self.zipf_exponent >= 0.0 && self.prior_admission_rate >= 0.0) {
            return bad("zipf_exponent and prior_admission_rate must be non-negative".into());
        }
        for name in self.static_effects.keys() {
            if static_index(name).is_none() {
                return bad(format!("unknown static feature {name:?} in static_effects"));
            }
        }
        if !(self.effect.is_finite() && self.intercept.is_finite()) {
            return bad("effect and intercept must be finite".into());
        }
        Ok(())
    }

    /// Readmission log-odds of a stay given the elapsed times of its planted codes.
    pub fn stay_logit(&self, planted_elapsed: &[f64], statics: &StaticVector) -> f64 {
        let decay = planted_elapsed
            .iter()
            .map(|t| (-t / self.decay_days).exp())
            .fold(0.0, f64::max);
        let statics_term: f64 = self
            .static_effects
            .iter()
            .map(|(name, beta)| beta * statics.get(name).unwrap_or(0.0))
            .sum();
        self.intercept + self.effect * decay + statics_term
    }

    pub fn stay_probability(&self, planted_elapsed: &[f64], statics: &StaticVector) -> f64 {
        sigmoid(self.stay_logit(planted_elapsed, statics))
    }
}

pub fn dp_code_name(i: usize) -> String {
    format!("dx_{i:03}")
}

pub fn med_code_name(i: usize) -> String {
    format!("med_{i:02}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCode {
    pub code: String,
    pub effect: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub raw: RawCohort,
    pub planted: Vec<PlantedCode>,
    /// Generating probability of each stay, aligned with `raw.stays`.
    pub true_risk: Vec<f64>,
    pub config: SynthConfig,
}

impl SyntheticCohort {
    pub fn to_cohort(&self, opts: &LoadOptions) -> Result<Cohort> {
        Cohort::from_raw(&self.raw, &VitalBinner::oasis(), opts)
    }

    pub fn write_planted<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["code", "effect"])?;
        for p in &self.planted {
            wtr.write_record([p.code.clone(), p.effect.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<planted writer>", e))?;
        Ok(())
    }

    /// Writes `stays.csv`, `events.csv` and `planted.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        self.raw.write_dir(dir)?;
        let p = dir.join(PLANTED_FILE);
        self.write_planted(std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?)
    }

    pub fn planted_codes(&self) -> Vec<String> {
        self.planted.iter().map(|p| p.code.clone()).collect()
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn poisson(rng: &mut RngStream, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

fn exponential(rng: &mut RngStream, mean: f64) -> f64 {
    -mean * (1.0 - rng.uniform()).ln()
}

/// Draws from a categorical distribution given by cumulative weights.
fn categorical(rng: &mut RngStream, probs: &[f64]) -> Option<usize> {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Some(i);
        }
    }
    None
}

// Marginal frequencies of the non-reference levels, roughly following MIMIC-III adult ICU stays.
const ADMISSION_PROBS: [f64; 5] = [0.20, 0.002, 0.19, 0.17, 0.005];
const INSURANCE_PROBS: [f64; 4] = [0.03, 0.09, 0.33, 0.01];
const MARITAL_PROBS: [f64; 3] = [0.045, 0.265, 0.21];
const ETHNICITY_PROBS: [f64; 5] = [0.023, 0.10, 0.036, 0.11, 0.014];

fn set_group(statics: &mut StaticVector, group: usize, level: Option<usize>) {
    if let Some(l) = level {
        statics.0[INDICATOR_GROUPS[group].1.start + l] = 1.0;
    }
}

fn vital_value(rng: &mut RngStream, kind: VitalKind) -> f64 {
    let v = match kind {
        VitalKind::Gcs => {
            let u = rng.uniform();
            if u < 0.6 {
                15.0
            } else if u < 0.75 {
                14.0
            } else {
                (3 + rng.below(11)) as f64
            }
        }
        VitalKind::HeartRate => 85.0 + 18.0 * rng.normal(),
        VitalKind::MeanArterialPressure => 80.0 + 15.0 * rng.normal(),
        VitalKind::RespiratoryRate => 19.0 + 6.0 * rng.normal(),
        VitalKind::Temperature => 36.8 + 0.8 * rng.normal(),
        VitalKind::UrineOutput => 1800.0 + 800.0 * rng.normal(),
        VitalKind::Ventilation => {
            if rng.bernoulli(0.2) {
                1.0
            } else {
                0.0
            }
        }
    };
    ((v.max(0.0)) * 100.0).round() / 100.0
}

/// Generates a cohort; identical `(cfg, seed)` gives an identical cohort.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SyntheticCohort> {
    cfg.validate()?;
    let mut rng = RngStream::new(seed);

    let mut dp_ids: Vec<usize> = (0..cfg.dp_vocab_size).collect();
    rng.substream(1).shuffle(&mut dp_ids);
    let mut planted_ids: Vec<usize> = dp_ids[..cfg.n_planted].to_vec();
    planted_ids.sort_unstable();
    let background: Vec<usize> = (0..cfg.dp_vocab_size).filter(|i| !planted_ids.contains(i)).collect();
    let dp_zipf = Zipf::new(background.len() as f64, cfg.zipf_exponent).map_err(|e| Error::Config(e.to_string()))?;
    let med_zipf =
        Zipf::new(cfg.n_medications as f64, 0.7 * cfg.zipf_exponent).map_err(|e| Error::Config(e.to_string()))?;

    let mut raw = RawCohort::default();
    let mut true_risk = Vec::new();
    let mut stay_id = 0u64;

    for patient in 0..cfg.n_patients {
        let patient_id = patient as u64 + 1;
        let age0 = rng.uniform_range(18.0, 90.0);
        let male = rng.bernoulli(0.56);
        let ethnicity = categorical(&mut rng, &ETHNICITY_PROBS);
        let marital = categorical(&mut rng, &MARITAL_PROBS);
        let mut n_stays = 1;
        while n_stays < 5 && rng.bernoulli(cfg.extra_stay_prob) {
            n_stays += 1;
        }
        for k in 0..n_stays {
            stay_id += 1;
            let mut statics = StaticVector::default();
            let icu_los = round3((0.5 - 3.0 * (1.0 - rng.uniform()).ln()).min(30.0));
            let n_prior = poisson(&mut rng, cfg.prior_admission_rate);
            statics.set("icu_los_days", icu_los)?;
            statics.set("pre_icu_los_days", round3(-2.0 * (1.0 - rng.uniform()).ln()))?;
            statics.set("age_years", round3((age0 + k as f64 * 0.3).min(100.0)))?;
            statics.set("n_recent_admissions", n_prior as f64)?;
            statics.set("gender_male", if male { 1.0 } else { 0.0 })?;
            statics.set(
                "elective_surgery",
                if rng.bernoulli(cfg.elective_rate) { 1.0 } else { 0.0 },
            )?;
            let adm = categorical(&mut rng, &ADMISSION_PROBS);
            set_group(&mut statics, 0, adm);
            let ins = categorical(&mut rng, &INSURANCE_PROBS);
            set_group(&mut statics, 1, ins);
            set_group(&mut statics, 2, marital);
            set_group(&mut statics, 3, ethnicity);

            let dp_event = |code: usize, elapsed: f64, raw: &mut RawCohort| {
                raw.events.push(RawEvent {
                    stay_id,
                    stream: Stream::Dp,
                    code: dp_code_name(code),
                    elapsed,
                });
            };
            // current admission, then prior admissions
            let n_cur = 1 + poisson(&mut rng, cfg.dp_codes_per_admission - 1.0);
            for _ in 0..n_cur {
                let c = background[dp_zipf.sample(&mut rng) as usize - 1];
                dp_event(c, 0.0, &mut raw);
            }
            for _ in 0..n_prior {
                let t = round3(1.0 + exponential(&mut rng, cfg.history_mean_days));
                let n = 1 + poisson(&mut rng, cfg.dp_codes_per_admission - 1.0);
                for _ in 0..n {
                    let c = background[dp_zipf.sample(&mut rng) as usize - 1];
                    dp_event(c, t, &mut raw);
                }
            }
            let mut planted_elapsed = Vec::new();
            if rng.bernoulli(cfg.condition_rate) {
                let n = 1 + poisson(&mut rng, 0.5);
                for _ in 0..n {
                    let c = planted_ids[rng.below(planted_ids.len())];
                    let t = if rng.bernoulli(cfg.planted_recent_prob) {
                        0.0
                    } else {
                        round3(exponential(&mut rng, cfg.history_mean_days))
                    };
                    planted_elapsed.push(t);
                    dp_event(c, t, &mut raw);
                }
            }

            let los_hours = icu_los * 24.0;
            let n_meds = 1 + poisson(&mut rng, cfg.meds_per_stay - 1.0);
            for _ in 0..n_meds {
                let m = med_zipf.sample(&mut rng) as usize - 1;
                let t = round3(rng.uniform_range(0.0, los_hours));
                raw.events.push(RawEvent {
                    stay_id,
                    stream: Stream::Mv,
                    code: med_code_name(m),
                    elapsed: t,
                });
            }
            let n_rounds = 1 + poisson(&mut rng, cfg.vital_rounds - 1.0);
            for _ in 0..n_rounds {
                let t = round3(rng.uniform_range(0.0, los_hours));
                for kind in VitalKind::ALL {
                    if !rng.bernoulli(0.5) {
                        continue;
                    }
                    let v = vital_value(&mut rng, kind);
                    raw.events.push(RawEvent {
                        stay_id,
                        stream: Stream::Mv,
                        code: format!("{VITAL_PREFIX}{}={v}", kind.name()),
                        elapsed: t,
                    });
                }
            }

            let p = cfg.stay_probability(&planted_elapsed, &statics);
            let label = u8::from(rng.bernoulli(p));
            true_risk.push(p);
            raw.stays.push(RawStay {
                stay_id,
                patient_id,
                label,
                statics,
            });
        }
    }
    Ok(SyntheticCohort {
        raw,
        planted: planted_ids
            .iter()
            .map(|&i| PlantedCode {
                code: dp_code_name(i),
                effect: cfg.effect,
            })
            .collect(),
        true_risk,
        config: cfg.clone(),
    })
}
