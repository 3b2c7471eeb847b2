use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::record::Cohort;
use crate::compute::RngStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.1,
            val_fraction: 0.1,
        }
    }
}

/// Stay indices of the three partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Hex SHA-256 over the stay ids of each partition.
    pub fn fingerprint(&self, cohort: &Cohort) -> String {
        let mut h = Sha256::new();
        for (tag, part) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            let mut ids: Vec<u64> = part.iter().map(|&i| cohort.stays[i].stay_id).collect();
            ids.sort_unstable();
            h.update(tag.as_bytes());
            for id in ids {
                h.update(id.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Train and validation stays together.
    pub fn train_val(&self) -> Vec<usize> {
        let mut v = self.train.clone();
        v.extend_from_slice(&self.val);
        v.sort_unstable();
        v
    }
}

/// Assigns whole patients to train, validation and test sets.
pub fn split_by_patient(cohort: &Cohort, cfg: &SplitConfig, seed: u64) -> Result<Split> {
    if cohort.is_empty() {
        return Err(Error::Data("cannot split an empty cohort".into()));
    }
    let (t, v) = (cfg.test_fraction, cfg.val_fraction);
    if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&v) || t + v > 1.0 {
        return Err(Error::Config(format!(
            "split fractions test={t} val={v} must be in [0,1] with train = 1 - test - val >= 0"
        )));
    }
    let mut by_patient: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, s) in cohort.stays.iter().enumerate() {
        by_patient.entry(s.patient_id).or_default().push(i);
    }
    let mut patients: Vec<u64> = by_patient.keys().copied().collect();
    RngStream::new(seed).shuffle(&mut patients);
    let n = patients.len();
    let n_test = ((n as f64) * t).round() as usize;
    let n_val = (((n as f64) * v).round() as usize).min(n - n_test);

    let collect = |ps: &[u64]| {
        let mut idx: Vec<usize> = ps.iter().flat_map(|p| by_patient[p].iter().copied()).collect();
        idx.sort_unstable();
        idx
    };
    Ok(Split {
        test: collect(&patients[..n_test]),
        val: collect(&patients[n_test..n_test + n_val]),
        train: collect(&patients[n_test + n_val..]),
    })
}
