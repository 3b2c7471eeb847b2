use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::statics::StaticVector;
use super::vitals::{VitalBinner, VitalCode};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// Diagnoses/procedures (elapsed in days) or medications/vitals (hours).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Dp,
    Mv,
}

impl Stream {
    pub const BOTH: [Stream; 2] = [Stream::Dp, Stream::Mv];

    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Dp => "dp",
            Stream::Mv => "mv",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(Stream::Dp),
            "mv" => Ok(Stream::Mv),
            other => Err(Error::Data(format!("unknown stream tag {other:?}"))),
        }
    }
}

/// Code occurrence; `elapsed` is the non-negative time before discharge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeEvent {
    pub code: u32,
    pub elapsed: f64,
}

/// Oldest first, ties by ascending code id.
pub fn sort_events(events: &mut [CodeEvent]) {
    events.sort_by(|a, b| b.elapsed.total_cmp(&a.elapsed).then(a.code.cmp(&b.code)));
}

#[derive(Debug, Clone, PartialEq)]
pub struct StayRecord {
    pub stay_id: u64,
    pub patient_id: u64,
    pub statics: StaticVector,
    pub dp_events: Vec<CodeEvent>,
    pub mv_events: Vec<CodeEvent>,
    pub label: u8,
}

impl StayRecord {
    pub fn events(&self, stream: Stream) -> &[CodeEvent] {
        match stream {
            Stream::Dp => &self.dp_events,
            Stream::Mv => &self.mv_events,
        }
    }

    pub fn events_mut(&mut self, stream: Stream) -> &mut Vec<CodeEvent> {
        match stream {
            Stream::Dp => &mut self.dp_events,
            Stream::Mv => &mut self.mv_events,
        }
    }

    pub fn label_f64(&self) -> f64 {
        self.label as f64
    }
}

/// A preprocessed set of stays with one vocabulary per stream.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub stays: Vec<StayRecord>,
    pub dp_vocab: Vocabulary,
    pub mv_vocab: Vocabulary,
    pub binner: VitalBinner,
    /// For each MV id, the dense vital-code index if the code is a vital.
    mv_vital_index: Vec<Option<usize>>,
}

impl Cohort {
    pub fn new(stays: Vec<StayRecord>, dp_vocab: Vocabulary, mv_vocab: Vocabulary, binner: VitalBinner) -> Self {
        let mv_vital_index = mv_vocab
            .codes()
            .iter()
            .map(|c| VitalCode::parse(c).and_then(|v| binner.dense_index(v)))
            .collect();
        Self {
            stays,
            dp_vocab,
            mv_vocab,
            binner,
            mv_vital_index,
        }
    }

    pub fn vocab(&self, stream: Stream) -> &Vocabulary {
        match stream {
            Stream::Dp => &self.dp_vocab,
            Stream::Mv => &self.mv_vocab,
        }
    }

    pub fn len(&self) -> usize {
        self.stays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stays.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.stays.iter().filter(|s| s.label == 1).count()
    }

    pub fn n_patients(&self) -> usize {
        let mut ids: Vec<u64> = self.stays.iter().map(|s| s.patient_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Dense vital index of an MV code id, if it is a vital sign.
    pub fn vital_index(&self, mv_code: u32) -> Option<usize> {
        self.mv_vital_index.get(mv_code as usize).copied().flatten()
    }

    /// Dense vital indices of the most recent recorded code of each vital kind.
    pub fn latest_vitals(&self, stay: &StayRecord) -> Vec<usize> {
        let all = self.binner.all_codes();
        let mut latest: Vec<(super::vitals::VitalKind, usize)> = Vec::new();
        // events are oldest first, so walk backwards
        for ev in stay.mv_events.iter().rev() {
            if let Some(dense) = self.vital_index(ev.code) {
                let kind = all[dense].kind;
                if !latest.iter().any(|(k, _)| *k == kind) {
                    latest.push((kind, dense));
                }
            }
        }
        let mut out: Vec<usize> = latest.into_iter().map(|(_, d)| d).collect();
        out.sort_unstable();
        out
    }

    /// Subset of stays by index, sharing vocabularies.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            stays: indices.iter().map(|&i| self.stays[i].clone()).collect(),
            dp_vocab: self.dp_vocab.clone(),
            mv_vocab: self.mv_vocab.clone(),
            binner: self.binner.clone(),
            mv_vital_index: self.mv_vital_index.clone(),
        }
    }
}
