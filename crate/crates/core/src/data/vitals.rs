//! Vital-sign categorisation following the OASIS severity score bins.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VitalKind {
    Gcs,
    HeartRate,
    MeanArterialPressure,
    RespiratoryRate,
    Temperature,
    UrineOutput,
    Ventilation,
}

impl VitalKind {
    pub const ALL: [VitalKind; 7] = [
        VitalKind::Gcs,
        VitalKind::HeartRate,
        VitalKind::MeanArterialPressure,
        VitalKind::RespiratoryRate,
        VitalKind::Temperature,
        VitalKind::UrineOutput,
        VitalKind::Ventilation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VitalKind::Gcs => "gcs",
            VitalKind::HeartRate => "heart_rate",
            VitalKind::MeanArterialPressure => "map",
            VitalKind::RespiratoryRate => "resp_rate",
            VitalKind::Temperature => "temperature",
            VitalKind::UrineOutput => "urine_output",
            VitalKind::Ventilation => "ventilation",
        }
    }

    fn unit(self) -> &'static str {
        match self {
            VitalKind::Gcs => "",
            VitalKind::HeartRate => " bpm",
            VitalKind::MeanArterialPressure => " mmHg",
            VitalKind::RespiratoryRate => " breaths/min",
            VitalKind::Temperature => " °C",
            VitalKind::UrineOutput => " mL/day",
            VitalKind::Ventilation => "",
        }
    }
}

impl fmt::Display for VitalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VitalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VitalKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown vital-sign kind {s:?}")))
    }
}

/// A binned vital-sign code: kind plus bin index within that kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VitalCode {
    pub kind: VitalKind,
    pub bin: usize,
}

pub const VITAL_PREFIX: &str = "vital:";

impl VitalCode {
    /// Canonical code string, e.g. `vital:temperature:1`.
    pub fn code(&self) -> String {
        format!("{VITAL_PREFIX}{}:{}", self.kind.name(), self.bin)
    }

    pub fn parse(code: &str) -> Option<VitalCode> {
        let rest = code.strip_prefix(VITAL_PREFIX)?;
        let (kind, bin) = rest.split_once(':')?;
        Some(VitalCode {
            kind: kind.parse().ok()?,
            bin: bin.parse().ok()?,
        })
    }
}

#[derive(Debug, Clone)]
struct KindBins {
    kind: VitalKind,
    /// Lower edges of bins 1..; bin 0 is everything below the first edge.
    edges: Vec<f64>,
    labels: Vec<&'static str>,
}

/// Maps raw measurements to one of 32 vital-sign codes. Bins are half-open
/// `[lo, hi)` and together cover the real line for every kind. Ventilation
/// yields a single code for ventilated measurements and none otherwise.
#[derive(Debug, Clone)]
pub struct VitalBinner {
    kinds: Vec<KindBins>,
}

impl Default for VitalBinner {
    fn default() -> Self {
        Self::oasis()
    }
}

impl VitalBinner {
    pub fn oasis() -> Self {
        let k = |kind, edges: &[f64], labels: &[&'static str]| KindBins {
            kind,
            edges: edges.to_vec(),
            labels: labels.to_vec(),
        };
        Self {
            kinds: vec![
                k(VitalKind::Gcs, &[8.0, 14.0, 15.0], &["3-7", "8-13", "14", "15"]),
                k(
                    VitalKind::HeartRate,
                    &[33.0, 89.0, 107.0, 126.0],
                    &["<33", "33-88", "89-106", "107-125", ">125"],
                ),
                k(
                    VitalKind::MeanArterialPressure,
                    &[20.65, 51.0, 61.33, 143.45],
                    &["<20.65", "20.65-50.99", "51-61.32", "61.33-143.44", ">143.44"],
                ),
                k(
                    VitalKind::RespiratoryRate,
                    &[6.0, 13.0, 23.0, 31.0, 45.0],
                    &["<6", "6-12", "13-22", "23-30", "31-44", ">44"],
                ),
                k(
                    VitalKind::Temperature,
                    &[33.22, 35.94, 36.40, 36.89, 39.89],
                    &[
                        "<33.22",
                        "33.22-35.93",
                        "35.94-36.39",
                        "36.40-36.88",
                        "36.89-39.88",
                        ">39.88",
                    ],
                ),
                k(
                    VitalKind::UrineOutput,
                    &[671.0, 1427.0, 2544.0, 6897.0],
                    &["<671", "671-1426.99", "1427-2543.99", "2544-6896", ">6896"],
                ),
                k(VitalKind::Ventilation, &[], &["ventilated"]),
            ],
        }
    }

    fn bins(&self, kind: VitalKind) -> &KindBins {
        self.kinds.iter().find(|k| k.kind == kind).expect("every kind has bins")
    }

    pub fn n_bins(&self, kind: VitalKind) -> usize {
        self.bins(kind).labels.len()
    }

    /// Number of distinct codes across all kinds.
    pub fn n_codes(&self) -> usize {
        self.kinds.iter().map(|k| k.labels.len()).sum()
    }

    /// All codes in a fixed order; the position is the code's dense index.
    pub fn all_codes(&self) -> Vec<VitalCode> {
        self.kinds
            .iter()
            .flat_map(|k| (0..k.labels.len()).map(move |bin| VitalCode { kind: k.kind, bin }))
            .collect()
    }

    pub fn dense_index(&self, code: VitalCode) -> Option<usize> {
        let mut base = 0;
        for k in &self.kinds {
            if k.kind == code.kind {
                return (code.bin < k.labels.len()).then_some(base + code.bin);
            }
            base += k.labels.len();
        }
        None
    }

    pub fn label(&self, code: VitalCode) -> String {
        let k = self.bins(code.kind);
        match code.kind {
            VitalKind::Ventilation => "Ventilation".to_string(),
            kind => format!("{} {}{}", kind.name(), k.labels[code.bin], kind.unit()),
        }
    }

    /// Bin a measurement given the kind's name.
    pub fn bin_vital(&self, kind: &str, value: f64) -> Result<Option<VitalCode>> {
        let kind: VitalKind = kind.parse()?;
        self.bin(kind, value)
    }

    pub fn bin(&self, kind: VitalKind, value: f64) -> Result<Option<VitalCode>> {
        if !value.is_finite() {
            return Err(Error::Data(format!("{kind} measurement is not finite")));
        }
        if kind == VitalKind::Ventilation {
            return Ok((value > 0.0).then_some(VitalCode { kind, bin: 0 }));
        }
        let bins = self.bins(kind);
        let bin = bins.edges.iter().take_while(|e| value >= **e).count();
        Ok(Some(VitalCode { kind, bin }))
    }
}
