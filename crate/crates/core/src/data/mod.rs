//! Cohort records, vocabularies, vital binning, file I/O, splits and synthetic data.

mod io;
mod record;
mod split;
mod statics;
mod synth;
mod vitals;
mod vocab;

pub use io::{
    code_stay_counts, dedup_vitals, load_cohort, read_events, read_stays, stays_header, LoadOptions, RawCohort,
    RawEvent, RawStay, EVENTS_FILE, STAYS_FILE,
};
pub use record::{sort_events, CodeEvent, Cohort, StayRecord, Stream};
pub use split::{split_by_patient, Split, SplitConfig};
pub use statics::{static_index, StaticVector, INDICATOR_GROUPS, N_CONTINUOUS, N_STATIC, STATIC_LABELS, STATIC_NAMES};
pub use synth::{
    dp_code_name, generate_synthetic, med_code_name, PlantedCode, SynthConfig, SyntheticCohort, PLANTED_FILE,
};
pub use vitals::{VitalBinner, VitalCode, VitalKind, VITAL_PREFIX};
pub use vocab::{Vocabulary, DEFAULT_MIN_STAYS, OTHER_CODE, OTHER_ID};

#[cfg(test)]
mod tests;
