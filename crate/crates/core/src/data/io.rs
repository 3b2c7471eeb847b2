//! CSV schemas for stays and events, and the preprocessing applied on load.
//!
//! `stays.csv`: `stay_id,patient_id,label,<23 static columns>`
//! `events.csv`: `stay_id,stream,code,elapsed` with `stream` in `{dp,mv}`.
//!
//! Raw vital measurements are written as `vital:<kind>=<value>` and binned on
//! load into `vital:<kind>:<bin>`; already-binned codes pass through.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::record::{sort_events, CodeEvent, Cohort, StayRecord, Stream};
use super::statics::{StaticVector, N_STATIC, STATIC_NAMES};
use super::vitals::{VitalBinner, VitalCode, VitalKind, VITAL_PREFIX};
use super::vocab::{Vocabulary, DEFAULT_MIN_STAYS};
use crate::error::{Error, Result};

pub const STAYS_FILE: &str = "stays.csv";
pub const EVENTS_FILE: &str = "events.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct RawStay {
    pub stay_id: u64,
    pub patient_id: u64,
    pub label: u8,
    pub statics: StaticVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawEvent {
    pub stay_id: u64,
    pub stream: Stream,
    pub code: String,
    pub elapsed: f64,
}

/// Stays and events exactly as stored on disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawCohort {
    pub stays: Vec<RawStay>,
    pub events: Vec<RawEvent>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadOptions {
    /// Codes present in fewer stays than this become `other`.
    pub min_code_stays: usize,
    /// Keep at most this many of the most recent events per stream.
    pub max_events: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            min_code_stays: DEFAULT_MIN_STAYS,
            max_events: None,
        }
    }
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

pub fn stays_header() -> Vec<String> {
    ["stay_id", "patient_id", "label"]
        .iter()
        .map(|s| s.to_string())
        .chain(STATIC_NAMES.iter().map(|s| s.to_string()))
        .collect()
}

pub fn read_stays<R: Read>(r: R, path: &str) -> Result<Vec<RawStay>> {
    let mut rdr = reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    if header != stays_header() {
        return Err(parse_err(path, 1, "unexpected header; see stays.csv schema"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 3 + N_STATIC {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, got {}", 3 + N_STATIC, rec.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("column {}: not a number: {:?}", i + 1, &rec[i])))
        };
        let int = |i: usize| -> Result<u64> {
            rec[i].parse::<u64>().map_err(|_| {
                parse_err(
                    path,
                    line,
                    format!("column {}: not an identifier: {:?}", i + 1, &rec[i]),
                )
            })
        };
        let label = match &rec[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(path, line, format!("label must be 0 or 1, got {other:?}"))),
        };
        let values = (3..3 + N_STATIC).map(num).collect::<Result<Vec<f64>>>()?;
        let statics = StaticVector::from_slice(&values).map_err(|e| parse_err(path, line, e.to_string()))?;
        out.push(RawStay {
            stay_id: int(0)?,
            patient_id: int(1)?,
            label,
            statics,
        });
    }
    Ok(out)
}

pub fn read_events<R: Read>(r: R, path: &str) -> Result<Vec<RawEvent>> {
    let mut rdr = reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    if header != ["stay_id", "stream", "code", "elapsed"] {
        return Err(parse_err(
            path,
            1,
            "unexpected header; expected stay_id,stream,code,elapsed",
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 4 {
            return Err(parse_err(path, line, format!("expected 4 fields, got {}", rec.len())));
        }
        let stay_id = rec[0]
            .parse::<u64>()
            .map_err(|_| parse_err(path, line, format!("bad stay_id {:?}", &rec[0])))?;
        let stream: Stream = rec[1]
            .parse()
            .map_err(|e: Error| parse_err(path, line, e.to_string()))?;
        let elapsed = rec[3]
            .parse::<f64>()
            .map_err(|_| parse_err(path, line, format!("bad elapsed {:?}", &rec[3])))?;
        if !(elapsed >= 0.0 && elapsed.is_finite()) {
            return Err(parse_err(
                path,
                line,
                format!("elapsed must be finite and non-negative, got {elapsed}"),
            ));
        }
        if rec[2].is_empty() {
            return Err(parse_err(path, line, "empty code"));
        }
        out.push(RawEvent {
            stay_id,
            stream,
            code: rec[2].to_string(),
            elapsed,
        });
    }
    Ok(out)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

impl RawCohort {
    pub fn read(stays_path: &Path, events_path: &Path) -> Result<Self> {
        let stays = read_stays(open(stays_path)?, &stays_path.display().to_string())?;
        let events = read_events(open(events_path)?, &events_path.display().to_string())?;
        Ok(Self { stays, events })
    }

    pub fn write_stays<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(stays_header())?;
        for s in &self.stays {
            let mut row = vec![s.stay_id.to_string(), s.patient_id.to_string(), s.label.to_string()];
            row.extend(s.statics.as_slice().iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<stays writer>", e))?;
        Ok(())
    }

    pub fn write_events<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["stay_id", "stream", "code", "elapsed"])?;
        for e in &self.events {
            wtr.write_record([
                e.stay_id.to_string(),
                e.stream.to_string(),
                e.code.clone(),
                e.elapsed.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<events writer>", e))?;
        Ok(())
    }

    /// Writes `stays.csv` and `events.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let sp = dir.join(STAYS_FILE);
        self.write_stays(File::create(&sp).map_err(|e| Error::io(&sp, e))?)?;
        let ep = dir.join(EVENTS_FILE);
        self.write_events(File::create(&ep).map_err(|e| Error::io(&ep, e))?)?;
        Ok(())
    }
}

/// Resolves a raw MV code: bins raw vital measurements, validates binned ones.
/// `Ok(None)` means the measurement produces no code (not ventilated).
fn canonical_mv_code(code: &str, binner: &VitalBinner) -> Result<Option<String>> {
    let Some(rest) = code.strip_prefix(VITAL_PREFIX) else {
        return Ok(Some(code.to_string()));
    };
    if let Some((kind, value)) = rest.split_once('=') {
        let value: f64 = value
            .parse()
            .map_err(|_| Error::Data(format!("bad vital measurement {code:?}")))?;
        return Ok(binner.bin_vital(kind, value)?.map(|c| c.code()));
    }
    match VitalCode::parse(code) {
        Some(c) if binner.dense_index(c).is_some() => Ok(Some(code.to_string())),
        _ => Err(Error::Data(format!("bad vital code {code:?}"))),
    }
}

/// Removes all but the latest of each consecutive run of an identical vital
/// code, runs taken per vital kind. Events must be sorted oldest first.
pub fn dedup_vitals(events: &mut Vec<CodeEvent>, vital_kind: impl Fn(u32) -> Option<VitalKind>) {
    let mut newer: HashMap<VitalKind, u32> = HashMap::new();
    let mut keep = vec![true; events.len()];
    for (i, ev) in events.iter().enumerate().rev() {
        if let Some(kind) = vital_kind(ev.code) {
            if newer.get(&kind) == Some(&ev.code) {
                keep[i] = false;
            }
            newer.insert(kind, ev.code);
        }
    }
    let mut it = keep.iter();
    events.retain(|_| *it.next().unwrap());
}

impl Cohort {
    /// Applies binning, rare-code relabelling, canonical ordering, vital
    /// deduplication and the optional length cap.
    pub fn from_raw(raw: &RawCohort, binner: &VitalBinner, opts: &LoadOptions) -> Result<Self> {
        let mut by_id: HashMap<u64, usize> = HashMap::new();
        for (i, s) in raw.stays.iter().enumerate() {
            if by_id.insert(s.stay_id, i).is_some() {
                return Err(Error::Data(format!("duplicate stay_id {}", s.stay_id)));
            }
        }
        // per stay, per stream: (code string, elapsed)
        let mut grouped: Vec<[Vec<(String, f64)>; 2]> = vec![[Vec::new(), Vec::new()]; raw.stays.len()];
        for e in &raw.events {
            let &i = by_id
                .get(&e.stay_id)
                .ok_or_else(|| Error::Data(format!("event references unknown stay_id {}", e.stay_id)))?;
            let code = match e.stream {
                Stream::Dp => Some(e.code.clone()),
                Stream::Mv => canonical_mv_code(&e.code, binner)?,
            };
            if let Some(code) = code {
                grouped[i][e.stream as usize].push((code, e.elapsed));
            }
        }
        let vocab_for = |k: usize| {
            Vocabulary::build(
                grouped.iter().map(|g| g[k].iter().map(|(c, _)| c.as_str())),
                opts.min_code_stays,
            )
        };
        let dp_vocab = vocab_for(Stream::Dp as usize);
        let mv_vocab = vocab_for(Stream::Mv as usize);
        let mv_kinds: Vec<Option<VitalKind>> = mv_vocab
            .codes()
            .iter()
            .map(|c| VitalCode::parse(c).map(|v| v.kind))
            .collect();

        let mut stays = Vec::with_capacity(raw.stays.len());
        for (s, g) in raw.stays.iter().zip(grouped) {
            let mut rec = StayRecord {
                stay_id: s.stay_id,
                patient_id: s.patient_id,
                statics: s.statics,
                dp_events: Vec::new(),
                mv_events: Vec::new(),
                label: s.label,
            };
            for stream in Stream::BOTH {
                let vocab = if stream == Stream::Dp { &dp_vocab } else { &mv_vocab };
                let events = rec.events_mut(stream);
                events.extend(g[stream as usize].iter().map(|(c, t)| CodeEvent {
                    code: vocab.id(c),
                    elapsed: *t,
                }));
                sort_events(events);
                if stream == Stream::Mv {
                    dedup_vitals(events, |id| mv_kinds[id as usize]);
                }
                if let Some(cap) = opts.max_events {
                    if events.len() > cap {
                        events.drain(..events.len() - cap);
                    }
                }
            }
            stays.push(rec);
        }
        Ok(Cohort::new(stays, dp_vocab, mv_vocab, binner.clone()))
    }

    /// Stays and events with vocabulary code strings, in canonical order.
    pub fn to_raw(&self) -> RawCohort {
        let mut raw = RawCohort::default();
        for s in &self.stays {
            raw.stays.push(RawStay {
                stay_id: s.stay_id,
                patient_id: s.patient_id,
                label: s.label,
                statics: s.statics,
            });
            for stream in Stream::BOTH {
                let vocab = self.vocab(stream);
                raw.events.extend(s.events(stream).iter().map(|e| RawEvent {
                    stay_id: s.stay_id,
                    stream,
                    code: vocab.code(e.code).to_string(),
                    elapsed: e.elapsed,
                }));
            }
        }
        raw
    }

    pub fn dump(&self, dir: &Path) -> Result<()> {
        self.to_raw().write_dir(dir)
    }
}

pub fn load_cohort(stays_path: &Path, events_path: &Path, binner: &VitalBinner, opts: &LoadOptions) -> Result<Cohort> {
    let raw = RawCohort::read(stays_path, events_path)?;
    Cohort::from_raw(&raw, binner, opts)
}

/// Number of stays per code string, for diagnostics.
pub fn code_stay_counts(raw: &RawCohort, stream: Stream) -> BTreeMap<String, usize> {
    let mut seen: BTreeMap<String, std::collections::BTreeSet<u64>> = BTreeMap::new();
    for e in raw.events.iter().filter(|e| e.stream == stream) {
        seen.entry(e.code.clone()).or_default().insert(e.stay_id);
    }
    seen.into_iter().map(|(c, s)| (c, s.len())).collect()
}
