//! Ranking and threshold metrics with patient-level bootstrap intervals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::compute::{derive_seed, RngStream};
use crate::error::{Error, Result};

pub const BOOTSTRAP_RESAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub stay_id: u64,
    pub patient_id: u64,
    pub score: f64,
    pub label: u8,
}

fn counts(preds: &[Prediction]) -> (usize, usize) {
    let pos = preds.iter().filter(|p| p.label == 1).count();
    (pos, preds.len() - pos)
}

fn check_finite(preds: &[Prediction]) -> Result<()> {
    match preds.iter().find(|p| !p.score.is_finite()) {
        Some(p) => Err(Error::Metric(format!("non-finite score for stay {}", p.stay_id))),
        None => Ok(()),
    }
}

/// Scores sorted descending, grouped by tied score: `(tp, fp)` added per group.
fn descending_groups(preds: &[Prediction]) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<(f64, u8)> = preds.iter().map(|p| (p.score, p.label)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for (s, y) in sorted {
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if y == 1 {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, usize::from(y == 1), usize::from(y != 1))),
        }
    }
    groups
}

/// Step-wise average precision `sum_k (R_k - R_{k-1}) P_k`, one step per distinct score.
pub fn average_precision(preds: &[Prediction]) -> Result<f64> {
    check_finite(preds)?;
    let (n_pos, _) = counts(preds);
    if n_pos == 0 {
        return Err(Error::Metric("average precision needs at least one positive".into()));
    }
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0);
    for (_, gtp, gfp) in descending_groups(preds) {
        tp += gtp;
        fp += gfp;
        if gtp > 0 {
            ap += (gtp as f64 / n_pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// Probability that a random positive outscores a random negative, ties counting one half.
pub fn auroc(preds: &[Prediction]) -> Result<f64> {
    check_finite(preds)?;
    let (n_pos, n_neg) = counts(preds);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUROC needs both classes".into()));
    }
    let mut neg_below = 0usize;
    let mut concordant = 0.0;
    let mut groups = descending_groups(preds);
    groups.reverse();
    for (_, gtp, gfp) in groups {
        concordant += gtp as f64 * (neg_below as f64 + 0.5 * gfp as f64);
        neg_below += gfp;
    }
    Ok(concordant / (n_pos as f64 * n_neg as f64))
}

/// Confusion counts at one threshold (predict positive when `score > threshold`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
}

impl OperatingPoint {
    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.r#fn)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// Zero when nothing is predicted positive.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.r#fn;
        ratio(2 * self.tp, d)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Operating points at `+inf`, the midpoints between consecutive distinct
/// scores and `-inf`, in decreasing threshold order.
pub fn threshold_sweep(preds: &[Prediction]) -> Vec<OperatingPoint> {
    let (n_pos, n_neg) = counts(preds);
    let groups = descending_groups(preds);
    let mut out = Vec::with_capacity(groups.len() + 1);
    let (mut tp, mut fp) = (0, 0);
    let point = |threshold, tp: usize, fp: usize| OperatingPoint {
        threshold,
        tp,
        fp,
        tn: n_neg - fp,
        r#fn: n_pos - tp,
    };
    out.push(point(f64::INFINITY, 0, 0));
    for (k, (s, gtp, gfp)) in groups.iter().enumerate() {
        tp += gtp;
        fp += gfp;
        let threshold = match groups.get(k + 1) {
            Some(next) => 0.5 * (s + next.0),
            None => f64::NEG_INFINITY,
        };
        out.push(point(threshold, tp, fp));
    }
    out
}

/// Largest F1 over the sweep; the lowest threshold wins ties.
pub fn f1_max(preds: &[Prediction]) -> Result<(f64, f64)> {
    check_finite(preds)?;
    if counts(preds).0 == 0 {
        return Err(Error::Metric("F1 needs at least one positive".into()));
    }
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for op in threshold_sweep(preds) {
        if op.f1() >= best.0 {
            best = (op.f1(), op.threshold);
        }
    }
    Ok(best)
}

/// Operating point maximizing Youden's J; ties go to higher sensitivity.
pub fn youden_operating_point(preds: &[Prediction]) -> Result<OperatingPoint> {
    check_finite(preds)?;
    let (n_pos, n_neg) = counts(preds);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("Youden's J needs both classes".into()));
    }
    let mut best: Option<(f64, OperatingPoint)> = None;
    for op in threshold_sweep(preds) {
        let j = op.sensitivity() + op.specificity() - 1.0;
        let better = match best {
            None => true,
            Some((bj, bop)) => j > bj || (j == bj && op.sensitivity() > bop.sensitivity()),
        };
        if better {
            best = Some((j, op));
        }
    }
    Ok(best.expect("sweep is nonempty").1)
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Point estimate with a 95% percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimate {
    pub fn exact(v: f64) -> Self {
        Self { point: v, lo: v, hi: v }
    }
}

/// Patient-level percentile bootstrap of `metric`.
///
/// Each resample draws patients with replacement up to the original patient
/// count and keeps all stays of a drawn patient. Resamples on which the
/// metric is undefined are skipped.
pub fn bootstrap_ci<F>(metric: F, preds: &[Prediction], n_resamples: usize, seed: u64) -> Result<Estimate>
where
    F: Fn(&[Prediction]) -> Result<f64>,
{
    let point = metric(preds)?;
    let mut by_patient: BTreeMap<u64, Vec<Prediction>> = BTreeMap::new();
    for p in preds {
        by_patient.entry(p.patient_id).or_default().push(*p);
    }
    let groups: Vec<Vec<Prediction>> = by_patient.into_values().collect();
    let mut values = Vec::with_capacity(n_resamples);
    let mut sample = Vec::with_capacity(preds.len());
    let mut skipped = 0;
    for r in 0..n_resamples {
        let mut rng = RngStream::new(derive_seed(seed, r as u64));
        sample.clear();
        for _ in 0..groups.len() {
            sample.extend_from_slice(&groups[rng.below(groups.len())]);
        }
        match metric(&sample) {
            Ok(v) => values.push(v),
            Err(_) => skipped += 1,
        }
    }
    if skipped > 0 {
        log::debug!("bootstrap: skipped {skipped} of {n_resamples} resamples with an undefined metric");
    }
    if values.is_empty() {
        return Err(Error::Metric("metric undefined on every bootstrap resample".into()));
    }
    values.sort_by(f64::total_cmp);
    Ok(Estimate {
        point,
        lo: quantile(&values, 0.025),
        hi: quantile(&values, 0.975),
    })
}

pub fn sensitivity_at_youden(preds: &[Prediction]) -> Result<f64> {
    Ok(youden_operating_point(preds)?.sensitivity())
}

pub fn specificity_at_youden(preds: &[Prediction]) -> Result<f64> {
    Ok(youden_operating_point(preds)?.specificity())
}

pub fn f1_score(preds: &[Prediction]) -> Result<f64> {
    Ok(f1_max(preds)?.0)
}

/// The five reported metrics; sensitivity and specificity are taken at the Youden point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ap: Estimate,
    pub auroc: Estimate,
    pub f1: Estimate,
    pub sensitivity: Estimate,
    pub specificity: Estimate,
}

pub const METRIC_NAMES: [&str; 5] = ["ap", "auroc", "f1", "sensitivity", "specificity"];

impl MetricReport {
    pub fn evaluate(preds: &[Prediction], n_resamples: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            ap: bootstrap_ci(average_precision, preds, n_resamples, seed)?,
            auroc: bootstrap_ci(auroc, preds, n_resamples, seed)?,
            f1: bootstrap_ci(f1_score, preds, n_resamples, seed)?,
            sensitivity: bootstrap_ci(sensitivity_at_youden, preds, n_resamples, seed)?,
            specificity: bootstrap_ci(specificity_at_youden, preds, n_resamples, seed)?,
        })
    }

    pub fn entries(&self) -> [(&'static str, Estimate); 5] {
        [
            (METRIC_NAMES[0], self.ap),
            (METRIC_NAMES[1], self.auroc),
            (METRIC_NAMES[2], self.f1),
            (METRIC_NAMES[3], self.sensitivity),
            (METRIC_NAMES[4], self.specificity),
        ]
    }
}
