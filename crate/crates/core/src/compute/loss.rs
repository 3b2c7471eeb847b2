use super::rng::RngStream;
use super::tape::PROB_CLAMP;
use crate::error::{Error, Result};

/// Class-weighted binary cross-entropy of one prediction.
pub fn weighted_bce(pred: f64, label: f64, w_pos: f64) -> f64 {
    let p = pred.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(w_pos * label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Mean weighted BCE over a batch.
pub fn weighted_bce_mean(preds: &[f64], labels: &[f64], w_pos: f64) -> f64 {
    assert_eq!(preds.len(), labels.len());
    if preds.is_empty() {
        return 0.0;
    }
    preds
        .iter()
        .zip(labels)
        .map(|(p, y)| weighted_bce(*p, *y, w_pos))
        .sum::<f64>()
        / preds.len() as f64
}

/// Inverted dropout on a plain array. Identity in evaluation mode.
pub fn dropout(x: &[f64], p: f64, training: bool, rng: &mut RngStream) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x.to_vec());
    }
    let keep = 1.0 / (1.0 - p);
    Ok(x.iter()
        .map(|v| if rng.uniform() < p { 0.0 } else { v * keep })
        .collect())
}
