//! Maximum-likelihood training with weighted log-loss, Adam and
//! best-validation-AP checkpoint selection.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::compute::{Adam, Grads, ParamStore, RngStream, Tape, TapeBuffers};
use crate::data::{Cohort, StayRecord};
use crate::error::{Error, Result};
use crate::metrics::{average_precision, Prediction};
use crate::models::{predict_with, Model};

/// Weight of the positive class in the log-loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeight {
    /// `N_neg / N_pos` over the training stays.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub class_weight: ClassWeight,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 128,
            epochs: 80,
            dropout: 0.5,
            class_weight: ClassWeight::Auto,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and >= 0",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        if let ClassWeight::Fixed(w) = self.class_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("class weight {w} must be positive")));
            }
        }
        Ok(())
    }

    pub fn positive_weight<'a>(&self, stays: impl IntoIterator<Item = &'a StayRecord>) -> Result<f64> {
        match self.class_weight {
            ClassWeight::Auto => class_weight(stays),
            ClassWeight::Fixed(w) => Ok(w),
        }
    }
}

/// `N_neg / N_pos`.
pub fn class_weight<'a>(stays: impl IntoIterator<Item = &'a StayRecord>) -> Result<f64> {
    let (mut pos, mut neg) = (0usize, 0usize);
    for s in stays {
        if s.label == 1 {
            pos += 1
        } else {
            neg += 1
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::Data(format!(
            "class weighting needs both classes in the training set ({pos} positive, {neg} negative)"
        )));
    }
    Ok(neg as f64 / pos as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ap: f64,
}

pub fn write_epoch_log<W: Write>(logs: &[EpochLog], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for l in logs {
        wtr.serialize(l)?;
    }
    wtr.flush().map_err(|e| Error::io("<epoch log>", e))?;
    Ok(())
}

pub fn predictions(cohort: &Cohort, indices: &[usize], scores: &[f64]) -> Vec<Prediction> {
    indices
        .iter()
        .zip(scores)
        .map(|(&i, &score)| {
            let s = &cohort.stays[i];
            Prediction {
                stay_id: s.stay_id,
                patient_id: s.patient_id,
                score,
                label: s.label,
            }
        })
        .collect()
}

/// Eval-mode predictions of `model` on a subset of stays.
pub fn predict_subset(model: &Model, cohort: &Cohort, indices: &[usize]) -> Result<Vec<Prediction>> {
    let scores = predict_with(&model.network, &model.params, indices.iter().map(|&i| &cohort.stays[i]))?;
    Ok(predictions(cohort, indices, &scores))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation AP.
    pub model: Model,
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub w_pos: f64,
}

/// Trains for exactly `cfg.epochs` epochs over `train_idx` and returns the
/// parameters of the epoch with the highest validation average precision
/// (the last epoch if validation AP is never defined). The model's dropout
/// rate is set to `cfg.dropout`.
pub fn train(
    mut model: Model,
    cohort: &Cohort,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    model.network.schema.check(cohort)?;
    model.network.options.dropout = cfg.dropout;
    let w_pos = cfg.positive_weight(train_idx.iter().map(|&i| &cohort.stays[i]))?;

    let rng = RngStream::new(seed);
    let mut shuffle_rng = rng.substream(1);
    let mut drop_rng = rng.substream(2);
    let mut adam = Adam::new(&model.params, cfg.lr);
    let mut grads = Grads::zeros_like(&model.params);
    let mut bufs = TapeBuffers::default();
    let mut order = train_idx.to_vec();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.zero();
            let inv = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut t = Tape::with_buffers(&model.params, bufs);
                let l = model
                    .network
                    .loss(&mut t, &cohort.stays[i], w_pos, Some(&mut drop_rng))?;
                batch_loss += t.scalar_value(l);
                t.backward_scaled(l, inv, &mut grads);
                bufs = t.into_buffers();
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            total += batch_loss;
            adam.step(&mut model.params, &grads)?;
        }
        let train_loss = total / order.len() as f64;
        let val_ap = if val_idx.is_empty() {
            f64::NAN
        } else {
            average_precision(&predict_subset(&model, cohort, val_idx)?).unwrap_or(f64::NAN)
        };
        log::info!(
            "{} epoch {epoch}: train loss {train_loss:.5}, val AP {val_ap:.4}",
            model.spec()
        );
        logs.push(EpochLog {
            epoch,
            train_loss,
            val_ap,
        });
        if val_ap.is_finite() && best.as_ref().is_none_or(|(ap, _, _)| val_ap > *ap) {
            best = Some((val_ap, epoch, model.params.clone()));
        }
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => cfg.epochs,
    };
    Ok(TrainOutcome {
        model,
        logs,
        best_epoch,
        w_pos,
    })
}
