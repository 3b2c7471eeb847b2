//! CBOW-style medical concept embeddings with time-aware attention.
//!
//! For every target event the context is the set of other events of the
//! same stay and stream lying within `window` time units. Each context event
//! `j` falls into a log-spaced bucket of `|dt_j|`, and its attention weight is
//! `softmax_j(s[target, bucket_j])`. The averaged input embedding predicts the
//! target through a full softmax over the vocabulary.

use serde::{Deserialize, Serialize};

use super::{embed_dim, init_table};
use crate::compute::{Adam, Grads, ParamId, ParamStore, RngStream, Tape, TapeBuffers, Value};
use crate::data::{Cohort, Stream};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MceConfig {
    /// Context window in the stream's time unit. `None` picks 365 days for
    /// diagnoses and 24 hours for medications and vitals.
    pub window: Option<f64>,
    pub buckets: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for MceConfig {
    fn default() -> Self {
        Self {
            window: None,
            buckets: 8,
            epochs: 5,
            lr: 0.01,
            batch_size: 64,
        }
    }
}

impl MceConfig {
    pub fn window_for(&self, stream: Stream) -> f64 {
        self.window.unwrap_or(match stream {
            Stream::Dp => 365.0,
            Stream::Mv => 24.0,
        })
    }
}

/// Upper bucket edges `window * 2^-(B-1-k)`, strictly increasing, last equals `window`.
pub fn bucket_edges(window: f64, buckets: usize) -> Vec<f64> {
    (0..buckets)
        .map(|k| window * 0.5f64.powi((buckets - 1 - k) as i32))
        .collect()
}

#[derive(Debug, Clone)]
pub struct MceModel {
    pub stream: Stream,
    pub input: Value,
    pub output: Value,
    /// `|V| x B` attention scalars.
    pub bucket_scores: Value,
    pub edges: Vec<f64>,
}

impl MceModel {
    pub fn new(stream: Stream, vocab_size: usize, window: f64, buckets: usize, rng: &mut RngStream) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::Data("MCE needs a nonempty vocabulary".into()));
        }
        if buckets == 0 || window.is_nan() || window <= 0.0 {
            return Err(Error::Config(
                "MCE needs at least one bucket and a positive window".into(),
            ));
        }
        let d = embed_dim(vocab_size);
        Ok(Self {
            stream,
            input: init_table(vocab_size, d, rng),
            output: init_table(vocab_size, d, rng),
            bucket_scores: Value::zeros(&[vocab_size, buckets]),
            edges: bucket_edges(window, buckets),
        })
    }

    pub fn dim(&self) -> usize {
        self.input.cols()
    }

    pub fn window(&self) -> f64 {
        *self.edges.last().expect("at least one bucket")
    }

    pub fn bucket(&self, abs_dt: f64) -> usize {
        self.edges
            .iter()
            .position(|e| abs_dt <= *e)
            .unwrap_or(self.edges.len() - 1)
    }

    /// The embedding table handed to the model builder.
    pub fn table(&self) -> &Value {
        &self.input
    }
}

/// Attention weights of `context = [(code, |dt|)]` for a target code.
pub fn mce_attention(model: &MceModel, target: u32, context: &[(u32, f64)]) -> Vec<f64> {
    let s = model.bucket_scores.row(target as usize);
    let z: Vec<f64> = context.iter().map(|&(_, dt)| s[model.bucket(dt)]).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// Attention-weighted average of context input embeddings.
pub fn mce_hidden(model: &MceModel, target: u32, context: &[(u32, f64)]) -> Vec<f64> {
    let alpha = mce_attention(model, target, context);
    let mut h = vec![0.0; model.dim()];
    for (a, &(c, _)) in alpha.iter().zip(context) {
        for (hi, e) in h.iter_mut().zip(model.input.row(c as usize)) {
            *hi += a * e;
        }
    }
    h
}

struct Example {
    target: u32,
    context: Vec<(u32, usize)>,
}

fn collect_examples(model: &MceModel, cohort: &Cohort, stream: Stream) -> Vec<Example> {
    let window = model.window();
    let mut out = Vec::new();
    for stay in &cohort.stays {
        let ev = stay.events(stream);
        if ev.len() < 2 {
            continue;
        }
        for (i, t) in ev.iter().enumerate() {
            let context: Vec<(u32, usize)> = ev
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, c)| (c.code, (c.elapsed - t.elapsed).abs()))
                .filter(|(_, dt)| *dt <= window)
                .map(|(c, dt)| (c, model.bucket(dt)))
                .collect();
            if !context.is_empty() {
                out.push(Example {
                    target: t.code,
                    context,
                });
            }
        }
    }
    out
}

/// Trains an MCE model on one stream of a cohort.
pub fn mce_pretrain(cohort: &Cohort, stream: Stream, cfg: &MceConfig, seed: u64) -> Result<MceModel> {
    let vocab = cohort.vocab(stream);
    let mut rng = RngStream::new(seed);
    let mut model = MceModel::new(stream, vocab.len(), cfg.window_for(stream), cfg.buckets, &mut rng)?;
    let mut examples = collect_examples(&model, cohort, stream);
    if examples.is_empty() || cfg.epochs == 0 {
        return Ok(model);
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("MCE batch_size must be positive".into()));
    }

    let mut ps = ParamStore::new();
    let input = ps.insert("mce.input", model.input.clone(), true)?;
    let output = ps.insert("mce.output", model.output.clone(), true)?;
    let scores = ps.insert("mce.buckets", model.bucket_scores.clone(), true)?;
    let mut adam = Adam::new(&ps, cfg.lr);
    let mut grads = Grads::zeros_like(&ps);
    let mut bufs = TapeBuffers::default();

    for _ in 0..cfg.epochs {
        rng.shuffle(&mut examples);
        for batch in examples.chunks(cfg.batch_size) {
            grads.zero();
            let inv = 1.0 / batch.len() as f64;
            for ex in batch {
                let mut t = Tape::with_buffers(&ps, bufs);
                let loss = example_loss(&mut t, ex, input, output, scores);
                t.backward_scaled(loss, inv, &mut grads);
                bufs = t.into_buffers();
            }
            adam.step(&mut ps, &grads)?;
        }
    }
    model.input = ps.get(input).clone();
    model.output = ps.get(output).clone();
    model.bucket_scores = ps.get(scores).clone();
    Ok(model)
}

fn example_loss(t: &mut Tape, ex: &Example, input: ParamId, output: ParamId, scores: ParamId) -> crate::compute::Var {
    let row = t.param_row(scores, ex.target as usize);
    let idx: Vec<usize> = ex.context.iter().map(|c| c.1).collect();
    let z = t.gather(row, &idx);
    let alpha = t.softmax(z);
    let vals: Vec<_> = ex.context.iter().map(|c| t.param_row(input, c.0 as usize)).collect();
    let hidden = t.weighted_sum(alpha, &vals);
    let logits = t.affine(output, hidden, None);
    t.softmax_cross_entropy(logits, ex.target as usize)
}
