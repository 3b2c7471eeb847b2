use serde::{Deserialize, Serialize};

use super::layers::{const_param, param_rng, AttentionHead, BiGru, ScoreHead};
use super::spec::{ArchitectureSpec, EmbeddingKind, Pooling};
use crate::compute::{OdeFieldParams, ParamId, ParamStore, RngStream, Tape, Value, Var};
use crate::data::{CodeEvent, Cohort, StayRecord, Stream, VitalKind, N_STATIC};
use crate::embeddings::{embed_dim, init_ode_field, init_table, StepPolicy};
use crate::error::{Error, Result};

/// Hyperparameters that shape the forward pass but are not learned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelOptions {
    pub dropout: f64,
    /// Largest Euler step for diagnosis-stream ODEs, in days.
    pub h_max_dp: f64,
    /// Largest Euler step for medication/vital-stream ODEs, in hours.
    pub h_max_mv: f64,
    /// Multiplier applied to diagnosis elapsed times before use.
    pub time_scale_dp: f64,
    pub time_scale_mv: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            dropout: 0.5,
            h_max_dp: 1.0,
            h_max_mv: 1.0,
            time_scale_dp: 1.0,
            time_scale_mv: 1.0,
        }
    }
}

impl ModelOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        StepPolicy::new(self.h_max_dp)?;
        StepPolicy::new(self.h_max_mv)?;
        if !(self.time_scale_dp > 0.0 && self.time_scale_mv > 0.0) {
            return Err(Error::Config("time scales must be positive".into()));
        }
        Ok(())
    }

    fn stream(&self, s: Stream) -> (f64, f64) {
        match s {
            Stream::Dp => (self.h_max_dp, self.time_scale_dp),
            Stream::Mv => (self.h_max_mv, self.time_scale_mv),
        }
    }
}

/// Location of an MV code within the one-hot vital block of the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VitalSlot {
    pub dense: usize,
    pub kind: usize,
}

/// Everything about the data a model must agree with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSchema {
    pub dp_vocab_size: usize,
    pub mv_vocab_size: usize,
    pub n_vital_codes: usize,
    pub mv_vitals: Vec<Option<VitalSlot>>,
    pub dp_vocab_hash: String,
    pub mv_vocab_hash: String,
}

impl InputSchema {
    pub fn from_cohort(c: &Cohort) -> Self {
        let all = c.binner.all_codes();
        let kind_ix = |k: VitalKind| VitalKind::ALL.iter().position(|x| *x == k).expect("listed kind");
        Self {
            dp_vocab_size: c.dp_vocab.len(),
            mv_vocab_size: c.mv_vocab.len(),
            n_vital_codes: c.binner.n_codes(),
            mv_vitals: (0..c.mv_vocab.len() as u32)
                .map(|id| {
                    c.vital_index(id).map(|dense| VitalSlot {
                        dense,
                        kind: kind_ix(all[dense].kind),
                    })
                })
                .collect(),
            dp_vocab_hash: c.dp_vocab.fingerprint(),
            mv_vocab_hash: c.mv_vocab.fingerprint(),
        }
    }

    pub fn vocab_size(&self, s: Stream) -> usize {
        match s {
            Stream::Dp => self.dp_vocab_size,
            Stream::Mv => self.mv_vocab_size,
        }
    }

    pub fn embed_dim(&self, s: Stream) -> usize {
        embed_dim(self.vocab_size(s))
    }

    /// Fails if `cohort` was encoded with different vocabularies.
    pub fn check(&self, cohort: &Cohort) -> Result<()> {
        if self.dp_vocab_hash != cohort.dp_vocab.fingerprint() || self.mv_vocab_hash != cohort.mv_vocab.fingerprint() {
            return Err(Error::Config("cohort vocabularies do not match the model".into()));
        }
        Ok(())
    }
}

/// Pretrained embedding tables for the MCE variants.
#[derive(Debug, Clone, PartialEq)]
pub struct MceTables {
    pub dp: Value,
    pub mv: Value,
}

impl MceTables {
    fn get(&self, s: Stream) -> &Value {
        match s {
            Stream::Dp => &self.dp,
            Stream::Mv => &self.mv,
        }
    }
}

/// Layers that turn one code stream into one scalar score.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamLayers {
    pub stream: Stream,
    pub kind: EmbeddingKind,
    pub vocab_size: usize,
    pub dim: usize,
    pub embed: ParamId,
    pub ode: Option<(OdeFieldParams, StepPolicy)>,
    pub rnn: Option<BiGru>,
    pub attention: Option<AttentionHead>,
    pub score: ScoreHead,
    pub time_scale: f64,
}

impl StreamLayers {
    fn build(
        ps: &mut ParamStore,
        spec: ArchitectureSpec,
        stream: Stream,
        schema: &InputSchema,
        opts: &ModelOptions,
        seed: u64,
        mce: Option<&MceTables>,
    ) -> Result<Self> {
        let kind = spec.embedding().expect("deep architecture");
        let vocab_size = schema.vocab_size(stream);
        let dim = schema.embed_dim(stream);
        let (h_max, time_scale) = opts.stream(stream);
        let policy = StepPolicy::new(h_max)?;
        let s = stream.as_str();

        let embed_name = format!("emb.{s}");
        let embed = match (kind, mce) {
            (EmbeddingKind::Mce, Some(t)) => {
                let table = t.get(stream);
                if table.shape != [vocab_size, dim] {
                    return Err(Error::Shape {
                        context: "MCE table",
                        expected: vec![vocab_size, dim],
                        actual: table.shape.clone(),
                    });
                }
                ps.insert(embed_name, table.clone(), false)?
            }
            (EmbeddingKind::Mce, None) => {
                return Err(Error::Config(format!("{spec} needs pretrained MCE tables")));
            }
            _ => {
                let mut rng = param_rng(seed, &embed_name);
                ps.insert(embed_name, init_table(vocab_size, dim, &mut rng), true)?
            }
        };
        let ode = if kind == EmbeddingKind::Ode {
            let name = format!("ode_emb.{s}");
            Some((init_ode_field(ps, &name, dim, &mut param_rng(seed, &name))?, policy))
        } else {
            None
        };
        let rnn = match spec.recurrence() {
            Some(mode) => Some(BiGru::init(ps, seed, &format!("gru.{s}"), dim, mode, policy)?),
            None => None,
        };
        let value_dim = match (&rnn, kind) {
            (Some(r), _) => r.output_dim(),
            (None, EmbeddingKind::ConcatTime) => dim + 1,
            (None, _) => dim,
        };
        let attention = if spec.pooling() == Some(Pooling::Attention) {
            Some(AttentionHead::init(ps, seed, &format!("attn.{s}"), value_dim)?)
        } else {
            None
        };
        let score = ScoreHead::init(ps, seed, &format!("score.{s}"), value_dim)?;
        Ok(Self {
            stream,
            kind,
            vocab_size,
            dim,
            embed,
            ode,
            rnn,
            attention,
            score,
            time_scale,
        })
    }

    /// Embedded vector of one event (before dropout).
    pub fn embed_event(&self, t: &mut Tape, ev: &CodeEvent) -> Result<Var> {
        if ev.code as usize >= self.vocab_size {
            return Err(Error::Data(format!(
                "code id {} outside the {} vocabulary of size {}",
                ev.code, self.stream, self.vocab_size
            )));
        }
        let row = t.param_row(self.embed, ev.code as usize);
        let el = ev.elapsed * self.time_scale;
        Ok(match (self.kind, self.ode) {
            (EmbeddingKind::Ode, Some((field, policy))) if el > 0.0 => {
                let k = policy.n_steps(el);
                t.ode_evolve(field, row, el / k as f64, k)?
            }
            (EmbeddingKind::ConcatTime, _) => {
                let c = t.constant(&[el]);
                t.concat(&[row, c])
            }
            _ => row,
        })
    }

    /// Pooled representation fed to the score head.
    pub fn pooled(&self, t: &mut Tape, events: &[CodeEvent], mut drop: Option<(f64, &mut RngStream)>) -> Result<Var> {
        let mut dropout = |t: &mut Tape, v: Var| match drop.as_mut() {
            Some((p, rng)) => t.dropout(v, *p, rng),
            None => v,
        };
        let mut values = Vec::with_capacity(events.len());
        for ev in events {
            let e = self.embed_event(t, ev)?;
            values.push(dropout(t, e));
        }
        if let Some(rnn) = &self.rnn {
            let elapsed: Vec<f64> = events.iter().map(|e| e.elapsed * self.time_scale).collect();
            let (outs, fin) = rnn.run(t, &values, &elapsed)?;
            match &self.attention {
                Some(head) => {
                    let outs: Vec<Var> = outs.into_iter().map(|o| dropout(t, o)).collect();
                    let (_, ctx) = head.attend(t, &outs);
                    Ok(dropout(t, ctx))
                }
                None => Ok(dropout(t, fin)),
            }
        } else {
            let head = self.attention.as_ref().expect("attention-only stream");
            let (_, ctx) = head.attend(t, &values);
            Ok(dropout(t, ctx))
        }
    }

    pub fn score(&self, t: &mut Tape, events: &[CodeEvent], drop: Option<(f64, &mut RngStream)>) -> Result<Var> {
        let ctx = self.pooled(t, events, drop)?;
        Ok(self.score.apply(t, ctx))
    }
}

/// Parameter handles and wiring of one architecture; the values live in a
/// separate [`ParamStore`] so that sampled weights can be swapped in.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: ArchitectureSpec,
    pub options: ModelOptions,
    pub schema: InputSchema,
    /// Diagnosis stream then medication/vital stream; empty for the baseline.
    pub streams: Vec<StreamLayers>,
    pub final_w: ParamId,
    pub final_b: ParamId,
}

impl Network {
    pub fn n_inputs(&self) -> usize {
        if self.spec.is_deep() {
            N_STATIC + 2
        } else {
            N_STATIC + self.schema.n_vital_codes
        }
    }

    /// Names of the final-layer inputs, in order.
    pub fn input_names(&self) -> Vec<String> {
        let mut names: Vec<String> = crate::data::STATIC_NAMES.iter().map(|s| s.to_string()).collect();
        if self.spec.is_deep() {
            names.push("score_dp".into());
            names.push("score_mv".into());
        } else {
            names.extend((0..self.schema.n_vital_codes).map(|i| format!("vital_{i}")));
        }
        names
    }

    pub fn stream(&self, s: Stream) -> Option<&StreamLayers> {
        self.streams.iter().find(|l| l.stream == s)
    }

    fn latest_vitals(&self, stay: &StayRecord) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.schema.n_vital_codes];
        let mut seen = [false; 7];
        for ev in stay.mv_events.iter().rev() {
            let slot = self
                .schema
                .mv_vitals
                .get(ev.code as usize)
                .ok_or_else(|| Error::Data(format!("mv code id {} outside the vocabulary", ev.code)))?;
            if let Some(s) = slot {
                if !seen[s.kind] {
                    seen[s.kind] = true;
                    x[s.dense] = 1.0;
                }
            }
        }
        Ok(x)
    }

    /// Final-layer logit of a stay. Passing `drop` enables dropout.
    pub fn logit(&self, t: &mut Tape, stay: &StayRecord, mut drop: Option<&mut RngStream>) -> Result<Var> {
        let mut parts = vec![t.constant(stay.statics.as_slice())];
        if self.spec.is_deep() {
            let p = self.options.dropout;
            for layers in &self.streams {
                let d = drop.as_deref_mut().map(|r| (p, r));
                parts.push(layers.score(t, stay.events(layers.stream), d)?);
            }
        } else {
            let v = self.latest_vitals(stay)?;
            parts.push(t.constant(&v));
        }
        let x = t.concat(&parts);
        Ok(t.affine(self.final_w, x, Some(self.final_b)))
    }

    pub fn probability(&self, t: &mut Tape, stay: &StayRecord, drop: Option<&mut RngStream>) -> Result<Var> {
        let z = self.logit(t, stay, drop)?;
        Ok(t.sigmoid(z))
    }

    /// Weighted log-loss of a single stay.
    pub fn loss(&self, t: &mut Tape, stay: &StayRecord, w_pos: f64, drop: Option<&mut RngStream>) -> Result<Var> {
        let p = self.probability(t, stay, drop)?;
        Ok(t.bce(p, stay.label_f64(), w_pos))
    }
}

/// A network together with its parameter values.
#[derive(Debug, Clone)]
pub struct Model {
    pub network: Network,
    pub params: ParamStore,
    pub seed: u64,
}

/// Assembles the layer stack of `spec` with freshly initialized parameters.
///
/// The final logistic layer starts at zero, so every fresh model predicts 0.5.
pub fn build_model(
    spec: ArchitectureSpec,
    schema: &InputSchema,
    options: &ModelOptions,
    seed: u64,
    mce: Option<&MceTables>,
) -> Result<Model> {
    options.validate()?;
    if mce.is_some() && !spec.needs_mce() {
        return Err(Error::Config(format!("{spec} does not take pretrained MCE tables")));
    }
    let mut ps = ParamStore::new();
    let streams = if spec.is_deep() {
        Stream::BOTH
            .iter()
            .map(|&s| StreamLayers::build(&mut ps, spec, s, schema, options, seed, mce))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let n_in = if spec.is_deep() {
        N_STATIC + 2
    } else {
        N_STATIC + schema.n_vital_codes
    };
    let final_w = const_param(&mut ps, "final.w", &[1, n_in], 0.0)?;
    let final_b = const_param(&mut ps, "final.b", &[1], 0.0)?;
    Ok(Model {
        network: Network {
            spec,
            options: *options,
            schema: schema.clone(),
            streams,
            final_w,
            final_b,
        },
        params: ps,
        seed,
    })
}

impl Model {
    pub fn spec(&self) -> ArchitectureSpec {
        self.network.spec
    }

    /// Number of learnable scalars (frozen tables excluded).
    pub fn n_parameters(&self) -> usize {
        self.params.n_trainable_scalars()
    }

    pub fn predict_risk(&self, stay: &StayRecord, training: bool, rng: &mut RngStream) -> Result<f64> {
        let mut t = Tape::new(&self.params);
        let p = self.network.probability(&mut t, stay, training.then_some(rng))?;
        Ok(t.scalar_value(p))
    }

    /// Eval-mode risks of many stays.
    pub fn predict_all<'a>(&self, stays: impl IntoIterator<Item = &'a StayRecord>) -> Result<Vec<f64>> {
        predict_with(&self.network, &self.params, stays)
    }
}

/// Eval-mode risks under an arbitrary parameter store of the same layout.
pub fn predict_with<'a>(
    network: &Network,
    params: &ParamStore,
    stays: impl IntoIterator<Item = &'a StayRecord>,
) -> Result<Vec<f64>> {
    let mut bufs = crate::compute::TapeBuffers::default();
    let mut out = Vec::new();
    for stay in stays {
        let mut t = Tape::with_buffers(params, bufs);
        let p = network.probability(&mut t, stay, None)?;
        out.push(t.scalar_value(p));
        bufs = t.into_buffers();
    }
    Ok(out)
}
