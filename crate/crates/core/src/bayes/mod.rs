//! Bayes-by-Backprop training of the attention/concatenated-time network and
//! the interpretation outputs built on its weight posterior: odds ratios of
//! the final-layer inputs, single-code risk scores and per-stay credible
//! intervals.

mod interpret;
mod posterior;
mod prior;

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compute::{Adam, Grads, ParamStore, RngStream, Tape, TapeBuffers};
use crate::data::{Cohort, StayRecord, N_STATIC};
use crate::error::{Error, Result};
use crate::models::{
    build_model, predict_with, read_archive, write_archive, ArchitectureSpec, InputSchema, Model, ModelOptions, Network,
};
use crate::training::ClassWeight;

pub use interpret::{
    code_risk_scores, odds_ratio_of, patient_risk_ci, posterior_odds_ratios, write_code_scores, write_odds_ratios,
    CodeScore, OddsRatio, OR_SAMPLES,
};
pub use posterior::{dsigma_drho, mc_kl, sigma_of, GaussianPosterior, Noise, RHO_MIN};
pub use prior::{log_posterior, log_prior, Prior};

/// Architecture trained under Bayes-by-Backprop.
pub const BBB_ARCHITECTURE: ArchitectureSpec = ArchitectureSpec::AttnConcatTime;

pub const RHO_FILE: &str = "rho.bin";
pub const BAYES_FILE: &str = "bayes.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BbbConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Hard cap on epochs in case the stop rule never fires.
    pub max_epochs: usize,
    /// Epochs without a new lowest ELBO loss before stopping.
    pub patience: usize,
    /// Monte Carlo weight samples per batch.
    pub n_mc: usize,
    pub rho_init: f64,
    pub class_weight: ClassWeight,
    pub prior: Prior,
    pub model: ModelOptions,
}

impl Default for BbbConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 128,
            max_epochs: 300,
            patience: 10,
            n_mc: 1,
            rho_init: -5.0,
            class_weight: ClassWeight::Auto,
            prior: Prior::default(),
            model: ModelOptions {
                dropout: 0.0,
                time_scale_dp: 0.01,
                time_scale_mv: 0.1,
                ..ModelOptions::default()
            },
        }
    }
}

impl BbbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and >= 0",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.n_mc == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs, patience and n_mc must be at least 1".into(),
            ));
        }
        if !self.rho_init.is_finite() {
            return Err(Error::Config("rho_init must be finite".into()));
        }
        if let ClassWeight::Fixed(w) = self.class_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("class weight {w} must be positive")));
            }
        }
        self.prior.validate()?;
        self.model.validate()
    }
}

/// Stops once `patience` consecutive epochs fail to lower the best loss.
#[derive(Debug, Clone, PartialEq)]
pub struct StopRule {
    patience: usize,
    best: f64,
    stale: usize,
    epoch: usize,
}

impl StopRule {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            stale: 0,
            epoch: 0,
        }
    }

    /// Records one epoch loss; `true` means training should stop now.
    pub fn observe(&mut self, loss: f64) -> bool {
        self.epoch += 1;
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

/// Epoch at which `losses` triggers the stop rule, if it does.
pub fn stopping_epoch(losses: &[f64], patience: usize) -> Option<usize> {
    let mut rule = StopRule::new(patience);
    losses.iter().position(|&l| rule.observe(l)).map(|i| i + 1)
}

/// Gradients of the ELBO loss with respect to the variational parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrads {
    pub mu: Grads,
    pub rho: Grads,
}

impl PosteriorGrads {
    pub fn zeros_like(p: &GaussianPosterior) -> Self {
        Self {
            mu: Grads::zeros_like(&p.mu),
            rho: Grads::zeros_like(&p.rho),
        }
    }

    fn zero(&mut self) {
        self.mu.zero();
        self.rho.zero();
    }

    fn is_finite(&self) -> bool {
        self.mu.is_finite() && self.rho.is_finite()
    }
}

#[derive(Debug, Clone)]
pub struct BayesianModel {
    pub network: Network,
    pub posterior: GaussianPosterior,
    pub prior: Prior,
    pub seed: u64,
}

impl BayesianModel {
    /// Wraps the freshly initialized `model` with posterior means at its
    /// current values and every `rho` at `rho_init`.
    pub fn from_model(model: Model, rho_init: f64, prior: Prior) -> Self {
        let mut network = model.network;
        network.options.dropout = 0.0;
        Self {
            network,
            posterior: GaussianPosterior::new(model.params, rho_init),
            prior,
            seed: model.seed,
        }
    }

    /// The network evaluated at the posterior means.
    pub fn mean_model(&self) -> Model {
        Model {
            network: self.network.clone(),
            params: self.posterior.mu.clone(),
            seed: self.seed,
        }
    }

    pub fn predict_mean<'a>(&self, stays: impl IntoIterator<Item = &'a StayRecord>) -> Result<Vec<f64>> {
        predict_with(&self.network, &self.posterior.mu, stays)
    }

    /// ELBO loss under one fixed noise draw:
    /// `kl_scale * sum(ln q - ln p) + sum of weighted log-losses`.
    /// Adds `scale` times the gradient into `grads` when given.
    pub fn elbo_with_noise(
        &self,
        batch: &[&StayRecord],
        w_pos: f64,
        kl_scale: f64,
        noise: &Noise,
        grads: Option<(&mut PosteriorGrads, f64)>,
    ) -> Result<f64> {
        let mut sample = self.posterior.mu.clone();
        self.posterior.sample_into(noise, &mut sample);
        let mut gw = Grads::zeros_like(&sample);
        let mut bufs = TapeBuffers::default();
        let mut data = 0.0;
        for stay in batch {
            let mut t = Tape::with_buffers(&sample, bufs);
            let l = self.network.loss(&mut t, stay, w_pos, None)?;
            data += t.scalar_value(l);
            if grads.is_some() {
                t.backward(l, &mut gw);
            }
            bufs = t.into_buffers();
        }
        let complexity = self.posterior.complexity(&sample, noise, &self.prior);
        if let Some((g, scale)) = grads {
            self.accumulate(&sample, noise, &gw, kl_scale, scale, g);
        }
        Ok(kl_scale * complexity + data)
    }

    fn accumulate(
        &self,
        sample: &ParamStore,
        noise: &Noise,
        gw: &Grads,
        kl: f64,
        scale: f64,
        out: &mut PosteriorGrads,
    ) {
        let post = &self.posterior;
        for id in post.mu.ids() {
            if !post.mu.is_trainable(id) {
                continue;
            }
            let eps = noise.get(id.index());
            let w = &sample.get(id).data;
            let rho = &post.rho.get(id).data;
            let g = gw.get(id);
            let gmu = out.mu.get_mut(id);
            for k in 0..w.len() {
                let dp = self.prior.dlog_density(w[k]);
                gmu[k] += scale * (g[k] - kl * dp);
            }
            let grho = out.rho.get_mut(id);
            for k in 0..w.len() {
                let dp = self.prior.dlog_density(w[k]);
                let sigma = sigma_of(rho[k]);
                let gsigma = g[k] * eps[k] + kl * (-1.0 / sigma - eps[k] * dp);
                grho[k] += scale * gsigma * dsigma_drho(rho[k]);
            }
        }
    }

    /// Monte Carlo ELBO loss averaged over `n_mc` weight samples.
    pub fn elbo_loss(
        &self,
        batch: &[&StayRecord],
        w_pos: f64,
        n_mc: usize,
        kl_scale: f64,
        rng: &mut RngStream,
        mut grads: Option<&mut PosteriorGrads>,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Data("ELBO of an empty batch".into()));
        }
        if n_mc == 0 {
            return Err(Error::Config("n_mc must be at least 1".into()));
        }
        let inv = 1.0 / n_mc as f64;
        let mut total = 0.0;
        for _ in 0..n_mc {
            let noise = self.posterior.draw_noise(rng);
            let g = grads.as_deref_mut().map(|g| (g, inv));
            total += self.elbo_with_noise(batch, w_pos, kl_scale, &noise, g)?;
        }
        Ok(total * inv)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.mean_model().save(dir)?;
        let p = dir.join(RHO_FILE);
        let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        let rho = &self.posterior.rho;
        write_archive(f, rho.iter().map(|(id, name, v)| (name, rho.is_trainable(id), v)))?;
        let b = dir.join(BAYES_FILE);
        let f = File::create(&b).map_err(|e| Error::io(&b, e))?;
        serde_json::to_writer_pretty(f, &self.prior)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let model = Model::load(dir)?;
        let b = dir.join(BAYES_FILE);
        let prior: Prior = serde_json::from_reader(File::open(&b).map_err(|e| Error::io(&b, e))?)?;
        let p = dir.join(RHO_FILE);
        let records = read_archive(File::open(&p).map_err(|e| Error::io(&p, e))?)?;
        let mut out = Self::from_model(model, 0.0, prior);
        if records.len() != out.posterior.rho.len() {
            return Err(Error::Data(format!(
                "rho archive has {} arrays, expected {}",
                records.len(),
                out.posterior.rho.len()
            )));
        }
        for (name, _, value) in records {
            let id = out
                .posterior
                .rho
                .id(&name)
                .ok_or_else(|| Error::Data(format!("unknown rho array {name:?}")))?;
            let slot = out.posterior.rho.get_mut(id);
            if slot.shape != value.shape {
                return Err(Error::Shape {
                    context: "rho array",
                    expected: slot.shape.clone(),
                    actual: value.shape,
                });
            }
            *slot = value;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct BbbOutcome {
    pub model: BayesianModel,
    /// Summed ELBO loss of each epoch.
    pub epoch_elbo: Vec<f64>,
    pub w_pos: f64,
}

/// Starts the final-layer weights of the two stream scores at
/// `1/sqrt(fan_in)`; the static weights keep their zero start.
fn init_score_weights(model: &mut Model) {
    let w = model.params.get_mut(model.network.final_w);
    let start = 1.0 / (w.len() as f64).sqrt();
    w.data[N_STATIC..].iter_mut().for_each(|x| *x = start);
}

/// Variational training on every stay of `cohort` until the epoch ELBO loss
/// stalls for `cfg.patience` epochs (or `cfg.max_epochs` is reached).
pub fn train_bbb(cohort: &Cohort, cfg: &BbbConfig, seed: u64) -> Result<BbbOutcome> {
    cfg.validate()?;
    if cohort.stays.is_empty() {
        return Err(Error::Data("empty cohort".into()));
    }
    let schema = InputSchema::from_cohort(cohort);
    let mut base = build_model(BBB_ARCHITECTURE, &schema, &cfg.model, seed, None)?;
    init_score_weights(&mut base);
    let mut model = BayesianModel::from_model(base, cfg.rho_init, cfg.prior);
    let w_pos = match cfg.class_weight {
        ClassWeight::Auto => crate::training::class_weight(&cohort.stays)?,
        ClassWeight::Fixed(w) => w,
    };

    let rng = RngStream::new(seed);
    let mut shuffle_rng = rng.substream(1);
    let mut noise_rng = rng.substream(3);
    let mut adam_mu = Adam::new(&model.posterior.mu, cfg.lr);
    let mut adam_rho = Adam::new(&model.posterior.rho, cfg.lr);
    let mut grads = PosteriorGrads::zeros_like(&model.posterior);
    let mut order: Vec<usize> = (0..cohort.stays.len()).collect();
    let n_batches = order.len().div_ceil(cfg.batch_size);
    let kl_scale = 1.0 / n_batches as f64;
    let mut rule = StopRule::new(cfg.patience);
    let mut epoch_elbo = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&StayRecord> = chunk.iter().map(|&i| &cohort.stays[i]).collect();
            grads.zero();
            let loss = model.elbo_loss(&batch, w_pos, cfg.n_mc, kl_scale, &mut noise_rng, Some(&mut grads))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            total += loss;
            adam_mu.step(&mut model.posterior.mu, &grads.mu)?;
            adam_rho.step(&mut model.posterior.rho, &grads.rho)?;
        }
        log::info!("bayes-by-backprop epoch {epoch}: ELBO loss {total:.3}");
        epoch_elbo.push(total);
        if rule.observe(total) {
            break;
        }
    }
    Ok(BbbOutcome {
        model,
        epoch_elbo,
        w_pos,
    })
}
