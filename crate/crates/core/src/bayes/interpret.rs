use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::compute::{ParamStore, RngStream, Tape};
use crate::data::{StayRecord, Stream, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::{quantile, Estimate};

use super::posterior::sigma_of;
use super::BayesianModel;

/// Posterior draws used for every interpretation output.
pub const OR_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRatio {
    pub covariate: String,
    /// Mean of `exp(w)` over the draws.
    pub or_mean: f64,
    pub or_lo: f64,
    pub or_hi: f64,
    /// `exp` of the posterior mean weight.
    pub or_at_mean: f64,
}

impl OddsRatio {
    pub fn excludes_one(&self) -> bool {
        self.or_hi < 1.0 || self.or_lo > 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeScore {
    pub code: String,
    pub score_mean: f64,
    pub score_lo: f64,
    pub score_hi: f64,
}

fn summarize(mut draws: Vec<f64>) -> Estimate {
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    draws.sort_by(f64::total_cmp);
    Estimate {
        point: mean,
        lo: quantile(&draws, 0.025),
        hi: quantile(&draws, 0.975),
    }
}

fn check_samples(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::Config("at least one posterior sample is required".into()))
    } else {
        Ok(())
    }
}

/// Odds-ratio summary of a weight with posterior `N(mu, sigma^2)`.
pub fn odds_ratio_of(covariate: &str, mu: f64, sigma: f64, n: usize, rng: &mut RngStream) -> Result<OddsRatio> {
    check_samples(n)?;
    let e = summarize((0..n).map(|_| (mu + sigma * rng.normal()).exp()).collect());
    Ok(OddsRatio {
        covariate: covariate.to_string(),
        or_mean: e.point,
        or_lo: e.lo,
        or_hi: e.hi,
        or_at_mean: mu.exp(),
    })
}

/// One row per final-layer input (statics, then the two stream scores).
/// Each covariate draws from its own substream of `rng`.
pub fn posterior_odds_ratios(model: &BayesianModel, n_samples: usize, rng: &RngStream) -> Result<Vec<OddsRatio>> {
    let post = &model.posterior;
    let id = model.network.final_w;
    let mu = &post.mu.get(id).data;
    let rho = &post.rho.get(id).data;
    model
        .network
        .input_names()
        .iter()
        .enumerate()
        .map(|(j, name)| odds_ratio_of(name, mu[j], sigma_of(rho[j]), n_samples, &mut rng.substream(j as u64)))
        .collect()
}

/// Scores every code of `stream` in isolation: its embedding row with the
/// time column set to zero, passed through the stream's score head. Scores
/// are multiplied by the sign of the posterior-mean final weight of that
/// stream so that larger always means higher risk. Sorted by mean score,
/// highest first.
pub fn code_risk_scores(
    model: &BayesianModel,
    vocab: &Vocabulary,
    stream: Stream,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<Vec<CodeScore>> {
    check_samples(n_samples)?;
    let net = &model.network;
    let layers = net
        .stream(stream)
        .ok_or_else(|| Error::Config(format!("{} has no {stream} stream", net.spec)))?;
    if vocab.len() != layers.vocab_size {
        return Err(Error::Shape {
            context: "code vocabulary",
            expected: vec![layers.vocab_size],
            actual: vec![vocab.len()],
        });
    }
    let slot = crate::data::N_STATIC + net.streams.iter().position(|l| l.stream == stream).unwrap_or(0);
    let orientation = if model.posterior.mu.get(net.final_w).data[slot] < 0.0 {
        -1.0
    } else {
        1.0
    };

    let post = &model.posterior;
    let ids = [layers.embed, layers.score.w, layers.score.b];
    let mut draws = vec![Vec::with_capacity(n_samples); vocab.len()];
    let mut sample = post.mu.clone();
    for _ in 0..n_samples {
        for id in ids {
            if !post.mu.is_trainable(id) {
                continue;
            }
            let mu = &post.mu.get(id).data;
            let rho = &post.rho.get(id).data;
            for (k, w) in sample.get_mut(id).data.iter_mut().enumerate() {
                *w = mu[k] + sigma_of(rho[k]) * rng.normal();
            }
        }
        let table = sample.get(layers.embed);
        let w = &sample.get(layers.score.w).data;
        let b = sample.get(layers.score.b).data[0];
        for (code, out) in draws.iter_mut().enumerate() {
            let row = table.row(code);
            let s: f64 = row.iter().zip(w).map(|(x, wi)| x * wi).sum::<f64>() + b;
            out.push(orientation * s);
        }
    }
    let mut scores: Vec<CodeScore> = draws
        .into_iter()
        .enumerate()
        .map(|(code, d)| {
            let e = summarize(d);
            CodeScore {
                code: vocab.code(code as u32).to_string(),
                score_mean: e.point,
                score_lo: e.lo,
                score_hi: e.hi,
            }
        })
        .collect();
    scores.sort_by(|a, b| b.score_mean.total_cmp(&a.score_mean).then_with(|| a.code.cmp(&b.code)));
    Ok(scores)
}

/// Mean risk of `stay` over `n_samples` sampled networks with a 95%
/// percentile interval.
pub fn patient_risk_ci(
    model: &BayesianModel,
    stay: &StayRecord,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<Estimate> {
    check_samples(n_samples)?;
    let mut sample: ParamStore = model.posterior.mu.clone();
    let mut risks = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let noise = model.posterior.draw_noise(rng);
        model.posterior.sample_into(&noise, &mut sample);
        let mut t = Tape::new(&sample);
        let p = model.network.probability(&mut t, stay, None)?;
        risks.push(t.scalar_value(p));
    }
    Ok(summarize(risks))
}

pub fn write_odds_ratios<W: Write>(rows: &[OddsRatio], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("<odds ratios>", e))?;
    Ok(())
}

pub fn write_code_scores<W: Write>(rows: &[CodeScore], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("<code scores>", e))?;
    Ok(())
}
