use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln N(w; 0, sigma^2)`.
fn ln_normal(w: f64, sigma: f64) -> f64 {
    -LN_SQRT_2PI - sigma.ln() - 0.5 * (w / sigma).powi(2)
}

/// Weight prior: a zero-mean Gaussian or a two-component scale mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    Gaussian { sigma: f64 },
    ScaleMixture { pi: f64, sigma1: f64, sigma2: f64 },
}

impl Default for Prior {
    /// `0.5 N(0, 1) + 0.5 N(0, e^-12)`.
    fn default() -> Self {
        Prior::ScaleMixture {
            pi: 0.5,
            sigma1: 1.0,
            sigma2: (-6.0f64).exp(),
        }
    }
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Prior::Gaussian { sigma } => sigma > 0.0,
            Prior::ScaleMixture { pi, sigma1, sigma2 } => 0.0 < pi && pi < 1.0 && sigma1 > sigma2 && sigma2 > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid prior {self:?}")))
        }
    }

    /// Log density, evaluated with log-sum-exp for the mixture.
    pub fn log_density(&self, w: f64) -> f64 {
        match *self {
            Prior::Gaussian { sigma } => ln_normal(w, sigma),
            Prior::ScaleMixture { pi, sigma1, sigma2 } => {
                let a = pi.ln() + ln_normal(w, sigma1);
                let b = (1.0 - pi).ln() + ln_normal(w, sigma2);
                let m = a.max(b);
                m + ((a - m).exp() + (b - m).exp()).ln()
            }
        }
    }

    /// `d/dw log p(w)`.
    pub fn dlog_density(&self, w: f64) -> f64 {
        match *self {
            Prior::Gaussian { sigma } => -w / (sigma * sigma),
            Prior::ScaleMixture { pi, sigma1, sigma2 } => {
                let a = pi.ln() + ln_normal(w, sigma1);
                let b = (1.0 - pi).ln() + ln_normal(w, sigma2);
                let m = a.max(b);
                let (ea, eb) = ((a - m).exp(), (b - m).exp());
                let (ra, rb) = (ea / (ea + eb), eb / (ea + eb));
                -w * (ra / (sigma1 * sigma1) + rb / (sigma2 * sigma2))
            }
        }
    }
}

/// `ln p(w)` under `prior`.
pub fn log_prior(w: f64, prior: &Prior) -> f64 {
    prior.log_density(w)
}

/// `ln q(w)` for `q = N(mu, sigma^2)`.
pub fn log_posterior(w: f64, mu: f64, sigma: f64) -> f64 {
    -LN_SQRT_2PI - sigma.ln() - 0.5 * ((w - mu) / sigma).powi(2)
}
