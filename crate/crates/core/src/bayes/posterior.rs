use crate::compute::{sigmoid, softplus, ParamStore, RngStream};

use super::prior::{log_posterior, Prior};

/// Lower clamp applied to `rho` before the softplus.
pub const RHO_MIN: f64 = -40.0;

/// Standard-normal draws laid out like a [`ParamStore`]; frozen arrays get
/// an empty buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise(pub Vec<Vec<f64>>);

impl Noise {
    pub fn get(&self, index: usize) -> &[f64] {
        &self.0[index]
    }
}

/// `sigma = softplus(max(rho, RHO_MIN))`.
pub fn sigma_of(rho: f64) -> f64 {
    softplus(rho.max(RHO_MIN))
}

/// `d sigma / d rho`, zero inside the clamp.
pub fn dsigma_drho(rho: f64) -> f64 {
    if rho < RHO_MIN {
        0.0
    } else {
        sigmoid(rho)
    }
}

/// Diagonal Gaussian over every trainable scalar of a parameter store.
/// Frozen arrays (pretrained tables) are carried as point masses.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mu: ParamStore,
    pub rho: ParamStore,
}

impl GaussianPosterior {
    pub fn new(mu: ParamStore, rho_init: f64) -> Self {
        let rho = mu.filled(rho_init);
        Self { mu, rho }
    }

    /// Number of variational scalars.
    pub fn n_variational(&self) -> usize {
        self.mu.n_trainable_scalars()
    }

    pub fn draw_noise(&self, rng: &mut RngStream) -> Noise {
        Noise(
            self.mu
                .iter()
                .map(|(id, _, v)| {
                    if self.mu.is_trainable(id) {
                        (0..v.len()).map(|_| rng.normal()).collect()
                    } else {
                        Vec::new()
                    }
                })
                .collect(),
        )
    }

    /// Writes `mu + sigma * eps` into `out`, which must share the layout.
    pub fn sample_into(&self, noise: &Noise, out: &mut ParamStore) {
        for id in self.mu.ids() {
            if !self.mu.is_trainable(id) {
                continue;
            }
            let eps = noise.get(id.index());
            let mu = &self.mu.get(id).data;
            let rho = &self.rho.get(id).data;
            for (k, w) in out.get_mut(id).data.iter_mut().enumerate() {
                *w = mu[k] + sigma_of(rho[k]) * eps[k];
            }
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> ParamStore {
        let noise = self.draw_noise(rng);
        let mut out = self.mu.clone();
        self.sample_into(&noise, &mut out);
        out
    }

    /// `sum (ln q(w) - ln p(w))` over the variational scalars of a sample.
    pub fn complexity(&self, sample: &ParamStore, noise: &Noise, prior: &Prior) -> f64 {
        let mut total = 0.0;
        for id in self.mu.ids() {
            if !self.mu.is_trainable(id) {
                continue;
            }
            let mu = &self.mu.get(id).data;
            let rho = &self.rho.get(id).data;
            let w = &sample.get(id).data;
            debug_assert_eq!(noise.get(id.index()).len(), w.len());
            for k in 0..w.len() {
                total += log_posterior(w[k], mu[k], sigma_of(rho[k])) - prior.log_density(w[k]);
            }
        }
        total
    }
}

/// Monte Carlo estimate of `KL(N(mu, sigma^2) || prior)` from `n` draws.
pub fn mc_kl(mu: f64, sigma: f64, prior: &Prior, n: usize, rng: &mut RngStream) -> f64 {
    let total: f64 = (0..n)
        .map(|_| {
            let w = mu + sigma * rng.normal();
            log_posterior(w, mu, sigma) - prior.log_density(w)
        })
        .sum();
    total / n as f64
}
