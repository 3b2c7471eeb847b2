//! Code embeddings: sizing, initialization, neural-ODE evolution, time
//! concatenation and pretrained medical concept embeddings.

mod mce;
mod ode;
mod table;

pub use mce::{bucket_edges, mce_attention, mce_hidden, mce_pretrain, MceConfig, MceModel};
pub use ode::{evolve_ode, init_ode_field, MlpField, StepPolicy, VectorField};
pub use table::{read_embedding_csv, write_embedding_csv};

use crate::compute::{ParamId, ParamStore, RngStream, Value};
use crate::error::Result;

/// `round(2 * vocab_size^(1/4))`, at least 2.
pub fn embed_dim(vocab_size: usize) -> usize {
    let d = (2.0 * (vocab_size.max(1) as f64).powf(0.25)).round() as usize;
    d.max(2)
}

/// `[e; elapsed]`.
pub fn concat_time(e: &[f64], elapsed: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(e.len() + 1);
    out.extend_from_slice(e);
    out.push(elapsed);
    out
}

/// Uniform(-1/sqrt(d), 1/sqrt(d)) table of shape `rows x d`.
pub fn init_table(rows: usize, d: usize, rng: &mut RngStream) -> Value {
    let a = 1.0 / (d as f64).sqrt();
    let data = (0..rows * d).map(|_| rng.uniform_range(-a, a)).collect();
    Value {
        data,
        shape: vec![rows, d],
    }
}

/// Inserts a freshly initialized embedding table.
pub fn insert_table(
    ps: &mut ParamStore,
    name: &str,
    rows: usize,
    d: usize,
    rng: &mut RngStream,
    trainable: bool,
) -> Result<ParamId> {
    ps.insert(name, init_table(rows, d, rng), trainable)
}
