//! Differentiable primitives, optimizer, losses and the gradient checker.

mod adam;
mod gradcheck;
mod loss;
mod rng;
mod tape;
mod value;

pub use adam::{adam_step, Adam, AdamState, BETA1, BETA2, EPSILON};
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck, FD_EPSILON};
pub use loss::{dropout, weighted_bce, weighted_bce_mean};
pub use rng::{derive_seed, RngStream};
pub(crate) use tape::{sigmoid, softplus};
pub use tape::{GruParams, OdeFieldParams, Tape, TapeBuffers, Var};
pub use value::{Grads, ParamId, ParamStore, Value};

#[cfg(test)]
mod tests;
