pub mod bayes;
pub mod compute;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
