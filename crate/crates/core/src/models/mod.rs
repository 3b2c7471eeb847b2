//! The architecture zoo and its building blocks.

mod checkpoint;
mod layers;
mod network;
mod spec;

pub use checkpoint::{read_archive, write_archive, Manifest, MANIFEST_FILE, PARAMS_FILE};
pub use layers::{apply_exp_decay, attend, AttentionHead, BiGru, ScoreHead, TimeModeParams};
pub use network::{
    build_model, predict_with, InputSchema, MceTables, Model, ModelOptions, Network, StreamLayers, VitalSlot,
};
pub use spec::{ArchitectureSpec, EmbeddingKind, Pooling, TimeMode};

#[cfg(test)]
mod tests;
