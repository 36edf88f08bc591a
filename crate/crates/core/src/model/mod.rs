//! Network assembly, parameter accounting and checkpoint files.

mod checkpoint;
mod config;
mod network;

#[cfg(test)]
mod tests;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{Ablation, ModelConfig, RefSource, MODEL_KEYS};
pub use network::{GateReading, HiTSRModel, NamedTensors, RefFeatureNet, RefPerceptual, ADAM_M, ADAM_V, TRAIN_STATE};
