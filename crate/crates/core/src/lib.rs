pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gat;
pub mod gradcheck;
pub mod graph;
pub mod head;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use checkpoint::Tagger;
pub use config::{ModelConfig, Preset, RunSettings, TrainConfig, Variant};
pub use error::{Error, Result};
pub use rng::RngState;
pub use tensor::Tensor;
