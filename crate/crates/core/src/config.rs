//! Model and training hyperparameters, presets and JSON overrides.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Which stages run between the encoder and the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Encoder → classifier.
    Encoder,
    /// Encoder → token graph → GAT → classifier.
    Gat,
    /// Encoder → token graph → GAT → decoder refiner → classifier.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Encoder, Variant::Gat, Variant::Full];

    pub fn uses_gat(self) -> bool {
        !matches!(self, Variant::Encoder)
    }

    pub fn uses_decoder(self) -> bool {
        matches!(self, Variant::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Encoder => "encoder",
            Variant::Gat => "gat",
            Variant::Full => "full",
        }
    }

    /// Row label in ablation tables.
    pub fn describe(self) -> &'static str {
        match self {
            Variant::Encoder => "encoder-only",
            Variant::Gat => "encoder+gat",
            Variant::Full => "full (encoder+gat+decoder)",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder" | "encoder-only" => Ok(Variant::Encoder),
            "gat" | "encoder+gat" => Ok(Variant::Gat),
            "full" => Ok(Variant::Full),
            _ => Err(config(format!("unknown variant `{s}` (expected encoder, gat or full)"))),
        }
    }
}

/// Architecture hyperparameters. Vocabulary sizes are filled in from the
/// training data when a model is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Token embedding width.
    pub d_emb: usize,
    /// Width of the projected encoder output, the GAT input/output and the decoder.
    pub d_model: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub encoder_ff: usize,
    /// `heads · d_head` inside the GAT.
    pub gat_hidden: usize,
    pub gat_heads: usize,
    pub negative_slope: f64,
    pub gat_residual: bool,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub decoder_ff: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            d_emb: 64,
            d_model: 64,
            encoder_layers: 1,
            encoder_heads: 4,
            encoder_ff: 256,
            gat_hidden: 32,
            gat_heads: 4,
            negative_slope: 0.2,
            gat_residual: false,
            decoder_layers: 1,
            decoder_heads: 4,
            decoder_ff: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_emb == 0 || self.d_emb % 2 != 0 {
            return Err(config(format!("d_emb must be even and positive, got {}", self.d_emb)));
        }
        if self.d_model == 0 {
            return Err(config("d_model must be positive"));
        }
        if self.encoder_layers > 0 && (self.encoder_heads == 0 || self.d_emb % self.encoder_heads != 0) {
            return Err(config(format!(
                "d_emb {} is not divisible by {} encoder heads",
                self.d_emb, self.encoder_heads
            )));
        }
        if self.gat_heads == 0 || self.gat_hidden == 0 || self.gat_hidden % self.gat_heads != 0 {
            return Err(config(format!(
                "GAT hidden size {} is not divisible by {} heads",
                self.gat_hidden, self.gat_heads
            )));
        }
        if !(0.0..1.0).contains(&self.negative_slope) || self.negative_slope == 0.0 {
            return Err(config("negative_slope must lie in (0, 1)"));
        }
        if self.decoder_layers == 0 && self.variant.uses_decoder() {
            return Err(config("the full variant needs at least one decoder layer"));
        }
        if self.decoder_heads == 0 || self.d_model % self.decoder_heads != 0 {
            return Err(config(format!(
                "d_model {} is not divisible by {} decoder heads",
                self.d_model, self.decoder_heads
            )));
        }
        Ok(())
    }
}

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub warmup_ratio: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_len: usize,
    /// Validation evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            weight_decay: 0.01,
            clip_norm: 1.0,
            warmup_ratio: 0.1,
            dropout: 0.3,
            batch_size: 16,
            epochs: 15,
            max_len: 128,
            patience: 3,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(config(format!("warmup_ratio {} outside [0, 1)", self.warmup_ratio)));
        }
        if self.clip_norm <= 0.0 {
            return Err(config("clip_norm must be positive"));
        }
        if self.patience == 0 {
            return Err(config("patience must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.batch_size == 0 || self.max_len == 0 || self.epochs == 0 {
            return Err(config("batch_size, max_len and epochs must be at least 1"));
        }
        if self.learning_rate < 0.0 || self.weight_decay < 0.0 {
            return Err(config("learning_rate and weight_decay must be non-negative"));
        }
        Ok(())
    }
}

/// Model and training settings together; the unit stored in checkpoints
/// and read from `--config` files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Applies a partial JSON document on top of these settings.
    pub fn merge_json(&self, overrides: &serde_json::Value) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, overrides);
        Ok(serde_json::from_value(base)?)
    }
}

fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Named hyperparameter bundles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// COVID-19 NER setting: lr 5e-5, 15 epochs, 8 GAT heads, hidden 256.
    PhoNer,
    /// Medical NER setting: lr 3e-5, 15 epochs, 8 GAT heads, hidden 256.
    VietMed,
    /// Disfluency setting: lr 2e-5, 10 epochs, 4 GAT heads, hidden 256.
    Disfluency,
    /// Small, fast settings for the synthetic tasks.
    Desk,
}

impl FromStr for Preset {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phoner" => Ok(Preset::PhoNer),
            "vietmed" => Ok(Preset::VietMed),
            "disfluency" => Ok(Preset::Disfluency),
            "desk" => Ok(Preset::Desk),
            _ => Err(config(format!(
                "unknown preset `{s}` (expected phoner, vietmed, disfluency or desk)"
            ))),
        }
    }
}

impl Preset {
    pub fn settings(self) -> RunSettings {
        let mut s = RunSettings::default();
        let full_scale = |s: &mut RunSettings, lr: f64, epochs: usize, heads: usize| {
            s.train.learning_rate = lr;
            s.train.epochs = epochs;
            s.train.batch_size = 16;
            s.train.max_len = 128;
            s.model.gat_heads = heads;
            s.model.gat_hidden = 256;
        };
        match self {
            Preset::PhoNer => full_scale(&mut s, 5e-5, 15, 8),
            Preset::VietMed => full_scale(&mut s, 3e-5, 15, 8),
            Preset::Disfluency => full_scale(&mut s, 2e-5, 10, 4),
            Preset::Desk => {
                s.model.d_emb = 32;
                s.model.d_model = 32;
                s.model.encoder_ff = 64;
                s.model.decoder_ff = 64;
                s.model.gat_hidden = 32;
                s.model.gat_heads = 4;
                s.train.learning_rate = 3e-3;
                s.train.epochs = 10;
                s.train.dropout = 0.1;
                s.train.max_len = 64;
            }
        }
        s
    }
}
