use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which decoder architecture a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// CNN + Transformer: causal self-attention, then cross-attention over
    /// fixed encoder states.
    Baseline,
    /// Acoustic states concatenated with target embeddings and processed
    /// together by speech-text mixed attention in every decoder block.
    Adast,
    /// Baseline decoder whose encoder memory is refreshed by one extra
    /// self-attention block before each decoder layer's cross-attention.
    StaticAblation,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::Adast, Variant::StaticAblation];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Adast => "adast",
            Variant::StaticAblation => "static_ablation",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown variant `{s}` (expected baseline, adast or static_ablation)"
                ))
            })
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_cnn_layers: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub cnn_channels: usize,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub dropout: f64,
    pub variant: Variant,
    pub position_restart_at_text: bool,
    pub use_modality_embedding: bool,
    pub tie_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_cnn_layers: 2,
            n_enc_layers: 12,
            n_dec_layers: 10,
            d_model: 256,
            n_heads: 4,
            d_ff: 1024,
            cnn_channels: 64,
            vocab_size: 1000,
            feature_dim: 80,
            dropout: 0.0,
            variant: Variant::Adast,
            position_restart_at_text: false,
            use_modality_embedding: true,
            tie_embeddings: false,
        }
    }
}

/// Keys accepted by [`ModelConfig::set`], in manifest order.
pub const MODEL_KEYS: [&str; 14] = [
    "n_cnn_layers",
    "n_enc_layers",
    "n_dec_layers",
    "d_model",
    "n_heads",
    "d_ff",
    "cnn_channels",
    "vocab_size",
    "feature_dim",
    "dropout",
    "variant",
    "position_restart_at_text",
    "use_modality_embedding",
    "tie_embeddings",
];

pub(crate) fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
}

impl ModelConfig {
    /// A small configuration for tests and desk-scale runs.
    pub fn tiny(variant: Variant) -> Self {
        ModelConfig {
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            cnn_channels: 4,
            vocab_size: 12,
            feature_dim: 8,
            variant,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("cnn_channels", self.cnn_channels),
            ("vocab_size", self.vocab_size),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("`{k}` must be at least 1")));
            }
        }
        if self.n_cnn_layers != 2 {
            return Err(Error::config(format!(
                "the subsampler has exactly 2 convolution layers, got n_cnn_layers = {}",
                self.n_cnn_layers
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::config(format!("d_model {} must be even", self.d_model)));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::config(
                "vocab_size must cover pad, eos, bos and at least one token",
            ));
        }
        if self.feature_dim < 4 {
            return Err(Error::config(format!(
                "feature_dim {} is below the subsampler minimum of 4",
                self.feature_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_cnn_layers" => self.n_cnn_layers = parse_value(key, value)?,
            "n_enc_layers" => self.n_enc_layers = parse_value(key, value)?,
            "n_dec_layers" => self.n_dec_layers = parse_value(key, value)?,
            "d_model" => self.d_model = parse_value(key, value)?,
            "n_heads" => self.n_heads = parse_value(key, value)?,
            "d_ff" => self.d_ff = parse_value(key, value)?,
            "cnn_channels" => self.cnn_channels = parse_value(key, value)?,
            "vocab_size" => self.vocab_size = parse_value(key, value)?,
            "feature_dim" => self.feature_dim = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "variant" => self.variant = value.trim().parse()?,
            "position_restart_at_text" => self.position_restart_at_text = parse_value(key, value)?,
            "use_modality_embedding" => self.use_modality_embedding = parse_value(key, value)?,
            "tie_embeddings" => self.tie_embeddings = parse_value(key, value)?,
            other => return Err(Error::config(format!("unknown model key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "n_cnn_layers" => self.n_cnn_layers.to_string(),
            "n_enc_layers" => self.n_enc_layers.to_string(),
            "n_dec_layers" => self.n_dec_layers.to_string(),
            "d_model" => self.d_model.to_string(),
            "n_heads" => self.n_heads.to_string(),
            "d_ff" => self.d_ff.to_string(),
            "cnn_channels" => self.cnn_channels.to_string(),
            "vocab_size" => self.vocab_size.to_string(),
            "feature_dim" => self.feature_dim.to_string(),
            "dropout" => self.dropout.to_string(),
            "variant" => self.variant.to_string(),
            "position_restart_at_text" => self.position_restart_at_text.to_string(),
            "use_modality_embedding" => self.use_modality_embedding.to_string(),
            "tie_embeddings" => self.tie_embeddings.to_string(),
            _ => return None,
        })
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        MODEL_KEYS
            .iter()
            .map(|&k| (k, self.get(k).expect("known key")))
            .collect()
    }
}
