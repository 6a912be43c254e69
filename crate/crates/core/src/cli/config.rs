//! Run configuration: every knob as a `section.key` string, layered as
//! defaults, then a `key = value` file, then command-line settings.

use std::fs;
use std::path::Path;

use crate::decoding::DecodeMode;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant, MODEL_KEYS};
use crate::numerics::Precision;
use crate::probe::ProbeConfig;
use crate::synthdata::{SyntheticSpec, DATA_KEYS};
use crate::training::{TrainConfig, TRAIN_KEYS};

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub beam: usize,
    /// 0 means `2 S + 16`.
    pub max_len: usize,
    pub length_penalty: f64,
    pub mode: DecodeMode,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 1,
            max_len: 0,
            length_penalty: 1.0,
            mode: DecodeMode::Incremental,
        }
    }
}

const DECODE_KEYS: [&str; 4] = ["beam", "max_len", "length_penalty", "mode"];
const PROBE_KEYS: [&str; 4] = ["steps", "lr", "batch_size", "pooling"];

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    crate::model::config_value(key, value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: SyntheticSpec,
    pub decode: DecodeConfig,
    pub probe: ProbeConfig,
    /// Drives data generation, initialization, batching and probing.
    pub seed: u64,
    pub precision: Precision,
}

impl Default for RunConfig {
    /// Desk-scale defaults: a 4+4 layer, 64-wide model on the default
    /// synthetic corpus.
    fn default() -> Self {
        let data = SyntheticSpec::default();
        RunConfig {
            model: ModelConfig {
                n_enc_layers: 4,
                n_dec_layers: 4,
                d_model: 64,
                n_heads: 4,
                d_ff: 256,
                cnn_channels: 32,
                vocab_size: data.vocab_size,
                feature_dim: data.feature_dim,
                dropout: 0.1,
                position_restart_at_text: true,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                peak_lr: 2e-3,
                ..TrainConfig::default()
            },
            data,
            decode: DecodeConfig::default(),
            probe: ProbeConfig::default(),
            seed: 1,
            precision: Precision::F32,
        }
    }
}

impl RunConfig {
    /// All accepted keys.
    pub fn keys() -> Vec<String> {
        let mut keys = vec!["seed".to_string(), "precision".to_string()];
        keys.extend(MODEL_KEYS.iter().map(|k| format!("model.{k}")));
        keys.extend(TRAIN_KEYS.iter().filter(|k| **k != "seed").map(|k| format!("train.{k}")));
        keys.extend(DATA_KEYS.iter().filter(|k| **k != "seed").map(|k| format!("data.{k}")));
        keys.extend(DECODE_KEYS.iter().map(|k| format!("decode.{k}")));
        keys.extend(PROBE_KEYS.iter().map(|k| format!("probe.{k}")));
        keys
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let unknown = || Error::config(format!("unknown configuration key `{key}`"));
        match key.split_once('.') {
            None => match key {
                "seed" => self.seed = parse(key, value)?,
                "precision" => self.precision = value.parse()?,
                _ => return Err(unknown()),
            },
            Some((_, "seed")) => return Err(unknown()),
            Some(("model", k)) if MODEL_KEYS.contains(&k) => self.model.set(k, value)?,
            Some(("train", k)) if TRAIN_KEYS.contains(&k) => self.train.set(k, value)?,
            Some(("data", k)) if DATA_KEYS.contains(&k) => self.data.set(k, value)?,
            Some(("decode", k)) => match k {
                "beam" => self.decode.beam = parse(key, value)?,
                "max_len" => self.decode.max_len = parse(key, value)?,
                "length_penalty" => self.decode.length_penalty = parse(key, value)?,
                "mode" => {
                    self.decode.mode = match value {
                        "incremental" => DecodeMode::Incremental,
                        "full" => DecodeMode::Full,
                        _ => return Err(Error::config(format!("decode.mode must be incremental or full, got `{value}`"))),
                    }
                }
                _ => return Err(unknown()),
            },
            Some(("probe", k)) => match k {
                "steps" => self.probe.steps = parse(key, value)?,
                "lr" => self.probe.lr = parse(key, value)?,
                "batch_size" => self.probe.batch_size = parse(key, value)?,
                "pooling" => self.probe.pooling = value.parse()?,
                _ => return Err(unknown()),
            },
            _ => return Err(unknown()),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        match key.split_once('.') {
            None => match key {
                "seed" => Some(self.seed.to_string()),
                "precision" => Some(self.precision.to_string()),
                _ => None,
            },
            Some((_, "seed")) => None,
            Some(("model", k)) => self.model.get(k),
            Some(("train", k)) => self.train.get(k),
            Some(("data", k)) => self.data.get(k),
            Some(("decode", k)) => match k {
                "beam" => Some(self.decode.beam.to_string()),
                "max_len" => Some(self.decode.max_len.to_string()),
                "length_penalty" => Some(self.decode.length_penalty.to_string()),
                "mode" => Some(
                    match self.decode.mode {
                        DecodeMode::Incremental => "incremental",
                        DecodeMode::Full => "full",
                    }
                    .to_string(),
                ),
                _ => None,
            },
            Some(("probe", k)) => match k {
                "steps" => Some(self.probe.steps.to_string()),
                "lr" => Some(self.probe.lr.to_string()),
                "batch_size" => Some(self.probe.batch_size.to_string()),
                "pooling" => Some(self.probe.pooling.to_string()),
                _ => None,
            },
            _ => None,
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("{}:{}: expected `key = value`", origin.display(), n + 1))
            })?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(m) => Error::config(format!("{}:{}: {m}", origin.display(), n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    /// Applies one `key=value` command-line setting.
    pub fn apply_setting(&mut self, setting: &str) -> Result<()> {
        let (k, v) = setting
            .split_once('=')
            .ok_or_else(|| Error::config(format!("`--set {setting}`: expected key=value")))?;
        self.set(k.trim(), v)
    }

    /// Copies the run seed into every component and validates.
    pub fn finish(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.data.seed = self.seed;
        self.probe.seed = self.seed;
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate().map_err(|e| match e {
            Error::Validation(m) => Error::Config(m),
            other => other,
        })?;
        if self.decode.beam == 0 {
            return Err(Error::config("decode.beam must be at least 1"));
        }
        Ok(self)
    }

    /// `key = value` lines for every key, in [`RunConfig::keys`] order.
    pub fn to_text(&self) -> String {
        Self::keys()
            .into_iter()
            .map(|k| {
                let v = self.get(&k).expect("every listed key has a value");
                format!("{k} = {v}\n")
            })
            .collect()
    }

    pub fn variant(&self) -> Variant {
        self.model.variant
    }
}
