//! Synthetic speech-like corpora.
//!
//! Every token owns a fixed random unit "prototype" vector. An utterance
//! is a run of frame blocks, one block per source token, where each frame
//! is the token's prototype plus a per-class bias plus gaussian noise.
//! Targets are derived from the source tokens by a mode-specific rule:
//!
//! * `asr_like`: the source itself (monotonic, same vocabulary);
//! * `mt_like`: a fixed bijective remap of token ids, then a swap inside
//!   adjacent pairs `(2k, 2k+1)` whose remapped ids are both odd.
//!   Each token is shown as exactly [`MT_FRAMES_PER_TOKEN`] frames, so the
//!   subsampled input has one vector per token, as for a text source;
//! * `st_like`: the `mt_like` target with the variable-rate frame
//!   expansion of `asr_like`, so the model must align and reorder.
//!
//! The parity rule is symmetric in the pair, so applying it again to a
//! target undoes the reorder and the whole mapping can be inverted.

mod io;

pub use io::{read_corpus, read_split, write_corpus, write_split, CORPUS_FILE};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::model::config_value as parse_value;
use crate::numerics::{seeded_rng, SeededRng, Tensor};
use crate::tokens::FIRST_CONTENT;

/// Frames emitted per token in `mt_like` mode: one subsampled frame.
pub const MT_FRAMES_PER_TOKEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskMode {
    AsrLike,
    MtLike,
    StLike,
}

impl TaskMode {
    pub const ALL: [TaskMode; 3] = [TaskMode::AsrLike, TaskMode::MtLike, TaskMode::StLike];

    pub fn name(self) -> &'static str {
        match self {
            TaskMode::AsrLike => "asr_like",
            TaskMode::MtLike => "mt_like",
            TaskMode::StLike => "st_like",
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown mode `{s}` (expected asr_like, mt_like or st_like)"
                ))
            })
    }
}

/// Generation knobs. `vocab_size` counts the reserved ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_frames_per_token: usize,
    pub max_frames_per_token: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub mode: TaskMode,
    /// Number of pseudo-speaker classes; 0 leaves utterances unlabeled.
    pub n_classes: usize,
    /// Norm of each class's additive feature bias.
    pub class_bias: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vocab_size: 32,
            min_len: 4,
            max_len: 10,
            min_frames_per_token: 4,
            max_frames_per_token: 5,
            feature_dim: 20,
            noise_std: 0.1,
            mode: TaskMode::StLike,
            n_classes: 4,
            class_bias: 0.5,
            n_train: 2000,
            n_dev: 200,
            n_test: 200,
            seed: 1,
        }
    }
}

/// Keys accepted by [`SyntheticSpec::set`].
pub const DATA_KEYS: [&str; 14] = [
    "vocab_size",
    "min_len",
    "max_len",
    "min_frames_per_token",
    "max_frames_per_token",
    "feature_dim",
    "noise_std",
    "mode",
    "n_classes",
    "class_bias",
    "n_train",
    "n_dev",
    "n_test",
    "seed",
];

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(m));
        if self.vocab_size <= FIRST_CONTENT {
            return bad(format!(
                "vocab_size {} leaves no ordinary tokens after the {FIRST_CONTENT} reserved ids",
                self.vocab_size
            ));
        }
        if self.min_len == 0 || self.max_len < self.min_len {
            return bad(format!("bad length range {}..={}", self.min_len, self.max_len));
        }
        if self.min_frames_per_token == 0 || self.max_frames_per_token < self.min_frames_per_token {
            return bad(format!(
                "bad frames-per-token range {}..={}",
                self.min_frames_per_token, self.max_frames_per_token
            ));
        }
        if self.feature_dim < 4 {
            return bad(format!("feature_dim {} below 4", self.feature_dim));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {} must be finite and non-negative", self.noise_std));
        }
        if !(self.class_bias >= 0.0 && self.class_bias.is_finite()) {
            return bad(format!("class_bias {} must be finite and non-negative", self.class_bias));
        }
        if self.n_classes == 1 {
            return bad("n_classes must be 0 (unlabeled) or at least 2".into());
        }
        let min_frames = match self.mode {
            TaskMode::MtLike => self.min_len * MT_FRAMES_PER_TOKEN,
            _ => self.min_len * self.min_frames_per_token,
        };
        if min_frames < crate::layers::MIN_FRAMES {
            return bad(format!(
                "shortest utterance would have {min_frames} frames, below the subsampler minimum {}",
                crate::layers::MIN_FRAMES
            ));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "vocab_size" => self.vocab_size = parse_value(key, value)?,
            "min_len" => self.min_len = parse_value(key, value)?,
            "max_len" => self.max_len = parse_value(key, value)?,
            "min_frames_per_token" => self.min_frames_per_token = parse_value(key, value)?,
            "max_frames_per_token" => self.max_frames_per_token = parse_value(key, value)?,
            "feature_dim" => self.feature_dim = parse_value(key, value)?,
            "noise_std" => self.noise_std = parse_value(key, value)?,
            "mode" => self.mode = value.trim().parse()?,
            "n_classes" => self.n_classes = parse_value(key, value)?,
            "class_bias" => self.class_bias = parse_value(key, value)?,
            "n_train" => self.n_train = parse_value(key, value)?,
            "n_dev" => self.n_dev = parse_value(key, value)?,
            "n_test" => self.n_test = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            other => return Err(Error::config(format!("unknown data key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "vocab_size" => self.vocab_size.to_string(),
            "min_len" => self.min_len.to_string(),
            "max_len" => self.max_len.to_string(),
            "min_frames_per_token" => self.min_frames_per_token.to_string(),
            "max_frames_per_token" => self.max_frames_per_token.to_string(),
            "feature_dim" => self.feature_dim.to_string(),
            "noise_std" => self.noise_std.to_string(),
            "mode" => self.mode.to_string(),
            "n_classes" => self.n_classes.to_string(),
            "class_bias" => self.class_bias.to_string(),
            "n_train" => self.n_train.to_string(),
            "n_dev" => self.n_dev.to_string(),
            "n_test" => self.n_test.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        DATA_KEYS.iter().map(|&k| (k, self.get(k).expect("known key"))).collect()
    }
}

/// One utterance: row-major `frames x feature_dim` features plus tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub features: Vec<f32>,
    pub frames: usize,
    pub feature_dim: usize,
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
    pub class_id: Option<usize>,
}

impl Utterance {
    pub fn frame(&self, t: usize) -> &[f32] {
        &self.features[t * self.feature_dim..(t + 1) * self.feature_dim]
    }

    pub fn features_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![self.frames, self.feature_dim], self.features.clone())
            .expect("frames x feature_dim")
    }
}

/// Corpus-level description stored next to the splits.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusInfo {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub mode: TaskMode,
    pub n_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub info: CorpusInfo,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl Corpus {
    pub fn splits(&self) -> [(&'static str, &[Utterance]); 3] {
        [("train", &self.train), ("dev", &self.dev), ("test", &self.test)]
    }
}

/// The fixed random quantities shared by all splits of one corpus.
#[derive(Debug, Clone)]
pub struct TokenWorld {
    pub prototypes: Vec<Vec<f64>>,
    pub class_biases: Vec<Vec<f64>>,
    /// `remap[id]`; the reserved ids map to themselves.
    pub remap: Vec<usize>,
    pub mode: TaskMode,
}

fn unit_vector(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl TokenWorld {
    pub fn new(spec: &SyntheticSpec) -> Self {
        let mut rng = seeded_rng(spec.seed);
        let prototypes = (0..spec.vocab_size)
            .map(|id| {
                if id < FIRST_CONTENT {
                    vec![0.0; spec.feature_dim]
                } else {
                    unit_vector(spec.feature_dim, &mut rng)
                }
            })
            .collect();
        let class_biases = (0..spec.n_classes)
            .map(|_| {
                unit_vector(spec.feature_dim, &mut rng)
                    .into_iter()
                    .map(|x| x * spec.class_bias)
                    .collect()
            })
            .collect();
        let mut content: Vec<usize> = (FIRST_CONTENT..spec.vocab_size).collect();
        content.shuffle(&mut rng);
        let remap = (0..FIRST_CONTENT).chain(content).collect();
        TokenWorld {
            prototypes,
            class_biases,
            remap,
            mode: spec.mode,
        }
    }

    pub fn inverse_remap(&self) -> Vec<usize> {
        let mut inv = vec![0; self.remap.len()];
        for (i, &r) in self.remap.iter().enumerate() {
            inv[r] = i;
        }
        inv
    }

    /// The mode's deterministic source-to-target rule.
    pub fn target(&self, src: &[usize]) -> Vec<usize> {
        match self.mode {
            TaskMode::AsrLike => src.to_vec(),
            TaskMode::MtLike | TaskMode::StLike => {
                let mut out: Vec<usize> = src.iter().map(|&s| self.remap[s]).collect();
                swap_pairs(&mut out);
                out
            }
        }
    }

    /// Inverts [`TokenWorld::target`].
    pub fn source(&self, tgt: &[usize]) -> Vec<usize> {
        match self.mode {
            TaskMode::AsrLike => tgt.to_vec(),
            TaskMode::MtLike | TaskMode::StLike => {
                let inv = self.inverse_remap();
                let mut out = tgt.to_vec();
                swap_pairs(&mut out);
                out.into_iter().map(|t| inv[t]).collect()
            }
        }
    }
}

/// Swaps `(x[2k], x[2k+1])` when both ids are odd. The condition is
/// symmetric in the pair, so the swap undoes itself.
pub fn swap_pairs(x: &mut [usize]) {
    for pair in x.chunks_exact_mut(2) {
        if pair[0] % 2 == 1 && pair[1] % 2 == 1 {
            pair.swap(0, 1);
        }
    }
}

fn split_rng(seed: u64, split: u64) -> SeededRng {
    // distinct streams per split; the shared world uses `seed` itself
    seeded_rng(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(split + 1)))
}

fn make_utterance(
    spec: &SyntheticSpec,
    world: &TokenWorld,
    utt_id: String,
    rng: &mut SeededRng,
) -> Utterance {
    let len = rng.gen_range(spec.min_len..=spec.max_len);
    let src: Vec<usize> = (0..len)
        .map(|_| rng.gen_range(FIRST_CONTENT..spec.vocab_size))
        .collect();
    let class_id = (spec.n_classes > 0).then(|| rng.gen_range(0..spec.n_classes));
    let noise = Normal::new(0.0, spec.noise_std).expect("validated noise");
    let f = spec.feature_dim;
    let mut features = Vec::new();
    let mut frames = 0;
    for &tok in &src {
        let n = match spec.mode {
            TaskMode::MtLike => MT_FRAMES_PER_TOKEN,
            _ => rng.gen_range(spec.min_frames_per_token..=spec.max_frames_per_token),
        };
        for _ in 0..n {
            for j in 0..f {
                let mut v = world.prototypes[tok][j];
                if let Some(c) = class_id {
                    v += world.class_biases[c][j];
                }
                if spec.noise_std > 0.0 {
                    v += noise.sample(rng);
                }
                features.push(v as f32);
            }
        }
        frames += n;
    }
    Utterance {
        utt_id,
        features,
        frames,
        feature_dim: f,
        tgt: world.target(&src),
        src,
        class_id,
    }
}

/// Generates the three splits described by `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let world = TokenWorld::new(spec);
    let split = |name: &str, index: u64, n: usize| {
        let mut rng = split_rng(spec.seed, index);
        (0..n)
            .map(|i| make_utterance(spec, &world, format!("{name}-{i:06}"), &mut rng))
            .collect::<Vec<_>>()
    };
    Ok(Corpus {
        info: CorpusInfo {
            vocab_size: spec.vocab_size,
            feature_dim: spec.feature_dim,
            mode: spec.mode,
            n_classes: spec.n_classes,
        },
        train: split("train", 0, spec.n_train),
        dev: split("dev", 1, spec.n_dev),
        test: split("test", 2, spec.n_test),
    })
}

#[cfg(test)]
mod tests;
