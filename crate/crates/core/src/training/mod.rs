//! Teacher-forced training: batching, loss, Adam and the training loop.

mod adam;
mod augment;

pub use adam::{adam_step, check_finite_grads, clip_grad_norm, AdamConfig, AdamState, LrSchedule};
pub use augment::{spec_augment, SpecAugment};

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::Dropout;
use crate::model::{
    config_value as parse_value, load_checkpoint_with, save_checkpoint_with, CheckpointExtras, Model,
};
use crate::numerics::{seeded_rng, Scalar, SeededRng, Tape, Tensor, Var};
use crate::synthdata::Utterance;
use crate::tokens::{BOS, EOS, PAD};

/// A padded mini-batch. `tgt_in` is BOS-prefixed, `tgt_out` EOS-suffixed.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// `[B, L_max, F]`, zero in padded frames.
    pub features: Tensor<T>,
    pub feature_pad: Vec<Vec<bool>>,
    pub tgt_in: Vec<Vec<usize>>,
    pub tgt_out: Vec<Vec<usize>>,
    pub tgt_pad: Vec<Vec<bool>>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(utts: &[&Utterance]) -> Result<Self> {
        Self::build(utts, None, None)
    }

    /// Like [`Batch::new`], padding to at least `(frames, tokens)`.
    pub fn padded_to(utts: &[&Utterance], min_frames: usize, min_tokens: usize) -> Result<Self> {
        Self::build(utts, None, Some((min_frames, min_tokens)))
    }

    /// Builds a batch, optionally augmenting each utterance first.
    pub fn build(
        utts: &[&Utterance],
        augment: Option<(&SpecAugment, &mut SeededRng)>,
        min_sizes: Option<(usize, usize)>,
    ) -> Result<Self> {
        let first = utts.first().ok_or_else(|| Error::validation("empty batch"))?;
        let f = first.feature_dim;
        if let Some(u) = utts.iter().find(|u| u.feature_dim != f) {
            return Err(Error::dim(format!(
                "utterance {} has {} features per frame, batch has {f}",
                u.utt_id, u.feature_dim
            )));
        }
        let (min_l, min_t) = min_sizes.unwrap_or((0, 0));
        let l_max = utts.iter().map(|u| u.frames).max().unwrap_or(0).max(min_l);
        let t_max = utts.iter().map(|u| u.tgt.len() + 1).max().unwrap_or(1).max(min_t);
        let b = utts.len();
        let mut data = vec![T::zero(); b * l_max * f];
        let mut augment = augment;
        for (i, u) in utts.iter().enumerate() {
            let dst = &mut data[i * l_max * f..(i * l_max + u.frames) * f];
            match augment.as_mut() {
                Some((cfg, rng)) if !cfg.is_identity() => {
                    let mut x = u.features.clone();
                    let c = SpecAugment {
                        max_time: cfg.max_time.min(u.frames),
                        max_freq: cfg.max_freq.min(f),
                        ..**cfg
                    };
                    spec_augment(&mut x, u.frames, f, &c, *rng)?;
                    for (d, &v) in dst.iter_mut().zip(&x) {
                        *d = T::from_f64_lossy(v as f64);
                    }
                }
                _ => {
                    for (d, &v) in dst.iter_mut().zip(&u.features) {
                        *d = T::from_f64_lossy(v as f64);
                    }
                }
            }
        }
        let pad_row = |n: usize, total: usize| (0..total).map(|i| i >= n).collect::<Vec<bool>>();
        let mut tgt_in = Vec::with_capacity(b);
        let mut tgt_out = Vec::with_capacity(b);
        for u in utts {
            let mut x = vec![BOS];
            x.extend(&u.tgt);
            x.resize(t_max, PAD);
            let mut y = u.tgt.clone();
            y.push(EOS);
            y.resize(t_max, PAD);
            tgt_in.push(x);
            tgt_out.push(y);
        }
        Ok(Batch {
            features: Tensor::new(vec![b, l_max, f], data)?,
            feature_pad: utts.iter().map(|u| pad_row(u.frames, l_max)).collect(),
            tgt_pad: utts.iter().map(|u| pad_row(u.tgt.len() + 1, t_max)).collect(),
            tgt_in,
            tgt_out,
        })
    }

    pub fn len(&self) -> usize {
        self.tgt_in.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tgt_in.is_empty()
    }
}

/// Mean over non-padded positions of the label-smoothed negative
/// log-likelihood. `logits` is `[B, T, V]`.
pub fn cross_entropy<T: Scalar>(
    tape: &mut Tape<'_, T>,
    logits: Var,
    tgt_out: &[Vec<usize>],
    tgt_pad: &[Vec<bool>],
    smoothing: f64,
) -> Result<Var> {
    if !(0.0..=0.3).contains(&smoothing) {
        return Err(Error::config(format!("label smoothing {smoothing} outside [0, 0.3]")));
    }
    let s = tape.shape(logits).to_vec();
    if s.len() != 3 || tgt_out.len() != s[0] || tgt_pad.len() != s[0] {
        return Err(Error::dim(format!("logits {s:?} do not match {} targets", tgt_out.len())));
    }
    if tgt_out.iter().any(|r| r.len() != s[1]) || tgt_pad.iter().any(|r| r.len() != s[1]) {
        return Err(Error::dim("target rows must match the logits length"));
    }
    let n = tgt_pad.iter().flatten().filter(|p| !**p).count();
    if n == 0 {
        return Err(Error::validation("batch has no target positions"));
    }
    let w = T::from_f64_lossy(1.0 / n as f64);
    let weights: Vec<T> = tgt_pad.iter().flatten().map(|&p| if p { T::zero() } else { w }).collect();
    let targets: Vec<usize> = tgt_out.iter().flatten().copied().collect();
    let flat = tape.reshape(logits, &[s[0] * s[1], s[2]])?;
    tape.cross_entropy(flat, &targets, &weights, T::from_f64_lossy(smoothing))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `(correct, counted)` argmax predictions over non-padded positions.
pub fn token_accuracy<T: Scalar>(
    logits: &Tensor<T>,
    tgt_out: &[Vec<usize>],
    tgt_pad: &[Vec<bool>],
) -> (usize, usize) {
    let v = *logits.shape().last().unwrap_or(&1);
    let mut correct = 0;
    let mut total = 0;
    for ((row, &t), &p) in logits
        .data()
        .chunks(v)
        .zip(tgt_out.iter().flatten())
        .zip(tgt_pad.iter().flatten())
    {
        if !p {
            total += 1;
            correct += usize::from(argmax(row) == t);
        }
    }
    (correct, total)
}

/// Groups utterances of similar length into fixed batches and visits the
/// batches in a fresh seeded order each epoch.
#[derive(Debug, Clone)]
pub struct Batcher {
    batches: Vec<Vec<usize>>,
    seed: u64,
    epoch: Option<(u64, Vec<usize>)>,
}

impl Batcher {
    pub fn new(lengths: &[usize], batch_size: usize, seed: u64) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::validation("training set is empty"));
        }
        if batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        let mut order: Vec<usize> = (0..lengths.len()).collect();
        order.sort_by_key(|&i| (lengths[i], i));
        Ok(Batcher {
            batches: order.chunks(batch_size).map(|c| c.to_vec()).collect(),
            seed,
            epoch: None,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.batches.len()
    }

    /// Utterance indices for the `k`-th batch overall (0-based).
    pub fn batch(&mut self, k: u64) -> &[usize] {
        let n = self.batches.len() as u64;
        let epoch = k / n;
        if self.epoch.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut perm: Vec<usize> = (0..self.batches.len()).collect();
            perm.shuffle(&mut seeded_rng(self.seed ^ epoch.wrapping_mul(0xa076_1d64_78bd_642f)));
            self.epoch = Some((epoch, perm));
        }
        let perm = &self.epoch.as_ref().expect("set above").1;
        &self.batches[perm[(k % n) as usize]]
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub label_smoothing: f64,
    pub clip_norm: f64,
    pub log_every: u64,
    pub eval_every: u64,
    /// Dev utterances used for periodic validation (0 = all).
    pub max_eval_utts: usize,
    /// Stop once validation token accuracy reaches this value (0 = never).
    pub target_dev_acc: f64,
    pub time_masks: usize,
    pub freq_masks: usize,
    pub max_time_mask: usize,
    pub max_freq_mask: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 32,
            peak_lr: 1e-3,
            warmup_steps: 400,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            label_smoothing: 0.1,
            clip_norm: 5.0,
            log_every: 50,
            eval_every: 250,
            max_eval_utts: 0,
            target_dev_acc: 0.0,
            time_masks: 0,
            freq_masks: 0,
            max_time_mask: 0,
            max_freq_mask: 0,
            seed: 1,
        }
    }
}

pub const TRAIN_KEYS: [&str; 18] = [
    "steps",
    "batch_size",
    "peak_lr",
    "warmup_steps",
    "beta1",
    "beta2",
    "adam_eps",
    "label_smoothing",
    "clip_norm",
    "log_every",
    "eval_every",
    "max_eval_utts",
    "target_dev_acc",
    "time_masks",
    "freq_masks",
    "max_time_mask",
    "max_freq_mask",
    "seed",
];

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            schedule: LrSchedule::InverseSqrt {
                peak: self.peak_lr,
                warmup: self.warmup_steps,
            },
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn augment(&self) -> SpecAugment {
        SpecAugment {
            time_masks: self.time_masks,
            freq_masks: self.freq_masks,
            max_time: self.max_time_mask,
            max_freq: self.max_freq_mask,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.log_every == 0 || self.eval_every == 0 {
            return Err(Error::config("batch_size, log_every and eval_every must be at least 1"));
        }
        if !(0.0..=0.3).contains(&self.label_smoothing) {
            return Err(Error::config(format!(
                "label_smoothing {} outside [0, 0.3]",
                self.label_smoothing
            )));
        }
        if !(self.peak_lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("peak_lr must be positive and betas in [0, 1)"));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "steps" => self.steps = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "peak_lr" => self.peak_lr = parse_value(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "label_smoothing" => self.label_smoothing = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "log_every" => self.log_every = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "max_eval_utts" => self.max_eval_utts = parse_value(key, value)?,
            "target_dev_acc" => self.target_dev_acc = parse_value(key, value)?,
            "time_masks" => self.time_masks = parse_value(key, value)?,
            "freq_masks" => self.freq_masks = parse_value(key, value)?,
            "max_time_mask" => self.max_time_mask = parse_value(key, value)?,
            "max_freq_mask" => self.max_freq_mask = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            other => return Err(Error::config(format!("unknown training key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "steps" => self.steps.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "peak_lr" => self.peak_lr.to_string(),
            "warmup_steps" => self.warmup_steps.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "label_smoothing" => self.label_smoothing.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "log_every" => self.log_every.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "max_eval_utts" => self.max_eval_utts.to_string(),
            "target_dev_acc" => self.target_dev_acc.to_string(),
            "time_masks" => self.time_masks.to_string(),
            "freq_masks" => self.freq_masks.to_string(),
            "max_time_mask" => self.max_time_mask.to_string(),
            "max_freq_mask" => self.max_freq_mask.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }
}

/// Optimizer state plus best-validation bookkeeping.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub adam: AdamState<T>,
    pub best_dev_acc: f64,
    pub best_step: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: &Model<T>, cfg: &TrainConfig) -> Self {
        TrainState {
            adam: AdamState::new(&model.store, cfg.adam()),
            best_dev_acc: -1.0,
            best_step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }
}

/// Saves the model together with optimizer moments and progress counters.
pub fn save_training_checkpoint<T: Scalar>(model: &Model<T>, state: &TrainState<T>, dir: &Path) -> Result<()> {
    let mut tensors = Vec::with_capacity(2 * model.store.len());
    for (i, (_, p)) in model.store.iter().enumerate() {
        tensors.push((format!("optim.m.{}", p.name), state.adam.m[i].clone()));
        tensors.push((format!("optim.v.{}", p.name), state.adam.v[i].clone()));
    }
    let extras = CheckpointExtras {
        meta: vec![
            ("step".into(), state.adam.step.to_string()),
            ("best_dev_acc".into(), state.best_dev_acc.to_string()),
            ("best_step".into(), state.best_step.to_string()),
        ],
        tensors,
    };
    save_checkpoint_with(model, dir, &extras)
}

/// Restores a model and its training state; missing optimizer tensors
/// (a plain model checkpoint) restart the moments at zero.
pub fn load_training_checkpoint<T: Scalar>(dir: &Path, cfg: &TrainConfig) -> Result<(Model<T>, TrainState<T>)> {
    let (model, extras) = load_checkpoint_with::<T>(dir)?;
    let mut state = TrainState::new(&model, cfg);
    let meta = |k: &str, default: &str| -> Result<String> {
        Ok(extras.meta(k).unwrap_or(default).to_string())
    };
    let bad = |k: &str| Error::Parse {
        file: dir.join("manifest.txt"),
        offset: 0,
        msg: format!("bad value for meta.{k}"),
    };
    state.adam.step = meta("step", "0")?.parse().map_err(|_| bad("step"))?;
    state.best_dev_acc = meta("best_dev_acc", "-1")?.parse().map_err(|_| bad("best_dev_acc"))?;
    state.best_step = meta("best_step", "0")?.parse().map_err(|_| bad("best_step"))?;
    for (name, t) in extras.tensors {
        let (slot, pname) = if let Some(n) = name.strip_prefix("optim.m.") {
            (&mut state.adam.m, n)
        } else if let Some(n) = name.strip_prefix("optim.v.") {
            (&mut state.adam.v, n)
        } else {
            continue;
        };
        let id = model.store.id(pname).ok_or_else(|| bad(&name))?;
        if t.shape() != model.store.value(id).shape() {
            return Err(Error::ShapeMismatch {
                name,
                expected: model.store.value(id).shape().to_vec(),
                found: t.shape().to_vec(),
            });
        }
        slot[id.index()] = t;
    }
    Ok((model, state))
}

/// One CSV log line: `step,split,loss,token_acc`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub split: &'static str,
    pub loss: f64,
    pub token_acc: f64,
}

impl LogRow {
    pub fn csv(&self) -> String {
        format!("{},{},{:.6},{:.6}", self.step, self.split, self.loss, self.token_acc)
    }
}

pub const LOG_HEADER: &str = "step,split,loss,token_acc";

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<LogRow>,
    pub best_dev_acc: f64,
    pub best_step: u64,
    pub final_step: u64,
    pub reached_target: bool,
}

/// Teacher-forced loss (no smoothing) and token accuracy over `utts`.
pub fn evaluate<T: Scalar>(model: &Model<T>, utts: &[Utterance], batch_size: usize) -> Result<(f64, f64)> {
    if utts.is_empty() {
        return Err(Error::validation("evaluation set is empty"));
    }
    let mut order: Vec<usize> = (0..utts.len()).collect();
    order.sort_by_key(|&i| (utts[i].frames, i));
    let (mut loss_sum, mut correct, mut total) = (0.0, 0usize, 0usize);
    for chunk in order.chunks(batch_size.max(1)) {
        let refs: Vec<&Utterance> = chunk.iter().map(|&i| &utts[i]).collect();
        let batch = Batch::<T>::new(&refs)?;
        let mut tape = Tape::inference(&model.store);
        let mut drop = Dropout::off();
        let enc = model.encode(&mut tape, &batch.features, &batch.feature_pad, &mut drop)?;
        let logits = model.decode_train(&mut tape, &enc, &batch.tgt_in, &batch.tgt_pad, &mut drop)?;
        let loss = cross_entropy(&mut tape, logits, &batch.tgt_out, &batch.tgt_pad, 0.0)?;
        let (c, t) = token_accuracy(tape.value(logits), &batch.tgt_out, &batch.tgt_pad);
        loss_sum += tape.value(loss).item()?.as_f64() * t as f64;
        correct += c;
        total += t;
    }
    Ok((loss_sum / total as f64, correct as f64 / total as f64))
}

fn step_rng(seed: u64, step: u64) -> SeededRng {
    seeded_rng(seed.wrapping_add(step.wrapping_mul(0xe703_7ed1_a0b4_28db)))
}

/// Loss, correct and counted tokens of one optimizer step.
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
    pub grad_norm: f64,
}

/// Forward, backward, clip and Adam update on one batch.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    state: &mut TrainState<T>,
    batch: &Batch<T>,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<StepStats> {
    let step = state.adam.step + 1;
    let mut dropout = if model.config.dropout > 0.0 {
        Dropout::new(model.config.dropout, seeded_rng(rng.gen()))?
    } else {
        Dropout::off()
    };
    let (loss, correct, total, grads) = {
        let mut tape = Tape::new(&model.store);
        let enc = model.encode(&mut tape, &batch.features, &batch.feature_pad, &mut dropout)?;
        let logits = model.decode_train(&mut tape, &enc, &batch.tgt_in, &batch.tgt_pad, &mut dropout)?;
        let loss = cross_entropy(&mut tape, logits, &batch.tgt_out, &batch.tgt_pad, cfg.label_smoothing)?;
        let lv = tape.value(loss).item()?.as_f64();
        if !lv.is_finite() {
            return Err(Error::Divergence { step, loss: lv });
        }
        let (c, t) = token_accuracy(tape.value(logits), &batch.tgt_out, &batch.tgt_pad);
        (lv, c, t, tape.backward(loss)?)
    };
    model.store.zero_grads();
    grads.accumulate_into(&mut model.store)?;
    let grad_norm = clip_grad_norm(&mut model.store, cfg.clip_norm)?;
    adam_step(&mut model.store, &mut state.adam)?;
    Ok(StepStats {
        loss,
        correct,
        total,
        grad_norm,
    })
}

/// Runs updates `state.step() + 1 ..= cfg.steps`.
///
/// With `out_dir`, appends to `train_log.csv`, writes `best/` whenever
/// validation accuracy improves and `last/` (with optimizer state) at the
/// end. Batch order, augmentation and dropout depend only on the seed and
/// the step number, so a resumed run continues exactly where it stopped.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    state: &mut TrainState<T>,
    train_set: &[Utterance],
    dev_set: &[Utterance],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if let Some(u) = train_set.iter().chain(dev_set).find(|u| u.feature_dim != model.config.feature_dim) {
        return Err(Error::config(format!(
            "utterance {} has {} features per frame, model expects {}",
            u.utt_id, u.feature_dim, model.config.feature_dim
        )));
    }
    let lengths: Vec<usize> = train_set.iter().map(|u| u.frames).collect();
    let mut batcher = Batcher::new(&lengths, cfg.batch_size, cfg.seed)?;
    let dev_subset = match cfg.max_eval_utts {
        0 => dev_set,
        n => &dev_set[..n.min(dev_set.len())],
    };
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("train_log.csv");
            let fresh = !path.exists();
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            if fresh {
                writeln!(f, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
            }
            Some((f, path))
        }
        None => None,
    };
    let mut rows = Vec::new();
    let mut emit = |row: LogRow, rows: &mut Vec<LogRow>| -> Result<()> {
        if let Some((f, path)) = log.as_mut() {
            writeln!(f, "{}", row.csv()).map_err(|e| Error::io(&*path, e))?;
        }
        rows.push(row);
        Ok(())
    };
    let augment = cfg.augment();
    let (mut acc_loss, mut acc_c, mut acc_t, mut acc_n) = (0.0, 0usize, 0usize, 0u64);
    let mut reached = false;
    while state.step() < cfg.steps && !reached {
        let step = state.step() + 1;
        let mut rng = step_rng(cfg.seed, step);
        let idx = batcher.batch(step - 1).to_vec();
        let refs: Vec<&Utterance> = idx.iter().map(|&i| &train_set[i]).collect();
        let batch = Batch::<T>::build(&refs, Some((&augment, &mut rng)), None)?;
        let stats = train_step(model, state, &batch, cfg, &mut rng)?;
        acc_loss += stats.loss;
        acc_c += stats.correct;
        acc_t += stats.total;
        acc_n += 1;
        let last = step == cfg.steps;
        if step % cfg.log_every == 0 || last {
            emit(
                LogRow {
                    step,
                    split: "train",
                    loss: acc_loss / acc_n as f64,
                    token_acc: acc_c as f64 / acc_t.max(1) as f64,
                },
                &mut rows,
            )?;
            (acc_loss, acc_c, acc_t, acc_n) = (0.0, 0, 0, 0);
        }
        if step % cfg.eval_every == 0 || last {
            let acc = if dev_subset.is_empty() {
                -1.0
            } else {
                let (loss, acc) = evaluate(model, dev_subset, cfg.batch_size)?;
                emit(
                    LogRow {
                        step,
                        split: "dev",
                        loss,
                        token_acc: acc,
                    },
                    &mut rows,
                )?;
                acc
            };
            if acc > state.best_dev_acc || dev_subset.is_empty() {
                state.best_dev_acc = acc;
                state.best_step = step;
                if let Some(dir) = out_dir {
                    save_training_checkpoint(model, state, &dir.join("best"))?;
                }
            }
            reached = cfg.target_dev_acc > 0.0 && acc >= cfg.target_dev_acc;
        }
    }
    if let Some(dir) = out_dir {
        save_training_checkpoint(model, state, &dir.join("last"))?;
    }
    Ok(TrainReport {
        rows,
        best_dev_acc: state.best_dev_acc,
        best_step: state.best_step,
        final_step: state.step(),
        reached_target: reached,
    })
}

#[cfg(test)]
mod tests;
