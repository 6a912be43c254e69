//! Linear classification probe on top of a frozen speech encoder.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Dropout, Linear};
use crate::model::Model;
use crate::numerics::{seeded_rng, ParamStore, Scalar, Tape, Tensor};
use crate::synthdata::Utterance;
use crate::training::{adam_step, argmax, cross_entropy, AdamConfig, AdamState, Batch, LrSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Mean,
    Max,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Max => "max",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            other => Err(Error::config(format!("unknown pooling `{other}` (expected mean or max)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub steps: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub pooling: Pooling,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            steps: 2000,
            lr: 1e-3,
            batch_size: 32,
            pooling: Pooling::Mean,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub variant: String,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub n_classes: usize,
    pub steps: u64,
}

impl ProbeResult {
    pub const CSV_HEADER: &'static str = "variant,train_acc,val_acc,test_acc,n_classes,steps";

    pub fn csv(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{},{}",
            self.variant, self.train_acc, self.val_acc, self.test_acc, self.n_classes, self.steps
        )
    }
}

/// Hash of the bit patterns of every encoder-side parameter.
pub fn encoder_checksum<T: Scalar>(model: &Model<T>) -> u64 {
    let mut h = DefaultHasher::new();
    for (_, p) in model.store.iter() {
        if p.name.starts_with("subsampler") || p.name.starts_with("encoder.") {
            p.name.hash(&mut h);
            for v in p.value.data() {
                v.as_f64().to_bits().hash(&mut h);
            }
        }
    }
    h.finish()
}

/// Pools `[S, d]` rows (row-major) over the non-padded positions.
pub fn pool(states: &[f64], pad: &[bool], d: usize, pooling: Pooling) -> Result<Vec<f64>> {
    if states.len() != pad.len() * d {
        return Err(Error::dim(format!("{} values for {} rows of width {d}", states.len(), pad.len())));
    }
    let rows: Vec<&[f64]> = states
        .chunks(d)
        .zip(pad)
        .filter(|(_, p)| !**p)
        .map(|(r, _)| r)
        .collect();
    if rows.is_empty() {
        return Err(Error::validation("cannot pool a fully padded sequence"));
    }
    let mut out = match pooling {
        Pooling::Mean => vec![0.0; d],
        Pooling::Max => vec![f64::NEG_INFINITY; d],
    };
    for r in &rows {
        for (o, &v) in out.iter_mut().zip(*r) {
            match pooling {
                Pooling::Mean => *o += v,
                Pooling::Max => *o = o.max(v),
            }
        }
    }
    if pooling == Pooling::Mean {
        out.iter_mut().for_each(|o| *o /= rows.len() as f64);
    }
    Ok(out)
}

/// Pooled encoder output of each utterance, `[N][d]`.
pub fn pooled_encoder_states<T: Scalar>(
    model: &Model<T>,
    utts: &[Utterance],
    pooling: Pooling,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let d = model.config.d_model;
    let mut out = Vec::with_capacity(utts.len());
    let refs: Vec<&Utterance> = utts.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let batch = Batch::<T>::new(chunk)?;
        let mut tape = Tape::inference(&model.store);
        let enc = model.encode(&mut tape, &batch.features, &batch.feature_pad, &mut Dropout::off())?;
        let states = tape.value(enc.states);
        let s = states.shape()[1];
        for (i, pad) in enc.pad.iter().enumerate() {
            let rows: Vec<f64> = states.data()[i * s * d..(i + 1) * s * d].iter().map(|v| v.as_f64()).collect();
            out.push(pool(&rows, pad, d, pooling)?);
        }
    }
    Ok(out)
}

fn labels(utts: &[Utterance], n_classes: usize, split: &str) -> Result<Vec<usize>> {
    utts.iter()
        .map(|u| match u.class_id {
            Some(c) if c < n_classes => Ok(c),
            Some(c) => Err(Error::validation(format!("{}: class {c} >= {n_classes}", u.utt_id))),
            None => Err(Error::validation(format!("{split} utterance {} has no class label", u.utt_id))),
        })
        .collect()
}

fn accuracy(store: &ParamStore<f64>, head: &Linear, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
    if x.is_empty() {
        return Ok(0.0);
    }
    let d = x[0].len();
    let mut tape = Tape::inference(store);
    let flat: Vec<f64> = x.iter().flatten().copied().collect();
    let xv = tape.constant(Tensor::from_f64(&[x.len(), d], &flat)?);
    let logits = head.forward(&mut tape, xv)?;
    let pred: Vec<usize> = tape.value(logits).data().chunks(head.out_dim).map(argmax).collect();
    Ok(pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64)
}

/// Per-dimension mean and standard deviation (floored) of `x`.
fn standardizer(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for r in x {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; d];
    for r in x {
        var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
    }
    (mean, var.into_iter().map(|v| v.sqrt().max(1e-8)).collect())
}

/// Trains a linear classifier on pooled, frozen encoder states (standardized
/// with training-split statistics) and reports
/// class accuracy on each split. The encoder is never updated; its
/// checksum is compared before and after as a guard.
pub fn run_probe<T: Scalar>(
    model: &Model<T>,
    train: &[Utterance],
    dev: &[Utterance],
    test: &[Utterance],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if n_classes < 2 {
        return Err(Error::validation(format!("probing needs at least 2 classes, corpus has {n_classes}")));
    }
    if train.is_empty() {
        return Err(Error::validation("probe training split is empty"));
    }
    if cfg.batch_size == 0 || cfg.lr <= 0.0 {
        return Err(Error::config("probe batch size and learning rate must be positive"));
    }
    let (ytr, ydev, yte) = (
        labels(train, n_classes, "train")?,
        labels(dev, n_classes, "dev")?,
        labels(test, n_classes, "test")?,
    );
    let before = encoder_checksum(model);
    let bs = cfg.batch_size.max(1).min(64);
    let mut xtr = pooled_encoder_states(model, train, cfg.pooling, bs)?;
    let mut xdev = pooled_encoder_states(model, dev, cfg.pooling, bs)?;
    let mut xte = pooled_encoder_states(model, test, cfg.pooling, bs)?;
    let (mean, std) = standardizer(&xtr);
    for x in xtr.iter_mut().chain(&mut xdev).chain(&mut xte) {
        for ((v, m), s) in x.iter_mut().zip(&mean).zip(&std) {
            *v = (*v - m) / s;
        }
    }

    let d = model.config.d_model;
    let mut rng = seeded_rng(cfg.seed);
    let mut store = ParamStore::<f64>::new();
    let head = Linear::new(&mut store, "probe", d, n_classes, &mut rng);
    let mut adam = AdamState::new(
        &store,
        AdamConfig {
            schedule: LrSchedule::Constant(cfg.lr),
            ..AdamConfig::default()
        },
    );
    for _ in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..xtr.len())).collect();
        let flat: Vec<f64> = idx.iter().flat_map(|&i| xtr[i].iter().copied()).collect();
        let grads = {
            let mut tape = Tape::new(&store);
            let x = tape.constant(Tensor::from_f64(&[idx.len(), 1, d], &flat)?);
            let logits = head.forward(&mut tape, x)?;
            let tgt: Vec<Vec<usize>> = idx.iter().map(|&i| vec![ytr[i]]).collect();
            let pad = vec![vec![false]; idx.len()];
            let loss = cross_entropy(&mut tape, logits, &tgt, &pad, 0.0)?;
            tape.backward(loss)?
        };
        store.zero_grads();
        grads.accumulate_into(&mut store)?;
        adam_step(&mut store, &mut adam)?;
    }
    let result = ProbeResult {
        variant: model.variant().to_string(),
        train_acc: accuracy(&store, &head, &xtr, &ytr)?,
        val_acc: accuracy(&store, &head, &xdev, &ydev)?,
        test_acc: accuracy(&store, &head, &xte, &yte)?,
        n_classes,
        steps: cfg.steps,
    };
    if encoder_checksum(model) != before {
        return Err(Error::Contract("encoder parameters changed during probing".into()));
    }
    Ok(result)
}
