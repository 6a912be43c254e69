//! Greedy and beam inference with incremental (cached) decoding.
//!
//! For AdaST the acoustic rows never read target rows, so every decoder
//! layer's acoustic states, keys and values can be computed once per
//! utterance ([`AcousticTrack`]). Each new target row then attends the
//! cached acoustic keys plus the cached keys of earlier target rows. The
//! baseline and the static ablation cache the per-layer cross-attention
//! keys and values of their (possibly refreshed) encoder memory instead.

mod bleu;

pub use bleu::{bleu, sequence_token_accuracy};

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::layers::{embed_segment, mask_var, Dropout, TEXT};
use crate::masks::{build_padding_mask, build_stma_mask};
use crate::model::{key_padding_var, Decoder, Model, Variant};
use crate::numerics::{Scalar, Tape, Tensor};
use crate::tokens::{BOS, EOS, PAD};

/// Per-layer acoustic rows and their projected keys and values.
#[derive(Debug, Clone)]
pub struct AcousticTrack<T> {
    /// Output of each decoder block on the acoustic rows, `[S, d]`.
    pub rows: Vec<Tensor<T>>,
    /// `[1, S, d]` keys and values of each block's mixed attention.
    pub keys: Vec<Tensor<T>>,
    pub values: Vec<Tensor<T>>,
    pub pad: Vec<bool>,
}

impl<T> AcousticTrack<T> {
    pub fn s_len(&self) -> usize {
        self.pad.len()
    }

    /// Number of cached elements (rows + keys + values).
    pub fn num_elements(&self) -> usize
    where
        T: Scalar,
    {
        self.rows
            .iter()
            .chain(&self.keys)
            .chain(&self.values)
            .map(|t| t.numel())
            .sum()
    }
}

/// Cross-attention keys and values of each decoder layer's memory.
#[derive(Debug, Clone)]
pub struct CrossMemory<T> {
    pub keys: Vec<Tensor<T>>,
    pub values: Vec<Tensor<T>>,
    pub pad: Vec<bool>,
}

/// Everything a decoder step needs from the audio.
#[derive(Debug, Clone)]
pub enum DecodeContext<T> {
    Adast(AcousticTrack<T>),
    Cross(CrossMemory<T>),
}

impl<T: Scalar> DecodeContext<T> {
    pub fn pad(&self) -> &[bool] {
        match self {
            DecodeContext::Adast(t) => &t.pad,
            DecodeContext::Cross(m) => &m.pad,
        }
    }

    pub fn s_len(&self) -> usize {
        self.pad().len()
    }
}

/// Key/value caches of the target rows produced so far, one per layer.
#[derive(Debug, Clone)]
pub struct TargetCache<T> {
    pub keys: Vec<Vec<T>>,
    pub values: Vec<Vec<T>>,
    pub len: usize,
    /// Attention key reads performed by all steps on this cache.
    pub attention_reads: usize,
}

impl<T> TargetCache<T> {
    pub fn new(n_layers: usize) -> Self {
        TargetCache {
            keys: (0..n_layers).map(|_| Vec::new()).collect(),
            values: (0..n_layers).map(|_| Vec::new()).collect(),
            len: 0,
            attention_reads: 0,
        }
    }
}

fn as_batch<T: Scalar>(enc_states: &Tensor<T>) -> Result<Tensor<T>> {
    match enc_states.shape() {
        [s, d] => enc_states.clone().reshape(&[1, *s, *d]),
        [1, _, _] => Ok(enc_states.clone()),
        other => Err(Error::dim(format!("expected [S, d] encoder states, got {other:?}"))),
    }
}

/// Runs the AdaST decoder blocks on the acoustic rows alone.
pub fn precompute_acoustic_track<T: Scalar>(
    model: &Model<T>,
    enc_states: &Tensor<T>,
    enc_pad: &[bool],
) -> Result<AcousticTrack<T>> {
    let Decoder::Adast { layers, modality } = &model.decoder else {
        return Err(Error::config(format!(
            "the acoustic track needs an adast model, got {}",
            model.variant()
        )));
    };
    let x = as_batch(enc_states)?;
    let s = x.shape()[1];
    if enc_pad.len() != s {
        return Err(Error::dim(format!("{} pad flags for {s} acoustic rows", enc_pad.len())));
    }
    let mask = build_stma_mask(s, 0, enc_pad, &[])?;
    let mut tape = Tape::inference(&model.store);
    let mvar = mask_var(&mut tape, &[mask.matrix()])?;
    let src = tape.constant(x);
    let mut h = embed_segment(&mut tape, src, modality.as_ref().map(|m| (m, crate::layers::ACOUSTIC)), 0, true)?;
    let mut track = AcousticTrack {
        rows: Vec::new(),
        keys: Vec::new(),
        values: Vec::new(),
        pad: enc_pad.to_vec(),
    };
    for layer in layers {
        let n = layer.norm1.forward(&mut tape, h)?;
        let (k, v) = layer.stma.project_kv(&mut tape, n)?;
        let a = layer.stma.attend_projected(&mut tape, n, k, v, Some(mvar))?;
        h = tape.add(h, a)?;
        let n = layer.norm2.forward(&mut tape, h)?;
        let f = layer.ffn.forward(&mut tape, n)?;
        h = tape.add(h, f)?;
        track.keys.push(tape.value(k).clone());
        track.values.push(tape.value(v).clone());
        track.rows.push(tape.value(h).clone().reshape(&[s, model.config.d_model])?);
    }
    Ok(track)
}

/// Per-layer cross-attention memory for the baseline and the ablation.
pub fn precompute_cross_memory<T: Scalar>(
    model: &Model<T>,
    enc_states: &Tensor<T>,
    enc_pad: &[bool],
) -> Result<CrossMemory<T>> {
    let (layers, refresh) = match &model.decoder {
        Decoder::Baseline { layers } => (layers, None),
        Decoder::StaticAblation { layers, refresh } => (layers, Some(refresh)),
        Decoder::Adast { .. } => {
            return Err(Error::config("cross-attention memory needs a baseline or static_ablation model"))
        }
    };
    let x = as_batch(enc_states)?;
    if enc_pad.len() != x.shape()[1] {
        return Err(Error::dim("pad flags do not match the encoder states"));
    }
    let mut tape = Tape::inference(&model.store);
    let mmask = key_padding_var(&mut tape, &[enc_pad.to_vec()])?;
    let mut memory = tape.constant(x);
    let mut out = CrossMemory {
        keys: Vec::new(),
        values: Vec::new(),
        pad: enc_pad.to_vec(),
    };
    let mut drop = Dropout::off();
    for (l, layer) in layers.iter().enumerate() {
        if let Some(blocks) = refresh {
            memory = model.refresh_memory(&mut tape, &blocks[l], memory, mmask, &mut drop)?;
        }
        let (k, v) = layer.cross_attn.project_kv(&mut tape, memory)?;
        out.keys.push(tape.value(k).clone());
        out.values.push(tape.value(v).clone());
    }
    Ok(out)
}

/// Encodes one utterance `[L, F]` and builds its decode context.
pub fn prepare<T: Scalar>(model: &Model<T>, features: &Tensor<T>) -> Result<DecodeContext<T>> {
    let fs = features.shape();
    if fs.len() != 2 {
        return Err(Error::dim(format!("expected [L, F] features, got {fs:?}")));
    }
    let x = features.clone().reshape(&[1, fs[0], fs[1]])?;
    let (states, pad) = {
        let mut tape = Tape::inference(&model.store);
        let enc = model.encode(&mut tape, &x, &[vec![false; fs[0]]], &mut Dropout::off())?;
        (tape.value(enc.states).clone(), enc.pad.into_iter().next().expect("batch of one"))
    };
    match model.variant() {
        Variant::Adast => Ok(DecodeContext::Adast(precompute_acoustic_track(model, &states, &pad)?)),
        _ => Ok(DecodeContext::Cross(precompute_cross_memory(model, &states, &pad)?)),
    }
}

fn cached<T: Scalar>(data: &[T], len: usize, d: usize) -> Result<Tensor<T>> {
    Tensor::new(vec![1, len, d], data.to_vec())
}

/// Feeds `token` as target position `cache.len` and returns the logits
/// `[V]` for the next position. The cache grows by one row per layer.
pub fn incremental_step<T: Scalar>(
    model: &Model<T>,
    ctx: &DecodeContext<T>,
    cache: &mut TargetCache<T>,
    token: usize,
) -> Result<Tensor<T>> {
    let n_layers = model.n_dec_layers();
    let d = model.config.d_model;
    let t = cache.len;
    if cache.keys.len() != n_layers
        || cache.values.len() != n_layers
        || cache.keys.iter().chain(&cache.values).any(|c| c.len() != t * d)
    {
        return Err(Error::Contract(format!(
            "target cache does not hold {t} rows for each of {n_layers} layers"
        )));
    }
    if token >= model.config.vocab_size {
        return Err(Error::validation(format!("token id {token} out of range")));
    }
    let s = ctx.s_len();
    let mut tape = Tape::inference(&model.store);
    let emb = model.embedding.forward(&mut tape, &[vec![token]])?;
    // key mask over [acoustic ; targets 0..=t]
    let mut mask = build_padding_mask(s, ctx.pad())?;
    let mut new_k = Vec::with_capacity(n_layers);
    let mut new_v = Vec::with_capacity(n_layers);
    let mut x;
    match (ctx, &model.decoder) {
        (DecodeContext::Adast(track), Decoder::Adast { layers, modality }) => {
            let offset = if model.config.position_restart_at_text {
                0
            } else {
                track.pad.iter().filter(|p| !**p).count()
            };
            x = embed_segment(&mut tape, emb, modality.as_ref().map(|m| (m, TEXT)), offset + t, true)?;
            mask.extend(std::iter::repeat(0.0).take(t + 1));
            let m = tape.constant(Tensor::from_f64(&[1, 1, 1, s + t + 1], &mask)?);
            for (l, layer) in layers.iter().enumerate() {
                let n = layer.norm1.forward(&mut tape, x)?;
                let (k, v) = layer.stma.project_kv(&mut tape, n)?;
                let ak = tape.constant_ref(&track.keys[l]);
                let av = tape.constant_ref(&track.values[l]);
                let (kk, vv) = if t > 0 {
                    let tk = tape.constant(cached(&cache.keys[l], t, d)?);
                    let tv = tape.constant(cached(&cache.values[l], t, d)?);
                    (tape.concat(&[ak, tk, k], 1)?, tape.concat(&[av, tv, v], 1)?)
                } else {
                    (tape.concat(&[ak, k], 1)?, tape.concat(&[av, v], 1)?)
                };
                let a = layer.stma.attend_projected(&mut tape, n, kk, vv, Some(m))?;
                cache.attention_reads += s + t + 1;
                x = tape.add(x, a)?;
                let n = layer.norm2.forward(&mut tape, x)?;
                let f = layer.ffn.forward(&mut tape, n)?;
                x = tape.add(x, f)?;
                new_k.push(k);
                new_v.push(v);
            }
        }
        (DecodeContext::Cross(mem), Decoder::Baseline { layers } | Decoder::StaticAblation { layers, .. }) => {
            let pe = tape.constant(crate::layers::sinusoidal_positions(1, d, t)?);
            x = tape.broadcast_add(emb, pe)?;
            let cross_mask = tape.constant(Tensor::from_f64(&[1, 1, 1, s], &mask)?);
            for (l, layer) in layers.iter().enumerate() {
                let n = layer.norm1.forward(&mut tape, x)?;
                let (k, v) = layer.self_attn.project_kv(&mut tape, n)?;
                let (kk, vv) = if t > 0 {
                    let tk = tape.constant(cached(&cache.keys[l], t, d)?);
                    let tv = tape.constant(cached(&cache.values[l], t, d)?);
                    (tape.concat(&[tk, k], 1)?, tape.concat(&[tv, v], 1)?)
                } else {
                    (k, v)
                };
                let a = layer.self_attn.attend_projected(&mut tape, n, kk, vv, None)?;
                x = tape.add(x, a)?;
                let n = layer.norm2.forward(&mut tape, x)?;
                let mk = tape.constant_ref(&mem.keys[l]);
                let mv = tape.constant_ref(&mem.values[l]);
                let c = layer.cross_attn.attend_projected(&mut tape, n, mk, mv, Some(cross_mask))?;
                cache.attention_reads += s + t + 1;
                x = tape.add(x, c)?;
                let n = layer.norm3.forward(&mut tape, x)?;
                let f = layer.ffn.forward(&mut tape, n)?;
                x = tape.add(x, f)?;
                new_k.push(k);
                new_v.push(v);
            }
        }
        _ => {
            return Err(Error::Contract(format!(
                "decode context does not match the {} model",
                model.variant()
            )))
        }
    }
    let logits = model.project_output(&mut tape, x)?;
    for l in 0..n_layers {
        cache.keys[l].extend_from_slice(tape.value(new_k[l]).data());
        cache.values[l].extend_from_slice(tape.value(new_v[l]).data());
    }
    cache.len += 1;
    let v = model.config.vocab_size;
    tape.value(logits).clone().reshape(&[v])
}

/// Log-probabilities with PAD and BOS excluded from generation.
pub fn next_token_log_probs<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let mut z: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
    z[PAD] = f64::NEG_INFINITY;
    z[BOS] = f64::NEG_INFINITY;
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

fn best_token(logp: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logp.iter().enumerate() {
        if v > logp[best] {
            best = i;
        }
    }
    best
}

/// Default generation limit: `2 S + 16`.
pub fn default_max_len(s_len: usize) -> usize {
    2 * s_len + 16
}

/// Tokens (without BOS/EOS) plus the logits seen at every step.
#[derive(Debug, Clone)]
pub struct GreedyOutput {
    pub tokens: Vec<usize>,
    pub step_logits: Vec<Vec<f64>>,
    pub log_prob: f64,
    pub finished: bool,
    pub attention_reads: usize,
}

/// Greedy decoding with cached incremental steps.
pub fn greedy_decode<T: Scalar>(model: &Model<T>, features: &Tensor<T>, max_len: usize) -> Result<GreedyOutput> {
    let ctx = prepare(model, features)?;
    greedy_from_context(model, &ctx, max_len)
}

pub fn greedy_from_context<T: Scalar>(
    model: &Model<T>,
    ctx: &DecodeContext<T>,
    max_len: usize,
) -> Result<GreedyOutput> {
    if max_len == 0 {
        return Err(Error::config("max_len must be at least 1"));
    }
    let mut cache = TargetCache::new(model.n_dec_layers());
    let mut out = GreedyOutput {
        tokens: Vec::new(),
        step_logits: Vec::new(),
        log_prob: 0.0,
        finished: false,
        attention_reads: 0,
    };
    let mut prev = BOS;
    for _ in 0..max_len {
        let logits = incremental_step(model, ctx, &mut cache, prev)?;
        let lp = next_token_log_probs(logits.data());
        out.step_logits.push(logits.data().iter().map(|v| v.as_f64()).collect());
        let tok = best_token(&lp);
        out.log_prob += lp[tok];
        if tok == EOS {
            out.finished = true;
            break;
        }
        out.tokens.push(tok);
        prev = tok;
    }
    out.attention_reads = cache.attention_reads;
    Ok(out)
}

/// Greedy decoding that re-encodes and re-runs the full teacher-forced
/// forward pass for every emitted token (reference path, quadratic cost).
pub fn greedy_decode_full<T: Scalar>(model: &Model<T>, features: &Tensor<T>, max_len: usize) -> Result<GreedyOutput> {
    if max_len == 0 {
        return Err(Error::config("max_len must be at least 1"));
    }
    let mut out = GreedyOutput {
        tokens: Vec::new(),
        step_logits: Vec::new(),
        log_prob: 0.0,
        finished: false,
        attention_reads: 0,
    };
    let v = model.config.vocab_size;
    for _ in 0..max_len {
        let mut prefix = vec![BOS];
        prefix.extend(&out.tokens);
        let logits = model.forward_single(features, &prefix)?;
        let last = &logits.data()[(prefix.len() - 1) * v..];
        let lp = next_token_log_probs(last);
        out.step_logits.push(last.iter().map(|x| x.as_f64()).collect());
        let tok = best_token(&lp);
        out.log_prob += lp[tok];
        if tok == EOS {
            out.finished = true;
            break;
        }
        out.tokens.push(tok);
    }
    Ok(out)
}

/// A beam entry.
#[derive(Debug, Clone)]
pub struct Hypothesis<T> {
    /// Generated tokens, including a final EOS when finished.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
    pub cache: TargetCache<T>,
}

impl<T> Hypothesis<T> {
    pub fn score(&self, length_penalty: f64) -> f64 {
        score(self.log_prob, self.tokens.len(), length_penalty)
    }

    /// Tokens without the trailing EOS.
    pub fn output(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// `log_prob / length^penalty`.
pub fn score(log_prob: f64, len: usize, length_penalty: f64) -> f64 {
    if length_penalty == 0.0 {
        log_prob
    } else {
        log_prob / (len.max(1) as f64).powf(length_penalty)
    }
}

fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Beam search; returns up to `beam` hypotheses, best first.
///
/// Each step expands every live hypothesis by every allowed token and
/// keeps the top `beam` of (finished hypotheses and expansions), ranked by
/// score and then by token sequence. Search stops when the kept set is
/// all finished or `max_len` tokens have been generated.
pub fn beam_search<T: Scalar>(
    model: &Model<T>,
    features: &Tensor<T>,
    beam: usize,
    max_len: usize,
    length_penalty: f64,
) -> Result<Vec<Hypothesis<T>>> {
    let ctx = prepare(model, features)?;
    beam_from_context(model, &ctx, beam, max_len, length_penalty)
}

pub fn beam_from_context<T: Scalar>(
    model: &Model<T>,
    ctx: &DecodeContext<T>,
    beam: usize,
    max_len: usize,
    length_penalty: f64,
) -> Result<Vec<Hypothesis<T>>> {
    if beam == 0 || max_len == 0 {
        return Err(Error::config("beam and max_len must be at least 1"));
    }
    let mut kept = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
        cache: TargetCache::new(model.n_dec_layers()),
    }];
    for _ in 0..max_len {
        if kept.iter().all(|h| h.finished) {
            break;
        }
        // (score, tokens, log_prob, parent index or finished index, token)
        let mut pool: Vec<(f64, Vec<usize>, f64, usize, Option<usize>)> = Vec::new();
        let mut caches = Vec::with_capacity(kept.len());
        for (i, h) in kept.iter().enumerate() {
            if h.finished {
                pool.push((h.score(length_penalty), h.tokens.clone(), h.log_prob, i, None));
                caches.push(None);
                continue;
            }
            let mut cache = h.cache.clone();
            let prev = h.tokens.last().copied().unwrap_or(BOS);
            let logits = incremental_step(model, ctx, &mut cache, prev)?;
            let lp = next_token_log_probs(logits.data());
            for (tok, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                let logp = h.log_prob + l;
                pool.push((score(logp, tokens.len(), length_penalty), tokens, logp, i, Some(tok)));
            }
            caches.push(Some(cache));
        }
        pool.sort_by(|a, b| rank((a.0, &a.1), (b.0, &b.1)));
        pool.truncate(beam);
        kept = pool
            .into_iter()
            .map(|(_, tokens, log_prob, parent, tok)| match tok {
                None => kept[parent].clone(),
                Some(tok) => Hypothesis {
                    finished: tok == EOS,
                    tokens,
                    log_prob,
                    cache: caches[parent].clone().expect("expanded parent has a cache"),
                },
            })
            .collect();
    }
    kept.sort_by(|a, b| rank((a.score(length_penalty), &a.tokens), (b.score(length_penalty), &b.tokens)));
    Ok(kept)
}

/// Which greedy implementation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Incremental,
    Full,
}

/// Decodes one utterance: greedy when `beam == 1`, else the best beam.
pub fn decode_utterance<T: Scalar>(
    model: &Model<T>,
    features: &Tensor<T>,
    beam: usize,
    max_len: Option<usize>,
    length_penalty: f64,
    mode: DecodeMode,
) -> Result<Vec<usize>> {
    let s = crate::layers::subsampled_len(features.shape()[0]).ok_or(Error::InputTooShort {
        len: features.shape()[0],
        min: crate::layers::MIN_FRAMES,
    })?;
    let max_len = max_len.unwrap_or_else(|| default_max_len(s));
    if beam <= 1 {
        let out = match mode {
            DecodeMode::Incremental => greedy_decode(model, features, max_len)?,
            DecodeMode::Full => greedy_decode_full(model, features, max_len)?,
        };
        return Ok(out.tokens);
    }
    let hyps = beam_search(model, features, beam, max_len, length_penalty)?;
    Ok(hyps.first().map(|h| h.output().to_vec()).unwrap_or_default())
}

/// `utt_id <TAB> space-joined tokens` lines.
pub fn format_hypotheses(rows: &[(String, Vec<usize>)]) -> String {
    rows.iter()
        .map(|(id, toks)| {
            let t: Vec<String> = toks.iter().map(|x| x.to_string()).collect();
            format!("{id}\t{}\n", t.join(" "))
        })
        .collect()
}

/// Parses the hypothesis format written by [`format_hypotheses`].
pub fn parse_hypotheses(text: &str, file: &std::path::Path) -> Result<Vec<(String, Vec<usize>)>> {
    let mut out = Vec::new();
    let mut at = 0u64;
    for line in text.split_inclusive('\n') {
        let start = at;
        at += line.len() as u64;
        let line = line.trim_end_matches('\n');
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            file: file.to_path_buf(),
            offset: start,
            msg,
        };
        let (id, toks) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected `utt_id<TAB>tokens`".into()))?;
        let toks = toks
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad token `{t}`"))))
            .collect::<Result<Vec<usize>>>()?;
        out.push((id.to_string(), toks));
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
