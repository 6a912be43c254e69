//! The baseline, AdaST and static-ablation architectures.
//!
//! All three share the speech encoder (CNN subsampler + pre-norm
//! Transformer layers). They differ only in the decoder:
//!
//! * **baseline**: each layer runs causal self-attention, cross-attention
//!   over the fixed encoder states, and a feed-forward sublayer;
//! * **adast**: the encoder states and the target embeddings are
//!   concatenated (with modality and position embeddings) and every layer
//!   runs one speech-text mixed attention sublayer over the whole sequence
//!   followed by a feed-forward sublayer, so the acoustic rows are
//!   re-processed by every decoder layer;
//! * **static_ablation**: the baseline decoder, but before layer `l`
//!   cross-attends, the encoder memory passes through a self-attention
//!   block owned by layer `l`. The memory therefore changes from layer to
//!   layer without ever reading target states. This is one reading of
//!   "an additional self-attention at each encoder layer"; whether the
//!   original ablation let encoder states see decoder states is not
//!   recoverable from its description.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, load_checkpoint_with, save_checkpoint, save_checkpoint_with, CheckpointExtras, FORMAT_VERSION};
pub use config::{ModelConfig, Variant, MODEL_KEYS};
pub(crate) use config::parse_value as config_value;

use crate::error::{Error, Result};
use crate::layers::{
    add_modality_and_position_at, mask_var, sinusoidal_positions, AttentionParams, Dropout,
    FeedForward, LayerNorm, Linear, ModalityEmbedding, Subsampler, TokenEmbedding,
};
use crate::masks::{build_causal_mask, build_padding_mask, build_stma_mask, Mask2d, MaskMatrix};
use crate::numerics::{seeded_rng, ParamStore, Scalar, Tape, Tensor, Var};

/// Pre-norm self-attention + feed-forward layer.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub self_attn: AttentionParams,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
}

/// Baseline decoder layer: causal self-attention, cross-attention, FFN.
#[derive(Debug, Clone)]
pub struct BaselineDecoderLayer {
    pub norm1: LayerNorm,
    pub self_attn: AttentionParams,
    pub norm2: LayerNorm,
    pub cross_attn: AttentionParams,
    pub norm3: LayerNorm,
    pub ffn: FeedForward,
}

/// AdaST decoder block: one mixed attention sublayer and an FFN.
#[derive(Debug, Clone)]
pub struct AdastDecoderLayer {
    pub norm1: LayerNorm,
    pub stma: AttentionParams,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
}

/// Residual self-attention block applied to the encoder memory.
#[derive(Debug, Clone)]
pub struct MemoryRefresh {
    pub norm: LayerNorm,
    pub attn: AttentionParams,
}

#[derive(Debug, Clone)]
pub enum Decoder {
    Baseline {
        layers: Vec<BaselineDecoderLayer>,
    },
    Adast {
        layers: Vec<AdastDecoderLayer>,
        modality: Option<ModalityEmbedding>,
    },
    StaticAblation {
        layers: Vec<BaselineDecoderLayer>,
        refresh: Vec<MemoryRefresh>,
    },
}

/// Output projection to vocabulary logits.
#[derive(Debug, Clone)]
pub enum OutputHead {
    Untied(Linear),
    /// Reuses the token embedding table (transposed) plus a bias.
    Tied { bias: crate::numerics::ParamId },
}

/// Encoder output for a batch.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[B, S, d]`
    pub states: Var,
    /// Per-example padding flags over the `S` subsampled frames.
    pub pad: Vec<Vec<bool>>,
}

/// A full model: configuration, parameters and the component layout.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub subsampler: Subsampler,
    pub encoder: Vec<EncoderLayer>,
    pub encoder_norm: LayerNorm,
    pub embedding: TokenEmbedding,
    pub decoder: Decoder,
    pub decoder_norm: LayerNorm,
    pub output: OutputHead,
}

/// Parameter element counts grouped by component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub subsampler: usize,
    pub encoder: usize,
    pub decoder: usize,
    pub embeddings: usize,
    pub output_head: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.subsampler + self.encoder + self.decoder + self.embeddings + self.output_head
    }

    pub fn rows(&self) -> [(&'static str, usize); 5] {
        [
            ("subsampler", self.subsampler),
            ("encoder", self.encoder),
            ("decoder", self.decoder),
            ("embeddings", self.embeddings),
            ("output_head", self.output_head),
        ]
    }
}

fn self_attn_layer<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    c: &ModelConfig,
    rng: &mut crate::numerics::SeededRng,
) -> Result<EncoderLayer> {
    Ok(EncoderLayer {
        norm1: LayerNorm::new(store, &format!("{name}.norm1"), c.d_model),
        self_attn: AttentionParams::new(store, &format!("{name}.self_attn"), c.d_model, c.n_heads, rng)?,
        norm2: LayerNorm::new(store, &format!("{name}.norm2"), c.d_model),
        ffn: FeedForward::new(store, &format!("{name}.ffn"), c.d_model, c.d_ff, rng),
    })
}

fn baseline_layer<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    c: &ModelConfig,
    rng: &mut crate::numerics::SeededRng,
) -> Result<BaselineDecoderLayer> {
    Ok(BaselineDecoderLayer {
        norm1: LayerNorm::new(store, &format!("{name}.norm1"), c.d_model),
        self_attn: AttentionParams::new(store, &format!("{name}.self_attn"), c.d_model, c.n_heads, rng)?,
        norm2: LayerNorm::new(store, &format!("{name}.norm2"), c.d_model),
        cross_attn: AttentionParams::new(store, &format!("{name}.cross_attn"), c.d_model, c.n_heads, rng)?,
        norm3: LayerNorm::new(store, &format!("{name}.norm3"), c.d_model),
        ffn: FeedForward::new(store, &format!("{name}.ffn"), c.d_model, c.d_ff, rng),
    })
}

/// Key-padding masks `[B, 1, 1, S]` from per-example pad flags.
pub(crate) fn key_padding_var<T: Scalar>(tape: &mut Tape<'_, T>, pad: &[Vec<bool>]) -> Result<Var> {
    let s = pad.first().map_or(0, |p| p.len());
    let mut data = Vec::with_capacity(pad.len() * s);
    for p in pad {
        data.extend(build_padding_mask(s, p)?);
    }
    Ok(tape.constant(Tensor::from_f64(&[pad.len(), 1, 1, s], &data)?))
}

fn check_targets(tgt_in: &[Vec<usize>], tgt_pad: &[Vec<bool>], batch: usize, vocab: usize) -> Result<usize> {
    if tgt_in.len() != batch || tgt_pad.len() != batch {
        return Err(Error::dim(format!(
            "target batch of {} rows (pad {}) for {batch} encoded examples",
            tgt_in.len(),
            tgt_pad.len()
        )));
    }
    let t = tgt_in.first().map_or(0, |r| r.len());
    if t == 0 {
        return Err(Error::validation("empty target sequence"));
    }
    for (row, pad) in tgt_in.iter().zip(tgt_pad) {
        if row.len() != t || pad.len() != t {
            return Err(Error::dim("target rows must be padded to a common length"));
        }
        if let Some(&bad) = row.iter().find(|&&id| id >= vocab) {
            return Err(Error::validation(format!(
                "token id {bad} out of range for vocabulary of {vocab}"
            )));
        }
    }
    Ok(t)
}

impl<T: Scalar> Model<T> {
    /// Builds a freshly initialized model; all randomness comes from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let subsampler = Subsampler::new(
            &mut store,
            "subsampler",
            c.feature_dim,
            c.cnn_channels,
            c.d_model,
            &mut rng,
        )?;
        let encoder = (0..c.n_enc_layers)
            .map(|i| self_attn_layer(&mut store, &format!("encoder.layers.{i}"), c, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let encoder_norm = LayerNorm::new(&mut store, "encoder.norm", c.d_model);
        let embedding = TokenEmbedding::new(&mut store, "embed.tokens", c.vocab_size, c.d_model, &mut rng);
        let decoder = match c.variant {
            Variant::Baseline => Decoder::Baseline {
                layers: (0..c.n_dec_layers)
                    .map(|i| baseline_layer(&mut store, &format!("decoder.layers.{i}"), c, &mut rng))
                    .collect::<Result<_>>()?,
            },
            Variant::StaticAblation => {
                let layers = (0..c.n_dec_layers)
                    .map(|i| baseline_layer(&mut store, &format!("decoder.layers.{i}"), c, &mut rng))
                    .collect::<Result<_>>()?;
                let refresh = (0..c.n_dec_layers)
                    .map(|i| -> Result<MemoryRefresh> {
                        let name = format!("decoder.memory_refresh.{i}");
                        Ok(MemoryRefresh {
                            norm: LayerNorm::new(&mut store, &format!("{name}.norm"), c.d_model),
                            attn: AttentionParams::new(&mut store, &format!("{name}.attn"), c.d_model, c.n_heads, &mut rng)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                Decoder::StaticAblation { layers, refresh }
            }
            Variant::Adast => {
                let layers = (0..c.n_dec_layers)
                    .map(|i| -> Result<AdastDecoderLayer> {
                        let name = format!("decoder.layers.{i}");
                        Ok(AdastDecoderLayer {
                            norm1: LayerNorm::new(&mut store, &format!("{name}.norm1"), c.d_model),
                            stma: AttentionParams::new(&mut store, &format!("{name}.stma"), c.d_model, c.n_heads, &mut rng)?,
                            norm2: LayerNorm::new(&mut store, &format!("{name}.norm2"), c.d_model),
                            ffn: FeedForward::new(&mut store, &format!("{name}.ffn"), c.d_model, c.d_ff, &mut rng),
                        })
                    })
                    .collect::<Result<_>>()?;
                let modality = c
                    .use_modality_embedding
                    .then(|| ModalityEmbedding::new(&mut store, "embed.modality", c.d_model, &mut rng));
                Decoder::Adast { layers, modality }
            }
        };
        let decoder_norm = LayerNorm::new(&mut store, "decoder.norm", c.d_model);
        let output = if c.tie_embeddings {
            OutputHead::Tied {
                bias: store.add_const("output.b", &[c.vocab_size], 0.0),
            }
        } else {
            OutputHead::Untied(Linear::new(&mut store, "output", c.d_model, c.vocab_size, &mut rng))
        };
        Ok(Model {
            config,
            store,
            subsampler,
            encoder,
            encoder_norm,
            embedding,
            decoder,
            decoder_norm,
            output,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn n_dec_layers(&self) -> usize {
        self.config.n_dec_layers
    }

    /// Exact element counts, grouped by parameter name prefix.
    pub fn param_count(&self) -> ParamCount {
        let mut pc = ParamCount {
            subsampler: 0,
            encoder: 0,
            decoder: 0,
            embeddings: 0,
            output_head: 0,
        };
        for (_, p) in self.store.iter() {
            let n = p.value.numel();
            let slot = match p.name.split('.').next().unwrap_or("") {
                "subsampler" => &mut pc.subsampler,
                "encoder" => &mut pc.encoder,
                "decoder" => &mut pc.decoder,
                "embed" => &mut pc.embeddings,
                _ => &mut pc.output_head,
            };
            *slot += n;
        }
        pc
    }

    /// Sets the output projection of every memory-refresh block to zero,
    /// turning each block into the identity.
    pub fn zero_memory_refresh(&mut self) -> Result<()> {
        let Decoder::StaticAblation { refresh, .. } = &self.decoder else {
            return Err(Error::config("zero_memory_refresh needs the static_ablation variant"));
        };
        let ids: Vec<_> = refresh.iter().flat_map(|r| [r.attn.o.w, r.attn.o.b]).collect();
        for id in ids {
            let shape = self.store.value(id).shape().to_vec();
            self.store.set_value(id, Tensor::zeros(&shape))?;
        }
        Ok(())
    }

    /// Copies every parameter whose name and shape also exist in `other`.
    /// Returns the number of tensors copied.
    pub fn copy_shared_params(&mut self, other: &Model<T>) -> Result<usize> {
        let mut n = 0;
        for (_, p) in other.store.iter() {
            if let Some(id) = self.store.id(&p.name) {
                if self.store.value(id).shape() == p.value.shape() {
                    self.store.set_value(id, p.value.clone())?;
                    n += 1;
                }
            }
        }
        Ok(n)
    }

    fn residual(
        tape: &mut Tape<'_, T>,
        x: Var,
        branch: Var,
        dropout: &mut Dropout,
    ) -> Result<Var> {
        let b = dropout.apply(tape, branch)?;
        tape.add(x, b)
    }

    pub(crate) fn encoder_layer(
        &self,
        tape: &mut Tape<'_, T>,
        layer: &EncoderLayer,
        x: Var,
        mask: Var,
        dropout: &mut Dropout,
    ) -> Result<Var> {
        let h = layer.norm1.forward(tape, x)?;
        let a = layer.self_attn.forward(tape, h, h, Some(mask))?;
        let x = Self::residual(tape, x, a, dropout)?;
        let h = layer.norm2.forward(tape, x)?;
        let f = layer.ffn.forward(tape, h)?;
        Self::residual(tape, x, f, dropout)
    }

    /// Runs the speech encoder on `[B, L, F]` features.
    pub fn encode(
        &self,
        tape: &mut Tape<'_, T>,
        features: &Tensor<T>,
        feature_pad: &[Vec<bool>],
        dropout: &mut Dropout,
    ) -> Result<Encoded> {
        let fs = features.shape();
        if fs.len() != 3 || feature_pad.len() != fs[0] || feature_pad.iter().any(|p| p.len() != fs[1]) {
            return Err(Error::dim(format!(
                "features {fs:?} do not match {} pad rows",
                feature_pad.len()
            )));
        }
        let x = tape.constant(features.clone());
        let x = self.subsampler.forward(tape, x)?;
        let s = tape.shape(x)[1];
        let pad: Vec<Vec<bool>> = feature_pad
            .iter()
            .map(|p| (0..s).map(|j| p[4 * j..4 * j + 4].iter().any(|&f| f)).collect())
            .collect();
        if let Some(i) = pad.iter().position(|p| p.iter().all(|&f| f)) {
            return Err(Error::validation(format!(
                "example {i} has no non-padded frame after subsampling"
            )));
        }
        let pe = tape.constant(sinusoidal_positions(s, self.config.d_model, 0)?);
        let mut x = tape.broadcast_add(x, pe)?;
        x = dropout.apply(tape, x)?;
        let mask = key_padding_var(tape, &pad)?;
        for layer in &self.encoder {
            x = self.encoder_layer(tape, layer, x, mask, dropout)?;
        }
        let states = self.encoder_norm.forward(tape, x)?;
        Ok(Encoded { states, pad })
    }

    /// `[B, T, d]` to `[B, T, V]`.
    pub(crate) fn project_output(&self, tape: &mut Tape<'_, T>, h: Var) -> Result<Var> {
        let h = self.decoder_norm.forward(tape, h)?;
        match &self.output {
            OutputHead::Untied(lin) => lin.forward(tape, h),
            OutputHead::Tied { bias } => {
                let table = tape.param(self.embedding.table);
                let y = tape.matmul_ex(h, table, false, true)?;
                let b = tape.param(*bias);
                tape.broadcast_add(y, b)
            }
        }
    }

    /// Teacher-forced logits for whichever decoder this model has.
    pub fn decode_train(
        &self,
        tape: &mut Tape<'_, T>,
        enc: &Encoded,
        tgt_in: &[Vec<usize>],
        tgt_pad: &[Vec<bool>],
        dropout: &mut Dropout,
    ) -> Result<Var> {
        match self.variant() {
            Variant::Baseline => self.decode_train_baseline(tape, enc, tgt_in, tgt_pad, dropout),
            Variant::Adast => self.decode_train_adast(tape, enc, tgt_in, tgt_pad, dropout),
            Variant::StaticAblation => {
                self.decode_train_static_ablation(tape, enc, tgt_in, tgt_pad, dropout)
            }
        }
    }

    pub(crate) fn causal_var(&self, tape: &mut Tape<'_, T>, tgt_pad: &[Vec<bool>], t: usize) -> Result<Var> {
        let masks: Vec<Mask2d> = tgt_pad
            .iter()
            .map(|p| build_causal_mask(t, p))
            .collect::<Result<_>>()?;
        let refs: Vec<&Mask2d> = masks.iter().collect();
        mask_var(tape, &refs)
    }

    pub(crate) fn baseline_layer_forward(
        &self,
        tape: &mut Tape<'_, T>,
        layer: &BaselineDecoderLayer,
        x: Var,
        causal: Var,
        memory: Var,
        memory_mask: Var,
        dropout: &mut Dropout,
    ) -> Result<Var> {
        let h = layer.norm1.forward(tape, x)?;
        let a = layer.self_attn.forward(tape, h, h, Some(causal))?;
        let x = Self::residual(tape, x, a, dropout)?;
        let h = layer.norm2.forward(tape, x)?;
        let c = layer.cross_attn.forward(tape, h, memory, Some(memory_mask))?;
        let x = Self::residual(tape, x, c, dropout)?;
        let h = layer.norm3.forward(tape, x)?;
        let f = layer.ffn.forward(tape, h)?;
        Self::residual(tape, x, f, dropout)
    }

    pub(crate) fn refresh_memory(
        &self,
        tape: &mut Tape<'_, T>,
        block: &MemoryRefresh,
        memory: Var,
        memory_mask: Var,
        dropout: &mut Dropout,
    ) -> Result<Var> {
        let h = block.norm.forward(tape, memory)?;
        let a = block.attn.forward(tape, h, h, Some(memory_mask))?;
        Self::residual(tape, memory, a, dropout)
    }

    pub(crate) fn embed_targets(&self, tape: &mut Tape<'_, T>, tgt_in: &[Vec<usize>], offset: usize) -> Result<Var> {
        let e = self.embedding.forward(tape, tgt_in)?;
        let t = tgt_in.first().map_or(0, |r| r.len());
        let pe = tape.constant(sinusoidal_positions(t, self.config.d_model, offset)?);
        tape.broadcast_add(e, pe)
    }

    fn baseline_like(
        &self,
        tape: &mut Tape<'_, T>,
        enc: &Encoded,
        tgt_in: &[Vec<usize>],
        tgt_pad: &[Vec<bool>],
        dropout: &mut Dropout,
        layers: &[BaselineDecoderLayer],
        refresh: Option<&[MemoryRefresh]>,
    ) -> Result<Var> {
        let b = tape.shape(enc.states)[0];
        let t = check_targets(tgt_in, tgt_pad, b, self.config.vocab_size)?;
        let causal = self.causal_var(tape, tgt_pad, t)?;
        let memory_mask = key_padding_var(tape, &enc.pad)?;
        let mut x = self.embed_targets(tape, tgt_in, 0)?;
        x = dropout.apply(tape, x)?;
        let mut memory = enc.states;
        for (l, layer) in layers.iter().enumerate() {
            if let Some(blocks) = refresh {
                memory = self.refresh_memory(tape, &blocks[l], memory, memory_mask, dropout)?;
            }
            x = self.baseline_layer_forward(tape, layer, x, causal, memory, memory_mask, dropout)?;
        }
        self.project_output(tape, x)
    }

    /// Baseline decoder: logits `[B, T, V]`.
    pub fn decode_train_baseline(
        &self,
        tape: &mut Tape<'_, T>,
        enc: &Encoded,
        tgt_in: &[Vec<usize>],
        tgt_pad: &[Vec<bool>],
        dropout: &mut Dropout,
    ) -> Result<Var> {
        let Decoder::Baseline { layers } = &self.decoder else {
            return Err(Error::config(format!(
                "decode_train_baseline called on a {} model",
                self.variant()
            )));
        };
        self.baseline_like(tape, enc, tgt_in, tgt_pad, dropout, layers, None)
    }

    /// Static-memory ablation decoder: logits `[B, T, V]`.
    pub fn decode_train_static_ablation(
        &self,
        tape: &mut Tape<'_, T>,
        enc: &Encoded,
        tgt_in: &[Vec<usize>],
        tgt_pad: &[Vec<bool>],
        dropout: &mut Dropout,
    ) -> Result<Var> {
        let Decoder::StaticAblation { layers, refresh } = &self.decoder else {
            return Err(Error::config(format!(
                "decode_train_static_ablation called on a {} model",
                self.variant()
            )));
        };
        self.baseline_like(tape, enc, tgt_in, tgt_pad, dropout, layers, Some(refresh))
    }

    /// First target position of each example: the number of non-padded
    /// acoustic frames, or 0 when positions restart at the text segment.
    pub(crate) fn target_offsets(&self, enc_pad: &[Vec<bool>]) -> Vec<usize> {
        enc_pad
            .iter()
            .map(|p| {
                if self.config.position_restart_at_text {
                    0
                } else {
                    p.iter().filter(|x| !**x).count()
                }
            })
            .collect()
    }

    pub(crate) fn stma_masks(&self, enc_pad: &[Vec<bool>], tgt_pad: &[Vec<bool>]) -> Result<Vec<MaskMatrix>> {
        enc_pad
            .iter()
            .zip(tgt_pad)
            .map(|(sp, tp)| build_stma_mask(sp.len(), tp.len(), sp, tp))
            .collect()
    }

    pub(crate) fn adast_layer_forward(
        &self,
        tape: &mut Tape<'_, T>,
        layer: &AdastDecoderLayer,
        h: Var,
        mask: Var,
        dropout: &mut Dropout,
    ) -> Result<Var> {
        let n = layer.norm1.forward(tape, h)?;
        let a = layer.stma.forward(tape, n, n, Some(mask))?;
        let h = Self::residual(tape, h, a, dropout)?;
        let n = layer.norm2.forward(tape, h)?;
        let f = layer.ffn.forward(tape, n)?;
        Self::residual(tape, h, f, dropout)
    }

    /// AdaST decoder, returning the logits and the `[B, S+T, d]` output of
    /// every decoder block.
    pub fn adast_hidden_states(
        &self,
        tape: &mut Tape<'_, T>,
        enc: &Encoded,
        tgt_in: &[Vec<usize>],
        tgt_pad: &[Vec<bool>],
        dropout: &mut Dropout,
    ) -> Result<(Var, Vec<Var>)> {
        let Decoder::Adast { layers, modality } = &self.decoder else {
            return Err(Error::config(format!(
                "decode_train_adast called on a {} model",
                self.variant()
            )));
        };
        let es = tape.shape(enc.states).to_vec();
        let t = check_targets(tgt_in, tgt_pad, es[0], self.config.vocab_size)?;
        let s = es[1];
        let masks = self.stma_masks(&enc.pad, tgt_pad)?;
        let mats: Vec<&Mask2d> = masks.iter().map(|m| m.matrix()).collect();
        let mask = mask_var(tape, &mats)?;
        let tgt = self.embedding.forward(tape, tgt_in)?;
        let offsets = self.target_offsets(&enc.pad);
        let mut h = add_modality_and_position_at(tape, enc.states, tgt, modality.as_ref(), &offsets)?;
        h = dropout.apply(tape, h)?;
        let mut per_layer = Vec::with_capacity(layers.len());
        for layer in layers {
            h = self.adast_layer_forward(tape, layer, h, mask, dropout)?;
            per_layer.push(h);
        }
        let tgt_rows = tape.slice(h, 1, s, t)?;
        let logits = self.project_output(tape, tgt_rows)?;
        Ok((logits, per_layer))
    }

    /// AdaST decoder: logits `[B, T, V]` read from the target rows.
    pub fn decode_train_adast(
        &self,
        tape: &mut Tape<'_, T>,
        enc: &Encoded,
        tgt_in: &[Vec<usize>],
        tgt_pad: &[Vec<bool>],
        dropout: &mut Dropout,
    ) -> Result<Var> {
        Ok(self.adast_hidden_states(tape, enc, tgt_in, tgt_pad, dropout)?.0)
    }

    /// Convenience: encode one utterance `[L, F]` and return teacher-forced
    /// logits `[T, V]` for an unpadded target input.
    pub fn forward_single(&self, features: &Tensor<T>, tgt_in: &[usize]) -> Result<Tensor<T>> {
        let fs = features.shape();
        if fs.len() != 2 {
            return Err(Error::dim(format!("expected [L, F] features, got {fs:?}")));
        }
        let feats = features.clone().reshape(&[1, fs[0], fs[1]])?;
        let mut tape = Tape::inference(&self.store);
        let mut drop = Dropout::off();
        let enc = self.encode(&mut tape, &feats, &[vec![false; fs[0]]], &mut drop)?;
        let logits = self.decode_train(
            &mut tape,
            &enc,
            &[tgt_in.to_vec()],
            &[vec![false; tgt_in.len()]],
            &mut drop,
        )?;
        let v = self.config.vocab_size;
        tape.value(logits).clone().reshape(&[tgt_in.len(), v])
    }
}
