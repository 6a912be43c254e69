//! Neural building blocks recorded on a [`Tape`](crate::numerics::Tape).

mod attention;
mod embedding;
mod subsample;

pub use attention::{
    attention, attention_weights, mask_var, merge_heads, split_heads, stma, stma_masked,
    AttentionParams,
};
pub use embedding::{
    add_modality_and_position, add_modality_and_position_at, embed_segment, sinusoidal_positions, ModalityEmbedding,
    TokenEmbedding, ACOUSTIC, TEXT,
};
pub use subsample::{subsampled_len, Subsampler, MIN_FRAMES};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Scalar, SeededRng, Tape, Var};

/// Affine map `x W + b` over the last axis; `W` is `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[in_dim, out_dim], in_dim, out_dim, rng);
        let b = store.add_const(format!("{name}.b"), &[out_dim], 0.0);
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let y = tape.matmul(x, w)?;
        tape.broadcast_add(y, b)
    }
}

/// Per-feature gain and bias for layer normalization.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        LayerNorm {
            gain: store.add_const(format!("{name}.gain"), &[d], 1.0),
            bias: store.add_const(format!("{name}.bias"), &[d], 0.0),
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b, T::from_f64_lossy(self.eps))
    }
}

/// Position-wise `relu(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        d_ff: usize,
        rng: &mut impl Rng,
    ) -> Self {
        FeedForward {
            inner: Linear::new(store, &format!("{name}.w1"), d_model, d_ff, rng),
            outer: Linear::new(store, &format!("{name}.w2"), d_ff, d_model, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let h = self.inner.forward(tape, x)?;
        let h = tape.relu(h);
        self.outer.forward(tape, h)
    }
}

/// Standalone feed-forward on explicit weights.
pub fn feed_forward<T: Scalar>(
    tape: &mut Tape<'_, T>,
    x: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
) -> Result<Var> {
    let h = tape.matmul(x, w1)?;
    let h = tape.broadcast_add(h, b1)?;
    let h = tape.relu(h);
    let y = tape.matmul(h, w2)?;
    tape.broadcast_add(y, b2)
}

/// Dropout state threaded through a training forward pass.
pub struct Dropout {
    rate: f64,
    rng: Option<SeededRng>,
}

impl Dropout {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, rng: SeededRng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout {
            rate,
            rng: Some(rng),
        })
    }

    pub fn apply<T: Scalar>(&mut self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        match &mut self.rng {
            Some(rng) if self.rate > 0.0 => tape.dropout(x, self.rate, rng),
            _ => Ok(x),
        }
    }
}
