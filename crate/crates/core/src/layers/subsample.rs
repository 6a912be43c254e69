use rand::Rng;

use super::Linear;
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Scalar, Tape, Var};

/// Shortest input the two stride-2 convolutions accept.
pub const MIN_FRAMES: usize = 4;

const KERNEL: usize = 2;
const STRIDE: usize = 2;

fn conv_len(n: usize) -> usize {
    (n - KERNEL) / STRIDE + 1
}

/// Output length of the two-layer subsampler, or `None` below [`MIN_FRAMES`].
pub fn subsampled_len(len: usize) -> Option<usize> {
    if len < MIN_FRAMES {
        return None;
    }
    Some(conv_len(conv_len(len)))
}

/// Two 2x2, stride-2 convolutions (relu after each) over the time and
/// frequency axes, then a linear map of channels x reduced frequency to
/// the model width.
///
/// With kernel equal to stride the convolutions read disjoint patches, so
/// each one is a patch reshape followed by a matrix product.
#[derive(Debug, Clone)]
pub struct Subsampler {
    /// `[4, C]`: patch `(dt, df)` to channel.
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    /// `[4 C, C]`: patch `(dt, df, c_in)` to channel.
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
    pub proj: Linear,
    pub channels: usize,
    pub feature_dim: usize,
    pub d_model: usize,
}

impl Subsampler {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        feature_dim: usize,
        channels: usize,
        d_model: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let reduced = subsampled_len(feature_dim).ok_or_else(|| {
            Error::config(format!(
                "feature dimension {feature_dim} is below the subsampler minimum {MIN_FRAMES}"
            ))
        })?;
        let patch = KERNEL * KERNEL;
        Ok(Subsampler {
            conv1_w: store.add_uniform(
                format!("{name}.conv1.w"),
                &[patch, channels],
                patch,
                channels,
                rng,
            ),
            conv1_b: store.add_const(format!("{name}.conv1.b"), &[channels], 0.0),
            conv2_w: store.add_uniform(
                format!("{name}.conv2.w"),
                &[patch * channels, channels],
                patch * channels,
                channels,
                rng,
            ),
            conv2_b: store.add_const(format!("{name}.conv2.b"), &[channels], 0.0),
            proj: Linear::new(store, &format!("{name}.proj"), channels * reduced, d_model, rng),
            channels,
            feature_dim,
            d_model,
        })
    }

    /// One convolution on `[B, L, F, C_in]`, returning `[B, L', F', C_out]`.
    fn conv<T: Scalar>(
        tape: &mut Tape<'_, T>,
        x: Var,
        w: ParamId,
        b: ParamId,
    ) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let (bsz, l, f, c) = (s[0], s[1], s[2], s[3]);
        let (lo, fo) = (conv_len(l), conv_len(f));
        let mut x = x;
        if lo * STRIDE != l {
            x = tape.slice(x, 1, 0, lo * STRIDE)?;
        }
        if fo * STRIDE != f {
            x = tape.slice(x, 2, 0, fo * STRIDE)?;
        }
        let x = tape.reshape(x, &[bsz, lo, KERNEL, fo, KERNEL, c])?;
        let x = tape.permute(x, &[0, 1, 3, 2, 4, 5])?;
        let x = tape.reshape(x, &[bsz, lo, fo, KERNEL * KERNEL * c])?;
        let wv = tape.param(w);
        let bv = tape.param(b);
        let y = tape.matmul(x, wv)?;
        let y = tape.broadcast_add(y, bv)?;
        Ok(tape.relu(y))
    }

    /// `[B, L, F]` features to `[B, L', d]` states.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, features: Var) -> Result<Var> {
        let s = tape.shape(features).to_vec();
        if s.len() != 3 || s[2] != self.feature_dim {
            return Err(Error::dim(format!(
                "subsampler expects [B, L, {}] features, got {s:?}",
                self.feature_dim
            )));
        }
        if s[1] < MIN_FRAMES {
            return Err(Error::InputTooShort {
                len: s[1],
                min: MIN_FRAMES,
            });
        }
        let x = tape.reshape(features, &[s[0], s[1], s[2], 1])?;
        let x = Self::conv(tape, x, self.conv1_w, self.conv1_b)?;
        let x = Self::conv(tape, x, self.conv2_w, self.conv2_b)?;
        let o = tape.shape(x).to_vec();
        let x = tape.reshape(x, &[o[0], o[1], o[2] * o[3]])?;
        self.proj.forward(tape, x)
    }
}
