use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// Row of the modality table used for acoustic positions.
pub const ACOUSTIC: usize = 0;
/// Row of the modality table used for text positions.
pub const TEXT: usize = 1;

/// Sinusoidal position table for positions `offset..offset + n`.
pub fn sinusoidal_positions<T: Scalar>(n: usize, d_model: usize, offset: usize) -> Result<Tensor<T>> {
    if d_model % 2 != 0 {
        return Err(Error::config(format!(
            "sinusoidal positions need an even model width, got {d_model}"
        )));
    }
    let mut data = Vec::with_capacity(n * d_model);
    for pos in offset..offset + n {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data.push(T::from_f64_lossy(angle.sin()));
            data.push(T::from_f64_lossy(angle.cos()));
        }
    }
    Tensor::new(vec![n, d_model], data)
}

/// Token embedding table `[V, d]`, scaled by `sqrt(d)` on lookup.
#[derive(Debug, Clone)]
pub struct TokenEmbedding {
    pub table: ParamId,
    pub vocab_size: usize,
    pub d_model: usize,
}

impl TokenEmbedding {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab_size: usize,
        d_model: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let table = store.add_normal(
            format!("{name}.table"),
            &[vocab_size, d_model],
            (d_model as f64).powf(-0.5),
            rng,
        );
        TokenEmbedding {
            table,
            vocab_size,
            d_model,
        }
    }

    /// Embeds a `[B, T]` id grid (rows of equal length) into `[B, T, d]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, ids: &[Vec<usize>]) -> Result<Var> {
        let b = ids.len();
        let t = ids.first().map_or(0, |r| r.len());
        if ids.iter().any(|r| r.len() != t) {
            return Err(Error::dim("token rows must share a length"));
        }
        let flat: Vec<usize> = ids.iter().flatten().copied().collect();
        let table = tape.param(self.table);
        let e = tape.gather_rows(table, &flat)?;
        let e = tape.scale(e, T::from_f64_lossy((self.d_model as f64).sqrt()));
        tape.reshape(e, &[b, t, self.d_model])
    }
}

/// Learned `2 x d` table marking rows as acoustic or text.
#[derive(Debug, Clone)]
pub struct ModalityEmbedding {
    pub table: ParamId,
}

impl ModalityEmbedding {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        rng: &mut impl Rng,
    ) -> Self {
        ModalityEmbedding {
            table: store.add_normal(
                format!("{name}.table"),
                &[2, d_model],
                (d_model as f64).powf(-0.5),
                rng,
            ),
        }
    }
}

/// Adds positions `offset..` and (optionally) one modality row to a
/// `[B, N, d]` segment.
pub fn embed_segment<T: Scalar>(
    tape: &mut Tape<'_, T>,
    x: Var,
    modality: Option<(&ModalityEmbedding, usize)>,
    offset: usize,
    with_positions: bool,
) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 {
        return Err(Error::dim(format!("expected [B, N, d], got {s:?}")));
    }
    let mut x = x;
    if with_positions {
        let pe = tape.constant(sinusoidal_positions(s[1], s[2], offset)?);
        x = tape.broadcast_add(x, pe)?;
    }
    if let Some((me, row)) = modality {
        let table = tape.param(me.table);
        if tape.shape(table)[1] != s[2] {
            return Err(Error::dim("modality table width differs from the model width"));
        }
        let r = tape.gather_rows(table, &[row])?;
        x = tape.broadcast_add(x, r)?;
    }
    Ok(x)
}

/// Builds the decoder input `[src + m_0 + PE(0..S) ; tgt + m_1 + PE(..)]`.
///
/// Target positions continue at `S` unless `restart_at_text`, in which case
/// they start again at 0.
pub fn add_modality_and_position<T: Scalar>(
    tape: &mut Tape<'_, T>,
    src: Var,
    tgt_emb: Var,
    me: Option<&ModalityEmbedding>,
    restart_at_text: bool,
) -> Result<Var> {
    let ss = tape.shape(src).to_vec();
    if ss.len() != 3 {
        return Err(Error::dim(format!("expected [B, S, d] acoustic states, got {ss:?}")));
    }
    let offset = if restart_at_text { 0 } else { ss[1] };
    add_modality_and_position_at(tape, src, tgt_emb, me, &vec![offset; ss[0]])
}

/// [`add_modality_and_position`] with an explicit first target position
/// per example, so that padding the acoustic segment of a batch does not
/// move the target positions.
pub fn add_modality_and_position_at<T: Scalar>(
    tape: &mut Tape<'_, T>,
    src: Var,
    tgt_emb: Var,
    me: Option<&ModalityEmbedding>,
    tgt_offsets: &[usize],
) -> Result<Var> {
    let (ss, ts) = (tape.shape(src).to_vec(), tape.shape(tgt_emb).to_vec());
    if ss.len() != 3 || ts.len() != 3 || ss[0] != ts[0] || ss[2] != ts[2] {
        return Err(Error::dim(format!(
            "cannot concatenate acoustic {ss:?} with target {ts:?}"
        )));
    }
    if tgt_offsets.len() != ts[0] {
        return Err(Error::dim(format!(
            "{} target offsets for a batch of {}",
            tgt_offsets.len(),
            ts[0]
        )));
    }
    let a = embed_segment(tape, src, me.map(|m| (m, ACOUSTIC)), 0, true)?;
    let t = if tgt_offsets.iter().all(|&o| o == tgt_offsets[0]) {
        embed_segment(tape, tgt_emb, me.map(|m| (m, TEXT)), tgt_offsets[0], true)?
    } else {
        let mut pe = Vec::with_capacity(ts.iter().product());
        for &o in tgt_offsets {
            pe.extend_from_slice(sinusoidal_positions::<T>(ts[1], ts[2], o)?.data());
        }
        let pe = tape.constant(Tensor::new(ts.clone(), pe)?);
        let t = tape.add(tgt_emb, pe)?;
        embed_segment(tape, t, me.map(|m| (m, TEXT)), 0, false)?
    };
    tape.concat(&[a, t], 1)
}
