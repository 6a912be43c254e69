use rand::Rng;

use super::Linear;
use crate::error::{Error, Result};
use crate::masks::{Mask2d, MaskMatrix};
use crate::numerics::{ParamStore, Scalar, Tape, Tensor, Var};

/// Softmax weights `softmax(q k^T / sqrt(d_k) + mask)`.
///
/// `q` is `[.., Q, d]`, `k` is `[.., K, d]`; `mask` broadcasts against
/// `[.., Q, K]`.
pub fn attention_weights<T: Scalar>(
    tape: &mut Tape<'_, T>,
    q: Var,
    k: Var,
    mask: Option<Var>,
    d_k: usize,
) -> Result<Var> {
    let (qs, ks) = (tape.shape(q), tape.shape(k));
    if qs.last() != ks.last() {
        return Err(Error::dim(format!(
            "attention: query {qs:?} and key {ks:?} disagree on the feature axis"
        )));
    }
    let scores = tape.matmul_ex(q, k, false, true)?;
    let scores = tape.scale(scores, T::from_f64_lossy(1.0 / (d_k as f64).sqrt()));
    let scores = match mask {
        Some(m) => tape.broadcast_add(scores, m)?,
        None => scores,
    };
    tape.softmax_lastdim(scores)
}

/// Scaled dot-product attention, `softmax(q k^T / sqrt(d_k) + mask) v`.
pub fn attention<T: Scalar>(
    tape: &mut Tape<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<Var>,
    d_k: usize,
) -> Result<Var> {
    let (ks, vs) = (tape.shape(k), tape.shape(v));
    if ks.len() < 2 || vs.len() != ks.len() || ks[ks.len() - 2] != vs[vs.len() - 2] {
        return Err(Error::dim(format!(
            "attention: key {ks:?} and value {vs:?} disagree on sequence length"
        )));
    }
    let w = attention_weights(tape, q, k, mask, d_k)?;
    tape.matmul(w, v)
}

/// Stacks per-example masks into a `[B, 1, Q, K]` constant that broadcasts
/// over heads.
pub fn mask_var<T: Scalar>(tape: &mut Tape<'_, T>, masks: &[&Mask2d]) -> Result<Var> {
    let first = masks.first().ok_or_else(|| Error::dim("empty mask batch"))?;
    let (q, k) = (first.rows(), first.cols());
    let mut data = Vec::with_capacity(masks.len() * q * k);
    for m in masks {
        if m.rows() != q || m.cols() != k {
            return Err(Error::dim("masks in a batch must share a shape"));
        }
        data.extend(m.values().iter().map(|&v| T::from_f64_lossy(v)));
    }
    Ok(tape.constant(Tensor::new(vec![masks.len(), 1, q, k], data)?))
}

/// `[B, N, d]` to `[B, H, N, d/H]`.
pub fn split_heads<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, n_heads: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 || s[2] % n_heads != 0 {
        return Err(Error::dim(format!(
            "cannot split {s:?} into {n_heads} heads"
        )));
    }
    let x = tape.reshape(x, &[s[0], s[1], n_heads, s[2] / n_heads])?;
    tape.permute(x, &[0, 2, 1, 3])
}

/// `[B, H, N, d_k]` to `[B, N, H * d_k]`.
pub fn merge_heads<T: Scalar>(tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[s[0], s[2], s[1] * s[3]])
}

/// Projections of one multi-head attention sublayer.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
    pub d_model: usize,
}

impl AttentionParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {d_model} is not divisible by {n_heads} heads"
            )));
        }
        Ok(AttentionParams {
            q: Linear::new(store, &format!("{name}.q"), d_model, d_model, rng),
            k: Linear::new(store, &format!("{name}.k"), d_model, d_model, rng),
            v: Linear::new(store, &format!("{name}.v"), d_model, d_model, rng),
            o: Linear::new(store, &format!("{name}.o"), d_model, d_model, rng),
            n_heads,
            d_model,
        })
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Projected keys and values, `[B, K, d]` each (heads not split).
    pub fn project_kv<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<(Var, Var)> {
        Ok((self.k.forward(tape, x)?, self.v.forward(tape, x)?))
    }

    /// Attends queries projected from `x_q` over already-projected keys
    /// and values; `mask` broadcasts against `[B, H, Q, K]`.
    pub fn attend_projected<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        x_q: Var,
        k: Var,
        v: Var,
        mask: Option<Var>,
    ) -> Result<Var> {
        let q = self.q.forward(tape, x_q)?;
        let q = split_heads(tape, q, self.n_heads)?;
        let k = split_heads(tape, k, self.n_heads)?;
        let v = split_heads(tape, v, self.n_heads)?;
        let ctx = attention(tape, q, k, v, mask, self.d_k())?;
        let ctx = merge_heads(tape, ctx)?;
        self.o.forward(tape, ctx)
    }

    /// Multi-head attention of `x_q` over `x_kv`. Used for encoder and
    /// decoder self-attention and for the baseline's cross-attention.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        x_q: Var,
        x_kv: Var,
        mask: Option<Var>,
    ) -> Result<Var> {
        let (k, v) = self.project_kv(tape, x_kv)?;
        self.attend_projected(tape, x_q, k, v, mask)
    }

    /// Encoder-decoder attention with a per-example key padding mask.
    pub fn cross_attention<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        q_seq: Var,
        kv_seq: Var,
        key_mask: &[Vec<f64>],
    ) -> Result<Var> {
        let b = tape.shape(kv_seq)[0];
        let k_len = tape.shape(kv_seq)[1];
        if key_mask.len() != b || key_mask.iter().any(|m| m.len() != k_len) {
            return Err(Error::dim("key mask does not match the key sequence"));
        }
        let data: Vec<f64> = key_mask.iter().flatten().copied().collect();
        let m = tape.constant(Tensor::from_f64(&[b, 1, 1, k_len], &data)?);
        self.forward(tape, q_seq, kv_seq, Some(m))
    }
}

/// Speech-text mixed attention over `[src ; tgt]`.
///
/// Queries, keys and values all come from the concatenated sequence
/// through shared projections; one softmax spans acoustic and target keys.
/// Returns `[B, S + T, d]`.
pub fn stma<T: Scalar>(
    tape: &mut Tape<'_, T>,
    params: &AttentionParams,
    src: Var,
    tgt: Var,
    masks: &[&MaskMatrix],
) -> Result<Var> {
    let (ss, ts) = (tape.shape(src).to_vec(), tape.shape(tgt).to_vec());
    if ss.len() != 3 || ts.len() != 3 || ss[0] != ts[0] || ss[2] != ts[2] {
        return Err(Error::dim(format!(
            "stma: acoustic {ss:?} and target {ts:?} are not batch-aligned"
        )));
    }
    if ss[1] == 0 {
        return Err(Error::validation("stma needs at least one acoustic position"));
    }
    if masks.len() != ss[0] || masks.iter().any(|m| m.s_len() != ss[1] || m.t_len() != ts[1]) {
        return Err(Error::dim(format!(
            "stma: masks do not match S = {}, T = {}",
            ss[1], ts[1]
        )));
    }
    let mats: Vec<&Mask2d> = masks.iter().map(|m| m.matrix()).collect();
    let mask = mask_var(tape, &mats)?;
    stma_masked(tape, params, src, tgt, mask)
}

/// [`stma`] with a prebuilt `[B, 1, S+T, S+T]` mask constant.
pub fn stma_masked<T: Scalar>(
    tape: &mut Tape<'_, T>,
    params: &AttentionParams,
    src: Var,
    tgt: Var,
    mask: Var,
) -> Result<Var> {
    let x = tape.concat(&[src, tgt], 1)?;
    params.forward(tape, x, x, Some(mask))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::random;
    use super::*;
    use crate::masks::{build_stma_mask, NEG};
    use crate::numerics::{gradient_check, seeded_rng, SeededRng};

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn hand_softmax_example() {
        let mut tape = Tape::<f64>::detached();
        let q = tape.constant(t(&[2, 1], &[1., 0.]));
        let k = tape.constant(t(&[2, 1], &[1., 0.]));
        let v = tape.constant(t(&[2, 1], &[2., 4.]));
        let m = tape.constant(Tensor::zeros(&[2, 2]));
        let w = attention_weights(&mut tape, q, k, Some(m), 1).unwrap();
        let w0 = tape.value(w).row(0).to_vec();
        assert!((w0[0] - 0.7311).abs() < 1e-4 && (w0[1] - 0.2689).abs() < 1e-4);
        let out = attention(&mut tape, q, k, v, Some(m), 1).unwrap();
        let o = tape.value(out).data().to_vec();
        let e = 1f64.exp();
        assert!((o[0] - (2.0 * e + 4.0) / (e + 1.0)).abs() < 1e-12);
        assert!((o[0] - 2.5379).abs() < 1e-4);
        assert_eq!(o[1], 3.0);
    }

    #[test]
    fn single_visible_key_copies_value_row() {
        let mut rng = seeded_rng(2);
        let mut tape = Tape::<f64>::detached();
        let q = tape.constant(random(&[3, 4], &mut rng));
        let k = tape.constant(random(&[3, 4], &mut rng));
        let vt = random(&[3, 2], &mut rng);
        let v = tape.constant(vt.clone());
        // row i sees only key (2 - i)
        let mut md = vec![NEG; 9];
        for i in 0..3 {
            md[i * 3 + (2 - i)] = 0.0;
        }
        let m = tape.constant(t(&[3, 3], &md));
        let out = attention(&mut tape, q, k, v, Some(m), 4).unwrap();
        for i in 0..3 {
            assert_eq!(tape.value(out).row(i), vt.row(2 - i));
        }
    }

    #[test]
    fn uniform_scores_average_visible_values() {
        let mut tape = Tape::<f64>::detached();
        let q = tape.constant(Tensor::full(&[2, 3], 0.5));
        let k = tape.constant(Tensor::full(&[3, 3], 0.5));
        let v = tape.constant(t(&[3, 2], &[1., 10., 2., 20., 6., 60.]));
        let m = tape.constant(t(&[2, 3], &[0., 0., 0., 0., 0., NEG]));
        let out = attention(&mut tape, q, k, v, Some(m), 3).unwrap();
        let o = tape.value(out);
        assert!((o.row(0)[0] - 3.0).abs() < 1e-12 && (o.row(0)[1] - 30.0).abs() < 1e-12);
        assert!((o.row(1)[0] - 1.5).abs() < 1e-12 && (o.row(1)[1] - 15.0).abs() < 1e-12);
    }

    #[test]
    fn attention_shape_errors() {
        let mut tape = Tape::<f64>::detached();
        let q = tape.constant(Tensor::zeros(&[2, 3]));
        let k = tape.constant(Tensor::zeros(&[2, 4]));
        let v = tape.constant(Tensor::zeros(&[3, 4]));
        assert!(attention(&mut tape, q, k, k, None, 3).is_err());
        assert!(attention(&mut tape, k, k, v, None, 4).is_err());
    }

    fn params(d: usize, h: usize, rng: &mut SeededRng) -> (ParamStore<f64>, AttentionParams) {
        let mut store = ParamStore::new();
        let p = AttentionParams::new(&mut store, "att", d, h, rng).unwrap();
        // non-zero biases so they participate
        for lin in [&p.q, &p.k, &p.v, &p.o] {
            store.set_value(lin.b, random(&[d], rng)).unwrap();
        }
        (store, p)
    }

    #[test]
    fn stma_acoustic_rows_ignore_target() {
        let mut rng = seeded_rng(9);
        let (store, p) = params(8, 2, &mut rng);
        let src = random(&[1, 3, 8], &mut rng);
        let mask = build_stma_mask(3, 4, &[false; 3], &[false; 4]).unwrap();
        let run = |tgt: Tensor<f64>| {
            let mut tape = Tape::new(&store);
            let s = tape.constant(src.clone());
            let tg = tape.constant(tgt);
            let out = stma(&mut tape, &p, s, tg, &[&mask]).unwrap();
            tape.value(out).slice(1, 0, 3).unwrap()
        };
        let a = run(random(&[1, 4, 8], &mut rng));
        let b = run(random(&[1, 4, 8], &mut rng));
        assert_eq!(a, b);
    }

    #[test]
    fn stma_identity_projection_hand_oracle() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = seeded_rng(0);
        let p = AttentionParams::new(&mut store, "att", 2, 1, &mut rng).unwrap();
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        for lin in [&p.q, &p.k, &p.v, &p.o] {
            store.set_value(lin.w, eye.clone()).unwrap();
        }
        let src = [0.5, -1.0];
        let tgt = [2.0, 0.25];
        let mask = build_stma_mask(1, 1, &[false], &[false]).unwrap();
        let mut tape = Tape::new(&store);
        let s = tape.constant(t(&[1, 1, 2], &src));
        let tg = tape.constant(t(&[1, 1, 2], &tgt));
        let out = stma(&mut tape, &p, s, tg, &[&mask]).unwrap();
        let o = tape.value(out).data().to_vec();
        // acoustic row attends only to itself
        assert!((o[0] - src[0]).abs() < 1e-12 && (o[1] - src[1]).abs() < 1e-12);
        // target row: one softmax over {src, tgt}
        let dot = |a: &[f64], b: &[f64]| (a[0] * b[0] + a[1] * b[1]) / 2f64.sqrt();
        let (e0, e1) = (dot(&tgt, &src).exp(), dot(&tgt, &tgt).exp());
        for j in 0..2 {
            let want = (e0 * src[j] + e1 * tgt[j]) / (e0 + e1);
            assert!((o[2 + j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn stma_rejects_empty_audio_and_bad_masks() {
        let mut rng = seeded_rng(1);
        let (store, p) = params(4, 1, &mut rng);
        let mask = build_stma_mask(2, 1, &[false; 2], &[false]).unwrap();
        let mut tape = Tape::new(&store);
        let empty = tape.constant(Tensor::zeros(&[1, 0, 4]));
        let src = tape.constant(Tensor::zeros(&[1, 3, 4]));
        let tgt = tape.constant(Tensor::zeros(&[1, 1, 4]));
        assert!(stma(&mut tape, &p, empty, tgt, &[&mask]).is_err());
        assert!(stma(&mut tape, &p, src, tgt, &[&mask]).is_err());
    }

    #[test]
    fn cross_attention_single_key_and_masking() {
        let mut rng = seeded_rng(4);
        let (store, p) = params(4, 2, &mut rng);
        let mut tape = Tape::new(&store);
        let q = tape.constant(random(&[1, 3, 4], &mut rng));
        let kv_t = random(&[1, 1, 4], &mut rng);
        let kv = tape.constant(kv_t);
        let out = p.cross_attention(&mut tape, q, kv, &[vec![0.0]]).unwrap();
        let (_, v) = p.project_kv(&mut tape, kv).unwrap();
        let expect = p.o.forward(&mut tape, v).unwrap();
        let o = tape.value(out);
        for r in 0..3 {
            let diff: f64 = o
                .row(r)
                .iter()
                .zip(tape.value(expect).data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }

        // masked key column receives negligible weight
        let qv = tape.constant(random(&[1, 2, 2, 2], &mut rng));
        let kv2 = tape.constant(random(&[1, 2, 3, 2], &mut rng));
        let m = tape.constant(t(&[1, 1, 1, 3], &[0., NEG, 0.]));
        let w = attention_weights(&mut tape, qv, kv2, Some(m), 2).unwrap();
        for (i, &x) in tape.value(w).data().iter().enumerate() {
            if i % 3 == 1 {
                assert!(x < 1e-7);
            }
        }
    }

    #[test]
    fn multi_head_matches_single_head_reference() {
        let mut rng = seeded_rng(8);
        let (store, p) = params(6, 3, &mut rng);
        let xq = random(&[2, 4, 6], &mut rng);
        let xkv = random(&[2, 5, 6], &mut rng);
        let key_mask = vec![vec![0.0, 0.0, 0.0, NEG, NEG], vec![0.0; 5]];
        let mut tape = Tape::new(&store);
        let qv = tape.constant(xq.clone());
        let kvv = tape.constant(xkv.clone());
        let out = p.cross_attention(&mut tape, qv, kvv, &key_mask).unwrap();
        let got = tape.value(out).clone();

        // reference: project each example, slice heads by column block,
        // run single-head attention() per head, concatenate, project.
        let proj = |x: &Tensor<f64>, lin: &Linear| {
            x.matmul(store.value(lin.w)).unwrap().broadcast_add(store.value(lin.b)).unwrap()
        };
        for b in 0..2 {
            let xq_b = xq.slice(0, b, 1).unwrap().reshape(&[4, 6]).unwrap();
            let xkv_b = xkv.slice(0, b, 1).unwrap().reshape(&[5, 6]).unwrap();
            let (q, k, v) = (proj(&xq_b, &p.q), proj(&xkv_b, &p.k), proj(&xkv_b, &p.v));
            let mut heads = Vec::new();
            for h in 0..3 {
                let mut tp = Tape::<f64>::detached();
                let qh = tp.constant(q.slice(1, 2 * h, 2).unwrap());
                let kh = tp.constant(k.slice(1, 2 * h, 2).unwrap());
                let vh = tp.constant(v.slice(1, 2 * h, 2).unwrap());
                let m = tp.constant(t(&[1, 5], &key_mask[b]));
                let o = attention(&mut tp, qh, kh, vh, Some(m), 2).unwrap();
                heads.push(tp.value(o).clone());
            }
            let refs: Vec<&Tensor<f64>> = heads.iter().collect();
            let ctx = Tensor::concat(&refs, 1).unwrap();
            let want = proj(&ctx, &p.o);
            let got_b = got.slice(0, b, 1).unwrap().reshape(&[4, 6]).unwrap();
            assert!(got_b.max_abs_diff(&want) < 1e-6);
        }
    }

    #[test]
    fn gradcheck_attention_and_stma() {
        let mut rng = seeded_rng(21);
        let (mut store, p) = params(4, 2, &mut rng);
        let src = random(&[2, 3, 4], &mut rng);
        let tgt = random(&[2, 2, 4], &mut rng);
        let w = random(&[2, 5, 4], &mut rng);
        let m0 = build_stma_mask(3, 2, &[false, false, true], &[false, false]).unwrap();
        let m1 = build_stma_mask(3, 2, &[false; 3], &[false, true]).unwrap();
        let ids: Vec<_> = store.ids().collect();
        let r = gradient_check(&mut store, &ids, 1e-5, 32, 3, |tape| {
            let s = tape.constant(src.clone());
            let tg = tape.constant(tgt.clone());
            let out = stma(tape, &p, s, tg, &[&m0, &m1])?;
            let wv = tape.constant(w.clone());
            let prod = tape.mul(out, wv)?;
            Ok(tape.sum(prod))
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }
}
