//! Additive attention masks.
//!
//! A mask entry is `0` where attention is allowed and [`NEG`] where it is
//! forbidden; it is added to the scaled scores before the softmax.

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Masking constant. Finite so that max-subtracted softmax never sees
/// `-inf - -inf`; `exp(NEG)` underflows to exactly zero in both precisions.
pub const NEG: f64 = -1e9;

/// A dense additive mask with `rows x cols` entries in `{0, NEG}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask2d {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Mask2d {
    fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mask2d {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    /// A mask from row-major entries, each of which must be `0` or [`NEG`].
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::dim(format!("{} mask entries for {rows} x {cols}", values.len())));
        }
        if let Some(v) = values.iter().find(|&&v| v != 0.0 && v != NEG) {
            return Err(Error::validation(format!("mask entry {v} is neither 0 nor NEG")));
        }
        Ok(Mask2d { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_visible(&self, i: usize, j: usize) -> bool {
        self.get(i, j) == 0.0
    }

    /// Copy of the `[r0, r0+nr) x [c0, c0+nc)` sub-block.
    pub fn block(&self, r0: usize, nr: usize, c0: usize, nc: usize) -> Mask2d {
        let mut out = Mask2d::filled(nr, nc, 0.0);
        for i in 0..nr {
            for j in 0..nc {
                out.set(i, j, self.get(r0 + i, c0 + j));
            }
        }
        out
    }

    /// Every row has at least one visible entry.
    pub fn rows_have_visible_entry(&self) -> bool {
        (0..self.rows).all(|i| self.row(i).iter().any(|&v| v == 0.0))
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_f64(&[self.rows, self.cols], &self.values).expect("consistent mask shape")
    }
}

/// The four-block mask over a concatenated `[acoustic ; target]` sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    s_len: usize,
    t_len: usize,
    matrix: Mask2d,
}

/// Named quadrant of a [`MaskMatrix`]; first letter is the query side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// acoustic queries, acoustic keys
    SS,
    /// acoustic queries, target keys
    ST,
    /// target queries, acoustic keys
    TS,
    /// target queries, target keys
    TT,
}

impl MaskMatrix {
    pub fn s_len(&self) -> usize {
        self.s_len
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn matrix(&self) -> &Mask2d {
        &self.matrix
    }

    pub fn block(&self, b: Block) -> Mask2d {
        let (s, t) = (self.s_len, self.t_len);
        match b {
            Block::SS => self.matrix.block(0, s, 0, s),
            Block::ST => self.matrix.block(0, s, s, t),
            Block::TS => self.matrix.block(s, t, 0, s),
            Block::TT => self.matrix.block(s, t, s, t),
        }
    }

    /// Reassembles a mask from its four quadrants.
    pub fn from_blocks(ss: &Mask2d, st: &Mask2d, ts: &Mask2d, tt: &Mask2d) -> Result<Self> {
        let s = ss.rows;
        let t = tt.rows;
        let consistent = ss.cols == s
            && st.rows == s
            && st.cols == t
            && ts.rows == t
            && ts.cols == s
            && tt.cols == t;
        if !consistent {
            return Err(Error::dim("mask blocks do not tile a square matrix"));
        }
        let n = s + t;
        let mut m = Mask2d::filled(n, n, 0.0);
        for i in 0..n {
            for j in 0..n {
                let v = match (i < s, j < s) {
                    (true, true) => ss.get(i, j),
                    (true, false) => st.get(i, j - s),
                    (false, true) => ts.get(i - s, j),
                    (false, false) => tt.get(i - s, j - s),
                };
                m.set(i, j, v);
            }
        }
        Ok(MaskMatrix {
            s_len: s,
            t_len: t,
            matrix: m,
        })
    }
}

fn check_pad(name: &str, len: usize, pad: &[bool]) -> Result<()> {
    if pad.len() != len {
        return Err(Error::validation(format!(
            "{name} pad list has {} flags for {len} positions",
            pad.len()
        )));
    }
    Ok(())
}

/// Builds the speech-text mixed attention mask.
///
/// * acoustic rows see every non-padded acoustic key and no target key;
/// * target rows see every non-padded acoustic key and the non-padded
///   target keys at or before their own position;
/// * a padded target row sees only itself among target keys.
///
/// `t_len` may be zero (acoustic-only pass).
pub fn build_stma_mask(
    s_len: usize,
    t_len: usize,
    s_pad: &[bool],
    t_pad: &[bool],
) -> Result<MaskMatrix> {
    check_pad("acoustic", s_len, s_pad)?;
    check_pad("target", t_len, t_pad)?;
    if s_len == 0 || s_pad.iter().all(|&p| p) {
        return Err(Error::validation(
            "acoustic sequence has no non-padded position",
        ));
    }
    if t_len > 0 && t_pad.iter().all(|&p| p) {
        return Err(Error::validation("target sequence has no non-padded position"));
    }
    let n = s_len + t_len;
    let mut m = Mask2d::filled(n, n, NEG);
    for i in 0..n {
        for (j, &padded) in s_pad.iter().enumerate() {
            if !padded {
                m.set(i, j, 0.0);
            }
        }
    }
    for i in 0..t_len {
        if t_pad[i] {
            m.set(s_len + i, s_len + i, 0.0);
            continue;
        }
        for j in 0..=i {
            if !t_pad[j] {
                m.set(s_len + i, s_len + j, 0.0);
            }
        }
    }
    Ok(MaskMatrix {
        s_len,
        t_len,
        matrix: m,
    })
}

/// Look-ahead mask for target self-attention. Padded rows see only
/// themselves.
pub fn build_causal_mask(t_len: usize, t_pad: &[bool]) -> Result<Mask2d> {
    if t_len == 0 {
        return Err(Error::validation("causal mask needs at least one position"));
    }
    check_pad("target", t_len, t_pad)?;
    let mut m = Mask2d::filled(t_len, t_len, NEG);
    for i in 0..t_len {
        if t_pad[i] {
            m.set(i, i, 0.0);
            continue;
        }
        for j in 0..=i {
            if !t_pad[j] {
                m.set(i, j, 0.0);
            }
        }
    }
    Ok(m)
}

/// Key-padding mask: `0` for real positions, [`NEG`] for padded ones.
pub fn build_padding_mask(s_len: usize, s_pad: &[bool]) -> Result<Vec<f64>> {
    check_pad("sequence", s_len, s_pad)?;
    Ok(s_pad.iter().map(|&p| if p { NEG } else { 0.0 }).collect())
}

/// Pad flags for a batch of ragged lengths padded to the longest.
pub fn pad_flags(lengths: &[usize], max_len: usize) -> Vec<Vec<bool>> {
    lengths
        .iter()
        .map(|&l| (0..max_len).map(|i| i >= l).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const N: f64 = NEG;

    fn rows(m: &Mask2d) -> Vec<Vec<f64>> {
        (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
    }

    #[test]
    fn stma_two_by_two() {
        let m = build_stma_mask(2, 2, &[false; 2], &[false; 2]).unwrap();
        assert_eq!(
            rows(m.matrix()),
            vec![
                vec![0., 0., N, N],
                vec![0., 0., N, N],
                vec![0., 0., 0., N],
                vec![0., 0., 0., 0.],
            ]
        );
    }

    #[test]
    fn stma_smallest() {
        let m = build_stma_mask(1, 1, &[false], &[false]).unwrap();
        assert_eq!(rows(m.matrix()), vec![vec![0., N], vec![0., 0.]]);
    }

    #[test]
    fn stma_padded_acoustic_column() {
        let m = build_stma_mask(3, 2, &[false, false, true], &[false, false]).unwrap();
        // enumerate all 25 entries against the block rules
        for i in 0..5 {
            for j in 0..5 {
                let want = if j < 3 {
                    j != 2
                } else {
                    i >= 3 && j <= i
                };
                assert_eq!(m.matrix().is_visible(i, j), want, "({i},{j})");
            }
        }
    }

    #[test]
    fn stma_rejects_bad_input() {
        assert!(build_stma_mask(2, 1, &[true, true], &[false]).is_err());
        assert!(build_stma_mask(1, 2, &[false], &[true, true]).is_err());
        assert!(build_stma_mask(2, 1, &[false], &[false]).is_err());
        assert!(build_stma_mask(0, 1, &[], &[false]).is_err());
        assert!(build_stma_mask(2, 0, &[false, false], &[]).is_ok());
    }

    #[test]
    fn causal_examples() {
        let m = build_causal_mask(3, &[false; 3]).unwrap();
        assert_eq!(
            rows(&m),
            vec![vec![0., N, N], vec![0., 0., N], vec![0., 0., 0.]]
        );
        assert_eq!(rows(&build_causal_mask(1, &[false]).unwrap()), vec![vec![0.]]);
        let m = build_causal_mask(4, &[false, false, false, true]).unwrap();
        for i in 0..3 {
            assert_eq!(m.get(i, 3), N);
        }
        assert!(m.is_visible(3, 3));
        assert!(m.rows_have_visible_entry());
        assert!(build_causal_mask(0, &[]).is_err());
    }

    #[test]
    fn padding_examples() {
        assert_eq!(build_padding_mask(2, &[false, false]).unwrap(), vec![0., 0.]);
        assert_eq!(build_padding_mask(2, &[false, true]).unwrap(), vec![0., N]);
        let flags = pad_flags(&[3, 1], 3);
        let masks: Vec<Vec<f64>> = flags
            .iter()
            .map(|f| build_padding_mask(3, f).unwrap())
            .collect();
        assert_eq!(masks, vec![vec![0., 0., 0.], vec![0., N, N]]);
        assert!(build_padding_mask(3, &[false]).is_err());
    }

    #[test]
    fn blocks_round_trip() {
        let m = build_stma_mask(3, 4, &[false, true, false], &[false, false, false, true]).unwrap();
        let again = MaskMatrix::from_blocks(
            &m.block(Block::SS),
            &m.block(Block::ST),
            &m.block(Block::TS),
            &m.block(Block::TT),
        )
        .unwrap();
        assert_eq!(again, m);
    }
}
