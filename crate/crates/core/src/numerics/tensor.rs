use std::fmt;

use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Dense row-major n-dimensional array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn fmt_shape(shape: &[usize]) -> String {
    format!("{shape:?}")
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::dim(format!(
                "shape {} holds {} elements but {} were given",
                fmt_shape(&shape),
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel(shape)).map(&mut f).collect(),
        }
    }

    /// Builds a tensor from `f64` values, converting to the element type.
    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(
            shape.to_vec(),
            values.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::dim(format!(
                "item() on tensor of shape {}",
                fmt_shape(&self.shape)
            )));
        }
        Ok(self.data[0])
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {} into {}",
                fmt_shape(&self.shape),
                fmt_shape(shape)
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }

    fn same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "{op}: shapes {} and {} differ",
                fmt_shape(&self.shape),
                fmt_shape(&other.shape)
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "mul")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|a| a * c)
    }

    pub fn relu(&self) -> Self {
        self.map(|a| if a > T::zero() { a } else { T::zero() })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Batched matrix product over the last two axes.
    ///
    /// `a` has shape `[.., m, k]` (or `[.., k, m]` when `ta`); `b` is either a
    /// shared rank-2 matrix or carries the same batch axes as `a`. `tb`
    /// transposes the last two axes of `b`.
    pub fn matmul_ex(&self, b: &Self, ta: bool, tb: bool) -> Result<Self> {
        let a = self;
        if a.rank() < 2 || b.rank() < 2 {
            return Err(Error::dim(format!(
                "matmul needs rank >= 2 operands, got {} and {}",
                fmt_shape(&a.shape),
                fmt_shape(&b.shape)
            )));
        }
        let ra = a.rank();
        let rb = b.rank();
        let (p0, p1) = (a.shape[ra - 2], a.shape[ra - 1]);
        let (q0, q1) = (b.shape[rb - 2], b.shape[rb - 1]);
        let (m, k, rsa, csa) = if ta {
            (p1, p0, 1isize, p1 as isize)
        } else {
            (p0, p1, p1 as isize, 1isize)
        };
        let (kb, n, rsb, csb) = if tb {
            (q1, q0, 1isize, q1 as isize)
        } else {
            (q0, q1, q1 as isize, 1isize)
        };
        let batch_a = &a.shape[..ra - 2];
        let shared_b = rb == 2;
        if k != kb || (!shared_b && batch_a != &b.shape[..rb - 2]) {
            return Err(Error::dim(format!(
                "matmul shape mismatch: {} x {} (ta={ta}, tb={tb})",
                fmt_shape(&a.shape),
                fmt_shape(&b.shape)
            )));
        }
        let batch = numel(batch_a);
        let mut out_shape = batch_a.to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let mut out = vec![T::zero(); batch * m * n];
        if m == 0 || n == 0 {
            return Tensor::new(out_shape, out);
        }
        if k == 0 {
            return Tensor::new(out_shape, out);
        }
        // SAFETY: every stride/extent below addresses a block inside the
        // checked operand buffers.
        unsafe {
            if shared_b && !ta {
                T::gemm(
                    batch * m,
                    k,
                    n,
                    a.data.as_ptr(),
                    rsa,
                    csa,
                    b.data.as_ptr(),
                    rsb,
                    csb,
                    T::zero(),
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            } else {
                let a_step = p0 * p1;
                let b_step = if shared_b { 0 } else { q0 * q1 };
                for i in 0..batch {
                    T::gemm(
                        m,
                        k,
                        n,
                        a.data.as_ptr().add(i * a_step),
                        rsa,
                        csa,
                        b.data.as_ptr().add(i * b_step),
                        rsb,
                        csb,
                        T::zero(),
                        out.as_mut_ptr().add(i * m * n),
                        n as isize,
                        1,
                    );
                }
            }
        }
        Tensor::new(out_shape, out)
    }

    pub fn matmul(&self, b: &Self) -> Result<Self> {
        self.matmul_ex(b, false, false)
    }

    /// Reorders axes; `axes[i]` names the input axis that becomes output axis `i`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if axes.len() != r || axes.iter().any(|&a| a >= r || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::dim(format!(
                "invalid permutation {axes:?} for shape {}",
                fmt_shape(&self.shape)
            )));
        }
        let mut in_strides = vec![1usize; r];
        for i in (0..r.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * self.shape[i + 1];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let total = self.data.len();
        let mut out = Vec::with_capacity(total);
        if total == 0 {
            return Tensor::new(out_shape, out);
        }
        let last = r - 1;
        let inner = out_shape[last];
        let inner_stride = strides[last];
        let mut idx = vec![0usize; r];
        let mut base = 0usize;
        loop {
            for j in 0..inner {
                out.push(self.data[base + j * inner_stride]);
            }
            // advance the odometer over all but the innermost axis
            let mut ax = last;
            loop {
                if ax == 0 {
                    return Tensor::new(out_shape, out);
                }
                ax -= 1;
                idx[ax] += 1;
                base += strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                base -= strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
    }

    pub fn transpose_last2(&self) -> Result<Self> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::dim("transpose needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax_lastdim(&self) -> Result<Self> {
        let d = *self
            .shape
            .last()
            .ok_or_else(|| Error::dim("softmax of a scalar"))?;
        if d == 0 {
            return Err(Error::dim("softmax over an empty last dimension"));
        }
        let mut out = self.data.clone();
        for row in out.chunks_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax_lastdim(&self) -> Result<Self> {
        let d = *self
            .shape
            .last()
            .ok_or_else(|| Error::dim("log-softmax of a scalar"))?;
        if d == 0 {
            return Err(Error::dim("log-softmax over an empty last dimension"));
        }
        let mut out = self.data.clone();
        for row in out.chunks_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let total: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + total.ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    /// Layer normalization over the last axis. Also returns the normalized
    /// input and per-row reciprocal standard deviation.
    pub fn layer_norm(&self, gain: &Self, bias: &Self, eps: T) -> Result<(Self, Self, Vec<T>)> {
        if eps <= T::zero() {
            return Err(Error::config(format!("layer norm eps must be > 0, got {eps}")));
        }
        let d = *self
            .shape
            .last()
            .ok_or_else(|| Error::dim("layer norm of a scalar"))?;
        if gain.shape != [d] || bias.shape != [d] {
            return Err(Error::dim(format!(
                "layer norm over {} needs gain/bias of shape [{d}], got {} and {}",
                fmt_shape(&self.shape),
                fmt_shape(&gain.shape),
                fmt_shape(&bias.shape)
            )));
        }
        let rows = if d == 0 { 0 } else { self.data.len() / d };
        let mut xhat = Vec::with_capacity(self.data.len());
        let mut out = Vec::with_capacity(self.data.len());
        let mut rstds = Vec::with_capacity(rows);
        let dn = T::from_usize(d).expect("dimension fits");
        for row in self.data.chunks(d.max(1)) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rstd = T::one() / (var + eps).sqrt();
            rstds.push(rstd);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * rstd;
                xhat.push(h);
                out.push(h * gain.data[j] + bias.data[j]);
            }
        }
        Ok((
            Tensor::new(self.shape.clone(), out)?,
            Tensor::new(self.shape.clone(), xhat)?,
            rstds,
        ))
    }

    /// Whether `small` broadcasts against `big` (right-aligned, axes 1 or equal).
    fn broadcast_check(big: &[usize], small: &[usize]) -> bool {
        if small.len() > big.len() {
            return false;
        }
        let off = big.len() - small.len();
        small
            .iter()
            .enumerate()
            .all(|(i, &s)| s == 1 || s == big[off + i])
    }

    /// Flat index into `small` for every element of a `big`-shaped tensor.
    fn broadcast_map(big: &[usize], small: &[usize]) -> Vec<usize> {
        let r = big.len();
        let off = r - small.len();
        let mut small_strides = vec![0usize; r];
        let mut s = 1usize;
        for i in (0..small.len()).rev() {
            small_strides[off + i] = if small[i] == 1 { 0 } else { s };
            s *= small[i];
        }
        let total = numel(big);
        let mut map = Vec::with_capacity(total);
        if total == 0 {
            return map;
        }
        let mut idx = vec![0usize; r];
        let mut cur = 0usize;
        for _ in 0..total {
            map.push(cur);
            let mut ax = r;
            while ax > 0 {
                ax -= 1;
                idx[ax] += 1;
                cur += small_strides[ax];
                if idx[ax] < big[ax] {
                    break;
                }
                cur -= small_strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        map
    }

    /// `self + other` where `other` broadcasts against `self`.
    pub fn broadcast_add(&self, other: &Self) -> Result<Self> {
        if !Self::broadcast_check(&self.shape, &other.shape) {
            return Err(Error::dim(format!(
                "cannot broadcast {} onto {}",
                fmt_shape(&other.shape),
                fmt_shape(&self.shape)
            )));
        }
        let n = other.data.len();
        if n > 0 && self.shape.ends_with(&other.shape) {
            let mut data = self.data.clone();
            for chunk in data.chunks_mut(n) {
                for (a, &b) in chunk.iter_mut().zip(&other.data) {
                    *a += b;
                }
            }
            return Tensor::new(self.shape.clone(), data);
        }
        let map = Self::broadcast_map(&self.shape, &other.shape);
        let data = self
            .data
            .iter()
            .zip(&map)
            .map(|(&a, &j)| a + other.data[j])
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    /// Sums a `self`-shaped tensor down to `target` (inverse of broadcasting).
    pub fn reduce_to(&self, target: &[usize]) -> Result<Self> {
        if !Self::broadcast_check(&self.shape, target) {
            return Err(Error::dim(format!(
                "cannot reduce {} to {}",
                fmt_shape(&self.shape),
                fmt_shape(target)
            )));
        }
        let n = numel(target);
        let mut out = vec![T::zero(); n];
        if n > 0 && self.shape.ends_with(target) {
            for chunk in self.data.chunks(n) {
                for (o, &v) in out.iter_mut().zip(chunk) {
                    *o += v;
                }
            }
        } else {
            let map = Self::broadcast_map(&self.shape, target);
            for (&v, &j) in self.data.iter().zip(&map) {
                out[j] += v;
            }
        }
        Tensor::new(target.to_vec(), out)
    }

    /// Outer size, axis extent and inner size for an axis.
    fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
        (
            numel(&shape[..axis]),
            shape[axis],
            numel(&shape[axis + 1..]),
        )
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let r = first.rank();
        if axis >= r {
            return Err(Error::dim(format!("concat axis {axis} out of range for rank {r}")));
        }
        for p in parts {
            let ok = p.rank() == r
                && (0..r).all(|i| i == axis || p.shape[i] == first.shape[i]);
            if !ok {
                return Err(Error::dim(format!(
                    "concat along axis {axis}: {} vs {}",
                    fmt_shape(&first.shape),
                    fmt_shape(&p.shape)
                )));
            }
        }
        let (outer, _, inner) = Self::split_axis(&first.shape, axis);
        let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        Tensor::new(shape, data)
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() || start + len > self.shape[axis] {
            return Err(Error::dim(format!(
                "slice axis {axis} [{start}, {}) out of range for {}",
                start + len,
                fmt_shape(&self.shape)
            )));
        }
        let (outer, extent, inner) = Self::split_axis(&self.shape, axis);
        let mut shape = self.shape.clone();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        Tensor::new(shape, data)
    }

    /// Adds `src` into the `[start, start+len)` window of `axis`.
    pub(crate) fn slice_add_assign(&mut self, axis: usize, start: usize, src: &Self) {
        let (outer, extent, inner) = Self::split_axis(&self.shape, axis);
        let len = src.shape[axis];
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            let sbase = o * len * inner;
            for j in 0..len * inner {
                self.data[base + j] += src.data[sbase + j];
            }
        }
    }
}
