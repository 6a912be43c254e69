//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its forward value and enough
//! saved state to replay the chain rule. Parameters are referenced from a
//! borrowed [`ParamStore`] rather than copied; [`Tape::backward`] returns a
//! [`Gradients`] table which is then added into the store, so the store's
//! gradients accumulate across calls until [`ParamStore::zero_grads`].

use std::collections::HashMap;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'p, T> {
    Owned(Tensor<T>),
    Borrowed(&'p Tensor<T>),
}

enum Op<T> {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    BroadcastAdd(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor<T>,
        rstd: Vec<T>,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice { a: Var, axis: usize, start: usize },
    Gather { table: Var, ids: Vec<usize> },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        probs: Tensor<T>,
        targets: Vec<usize>,
        weights: Vec<T>,
        smoothing: T,
    },
}

struct Node<'p, T> {
    value: Value<'p, T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording context for one forward pass.
pub struct Tape<'p, T> {
    store: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<'p, T>>,
    param_vars: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl<'p, T: Scalar> Tape<'p, T> {
    /// A tape that records gradients for parameters of `store`.
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Tape {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A tape that evaluates values only; `backward` is unavailable.
    pub fn inference(store: &'p ParamStore<T>) -> Self {
        Tape {
            grad_enabled: false,
            ..Tape::new(store)
        }
    }

    /// A tape with no parameter store (leaves only).
    pub fn detached() -> Self {
        Tape {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grad_enabled: true,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad =
            self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that does not require gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A borrowed leaf that does not require gradients (e.g. cached keys).
    pub fn constant_ref(&mut self, value: &'p Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Leaf,
            requires_grad: self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// The recorded leaf for a stored parameter (created once per tape).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.store.expect("tape has no parameter store");
        let p = store.get(id);
        self.nodes.push(Node {
            value: Value::Borrowed(&p.value),
            op: Op::Param,
            requires_grad: self.grad_enabled && p.requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, false)
    }

    pub fn matmul_ex(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let out = self.value(a).matmul_ex(self.value(b), ta, tb)?;
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// `a + b` with `b` broadcast against `a`'s shape.
    pub fn broadcast_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).broadcast_add(self.value(b))?;
        Ok(self.push(out, Op::BroadcastAdd(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).relu();
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).softmax_lastdim()?;
        Ok(self.push(out, Op::Softmax(a), &[a]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (out, xhat, rstd) =
            self.value(x)
                .layer_norm(self.value(gain), self.value(bias), eps)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(a).permute(axes)?;
        Ok(self.push(out, Op::Permute(a, axes.to_vec()), &[a]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat(&values, axis)?;
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), parts))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = self.value(a).slice(axis, start, len)?;
        Ok(self.push(out, Op::Slice { a, axis, start }, &[a]))
    }

    /// Rows of a rank-2 `table` selected by `ids`, shaped `[ids.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::dim(format!(
                "gather needs a rank-2 table, got {:?}",
                t.shape()
            )));
        }
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= rows {
                return Err(Error::validation(format!(
                    "row id {i} out of range for table with {rows} rows"
                )));
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Inverted dropout with keep-probability `1 - rate`.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut impl Rng) -> Result<Var> {
        if rate <= 0.0 || !self.grad_enabled {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let scale = T::from_f64_lossy(1.0 / keep);
        let mask = Tensor::from_fn(self.shape(a), |_| {
            if rng.gen::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        });
        let m = self.constant(mask);
        self.mul(a, m)
    }

    /// Weighted label-smoothed cross-entropy, `sum_i w_i * CE_i`.
    ///
    /// `logits` is `[.., V]` with one row per entry of `targets`/`weights`.
    /// The smoothed target puts `1 - s + s/V` on the gold id and `s/V`
    /// elsewhere.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[T],
        smoothing: T,
    ) -> Result<Var> {
        let x = self.value(logits);
        let v = *x.shape().last().ok_or_else(|| Error::dim("logits are a scalar"))?;
        let rows = if v == 0 { 0 } else { x.numel() / v };
        if targets.len() != rows || weights.len() != rows {
            return Err(Error::dim(format!(
                "cross entropy over {rows} rows got {} targets and {} weights",
                targets.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::validation(format!(
                "target id {bad} out of range for vocabulary of {v}"
            )));
        }
        let logp = x.log_softmax_lastdim()?;
        let vn = T::from_usize(v).expect("vocab fits");
        let off = smoothing / vn;
        let on = T::one() - smoothing + off;
        let mut loss = T::zero();
        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if w == T::zero() {
                continue;
            }
            let row = logp.row(r);
            let mut ce = -on * row[t];
            if smoothing != T::zero() {
                let rest: T = row.iter().copied().sum::<T>() - row[t];
                ce -= off * rest;
            }
            loss += w * ce;
        }
        let probs = logp.map(|l| l.exp());
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                smoothing,
            },
            &[logits],
        ))
    }

    /// Propagates from a scalar `loss` to every node that requires gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.grad_enabled {
            return Err(Error::Contract("backward on an inference tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let params = self
            .param_vars
            .iter()
            .filter_map(|(&id, &v)| grads[v.0].take().map(|g| (id, g)))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                let av = self.value(a);
                let bv = self.value(b);
                if self.needs(a) {
                    // d op(A) = G op(B)^T
                    let d_op_a = g.matmul_ex(bv, false, !tb)?;
                    let da = if ta { d_op_a.transpose_last2()? } else { d_op_a };
                    self.accumulate(grads, a, da)?;
                }
                if self.needs(b) {
                    // d op(B) = op(A)^T G
                    let d_op_b = if bv.rank() == 2 && av.rank() > 2 {
                        if ta {
                            av.matmul(g)?.reduce_to(&[av.shape()[av.rank() - 2], g.shape()[g.rank() - 1]])?
                        } else {
                            let k = av.shape()[av.rank() - 1];
                            let n = g.shape()[g.rank() - 1];
                            let a2 = av.clone().reshape(&[av.numel() / k, k])?;
                            let g2 = g.clone().reshape(&[g.numel() / n, n])?;
                            a2.matmul_ex(&g2, true, false)?
                        }
                    } else {
                        av.matmul_ex(g, !ta, false)?
                    };
                    let db = if tb { d_op_b.transpose_last2()? } else { d_op_b };
                    self.accumulate(grads, b, db)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.scale(-T::one()))?;
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.mul(self.value(*b))?)?;
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.mul(self.value(*a))?)?;
                }
            }
            Op::BroadcastAdd(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.needs(*b) {
                    let target = self.shape(*b).to_vec();
                    self.accumulate(grads, *b, g.reduce_to(&target)?)?;
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c))?,
            Op::Relu(a) => {
                let y = self.value(Var(i));
                let d = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &yv)| if yv > T::zero() { gv } else { T::zero() })
                        .collect(),
                )?;
                self.accumulate(grads, *a, d)?;
            }
            Op::Softmax(a) => {
                let y = self.value(Var(i));
                let d = *y.shape().last().expect("rank >= 1");
                let mut out = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(d).zip(g.data().chunks(d)) {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    out.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                }
                self.accumulate(grads, *a, Tensor::new(y.shape().to_vec(), out)?)?;
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gain);
                let d = gv.numel();
                if self.needs(*x) {
                    let dn = T::from_usize(d).expect("dimension fits");
                    let mut out = Vec::with_capacity(xhat.numel());
                    for ((hr, gr), &rs) in xhat.data().chunks(d).zip(g.data().chunks(d)).zip(rstd) {
                        let dxhat: Vec<T> = gr.iter().zip(gv.data()).map(|(&a, &b)| a * b).collect();
                        let s1: T = dxhat.iter().copied().sum();
                        let s2: T = dxhat.iter().zip(hr).map(|(&a, &b)| a * b).sum();
                        out.extend(
                            dxhat
                                .iter()
                                .zip(hr)
                                .map(|(&dh, &h)| rs / dn * (dn * dh - s1 - h * s2)),
                        );
                    }
                    self.accumulate(grads, *x, Tensor::new(xhat.shape().to_vec(), out)?)?;
                }
                if self.needs(*gain) {
                    let dg = g.mul(xhat)?.reduce_to(&[d])?;
                    self.accumulate(grads, *gain, dg)?;
                }
                if self.needs(*bias) {
                    self.accumulate(grads, *bias, g.reduce_to(&[d])?)?;
                }
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, g.clone().reshape(&shape)?)?;
            }
            Op::Permute(a, axes) => {
                let mut inv = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inv[ax] = i;
                }
                self.accumulate(grads, *a, g.permute(&inv)?)?;
            }
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if self.needs(p) {
                        self.accumulate(grads, p, g.slice(*axis, start, len)?)?;
                    }
                    start += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let mut d = Tensor::zeros(self.shape(*a));
                d.slice_add_assign(*axis, *start, g);
                self.accumulate(grads, *a, d)?;
            }
            Op::Gather { table, ids } => {
                let shape = self.shape(*table).to_vec();
                let d = shape[1];
                let mut out = Tensor::zeros(&shape);
                {
                    let od = out.data_mut();
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            od[id * d + j] += g.data()[r * d + j];
                        }
                    }
                }
                self.accumulate(grads, *table, out)?;
            }
            Op::Sum(a) => {
                let s = g.item()?;
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), s))?;
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                weights,
                smoothing,
            } => {
                let s = g.item()?;
                let v = *probs.shape().last().expect("rank >= 1");
                let vn = T::from_usize(v).expect("vocab fits");
                let off = *smoothing / vn;
                let on = T::one() - *smoothing + off;
                let mut out = probs.clone();
                for (row, (&t, &w)) in out.data_mut().chunks_mut(v).zip(targets.iter().zip(weights)) {
                    let scale = s * w;
                    for (j, p) in row.iter_mut().enumerate() {
                        let q = if j == t { on } else { off };
                        *p = scale * (*p - q);
                    }
                }
                self.accumulate(grads, *logits, out)?;
            }
        }
        Ok(())
    }
}

/// Gradients produced by one [`Tape::backward`] call.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a recorded (non-parameter) value.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(id, g)| (*id, g))
    }

    /// Adds these gradients into the store's accumulated `grad` fields.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (id, g) in &self.params {
            let p = store.get_mut(*id);
            if p.requires_grad {
                p.grad.add_assign(g)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_and_square_gradients() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
        let grads = {
            let mut tape = Tape::new(&store);
            let xv = tape.param(x);
            let s = tape.sum(xv);
            tape.backward(s).unwrap()
        };
        grads.accumulate_into(&mut store).unwrap();
        assert_eq!(store.get(x).grad.data(), &[1.0, 1.0, 1.0]);

        store.zero_grads();
        let grads = {
            let mut tape = Tape::new(&store);
            let xv = tape.param(x);
            let sq = tape.mul(xv, xv).unwrap();
            let s = tape.sum(sq);
            tape.backward(s).unwrap()
        };
        grads.accumulate_into(&mut store).unwrap();
        assert_eq!(store.get(x).grad.data(), &[2.0, -4.0, 1.0]);

        // a second backward without zeroing accumulates
        grads.accumulate_into(&mut store).unwrap();
        assert_eq!(store.get(x).grad.data(), &[4.0, -8.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::detached();
        let x = tape.input(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_is_linear() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::from_f64(&[2, 2], &[0.3, -0.7, 1.1, 0.2]).unwrap());
        let w = Tensor::from_f64(&[2, 2], &[0.5, -1.0, 2.0, 0.25]).unwrap();
        let grad_of = |a: f64, b: f64| {
            let mut tape = Tape::new(&store);
            let xv = tape.param(x);
            let wv = tape.constant(w.clone());
            let f = tape.matmul(xv, wv).unwrap();
            let f = tape.sum(f);
            let sm = tape.softmax_lastdim(xv).unwrap();
            let g = tape.mul(sm, sm).unwrap();
            let g = tape.sum(g);
            let fa = tape.scale(f, a);
            let gb = tape.scale(g, b);
            let total = tape.add(fa, gb).unwrap();
            tape.backward(total).unwrap().param(x).unwrap().clone()
        };
        let combined = grad_of(1.5, -0.75);
        let gf = grad_of(1.0, 0.0);
        let gg = grad_of(0.0, 1.0);
        for i in 0..4 {
            let want = 1.5 * gf.data()[i] - 0.75 * gg.data()[i];
            assert!((combined.data()[i] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_target() {
        let mut tape = Tape::<f64>::detached();
        let logits = tape.input(Tensor::from_f64(&[2, 3], &[0.2, -1.0, 0.5, 1.5, 0.0, -0.3]).unwrap());
        let s = 0.1;
        let loss = tape.cross_entropy(logits, &[2, 0], &[0.5, 0.5], s).unwrap();
        let g = tape.backward(loss).unwrap();
        let p = tape.value(logits).softmax_lastdim().unwrap();
        let dl = g.wrt(logits).unwrap();
        for r in 0..2 {
            let t = [2, 0][r];
            for j in 0..3 {
                let q = if j == t { 1.0 - s + s / 3.0 } else { s / 3.0 };
                let want = 0.5 * (p.data()[r * 3 + j] - q);
                assert!((dl.data()[r * 3 + j] - want).abs() < 1e-12);
            }
        }
    }
}
