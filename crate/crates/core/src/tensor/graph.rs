//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value and the inputs it was computed from. Node ids increase along the
//! tape, so a reverse scan of the node list is a valid reverse topological
//! order for [`Graph::backward`].

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, producing a `1 x cols` result.
    Rows,
    /// Reduce over columns, producing a `rows x 1` result.
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SoftmaxRows(Var),
    Sigmoid(Var),
    Relu(Var),
    Mean(Var, Axis),
    Sum(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather(Var, Vec<usize>),
    MaskedFill(Var, Vec<bool>),
    Bce(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Probabilities are clamped to `[BCE_CLIP, 1 - BCE_CLIP]` inside [`Graph::bce`].
pub const BCE_CLIP: f64 = 1e-7;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Inserts a parameter as a leaf, reusing the node if the parameter was
    /// already inserted on this graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.tensor.clone(), Op::Leaf, p.trainable);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2();
        let (k2, n) = tb.dims2();
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_raw(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2();
        let (n, k2) = tb.dims2();
        if k != k2 {
            return Err(shape_err("matmul_t", ta, tb));
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &bd[j * k..(j + 1) * k];
                out[i * n + j] = dot(ar, br);
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_raw(vec![m, n], out), Op::MatMulT(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transposed();
        let ng = self.needs(a);
        self.push(t, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims2() != tb.dims2() {
            return Err(shape_err("add", ta, tb));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_raw(shape, out), Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims2() != tb.dims2() {
            return Err(shape_err("mul", ta, tb));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_raw(shape, out), Op::Mul(a, b), ng))
    }

    /// Adds `bias` (one value per column) to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (r, c) = tx.dims2();
        if tb.numel() != c {
            return Err(shape_err("add_row", tx, tb));
        }
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(c.max(1)).take(r) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let shape = tx.shape().to_vec();
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(Tensor::from_raw(shape, out), Op::AddRow(x, bias), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v * c).collect();
        let shape = t.shape().to_vec();
        let ng = self.needs(x);
        self.push(Tensor::from_raw(shape, out), Op::Scale(x, c), ng)
    }

    /// Multiplies every element of `x` by the single element of `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        if ts.numel() != 1 {
            return Err(shape_err("mul_scalar", tx, ts));
        }
        let k = ts.data()[0];
        let out = tx.data().iter().map(|v| v * k).collect();
        let shape = tx.shape().to_vec();
        let ng = self.needs(x) || self.needs(s);
        Ok(self.push(Tensor::from_raw(shape, out), Op::MulScalar(x, s), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("concat_cols of nothing".into()))?;
        let rows = self.value(*first).dims2().0;
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.dims2().0 != rows {
                return Err(shape_err("concat_cols", self.value(*first), t));
            }
            total += t.dims2().1;
        }
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            let c = t.dims2().1;
            for r in 0..rows {
                out[r * total + offset..r * total + offset + c]
                    .copy_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_raw(vec![rows, total], out),
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2();
        if start > end || end > c {
            return Err(Error::Shape {
                op: "slice_cols",
                left: t.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for row in 0..r {
            out.extend_from_slice(&t.data()[row * c + start..row * c + end]);
        }
        let ng = self.needs(x);
        Ok(self.push(Tensor::from_raw(vec![r, w], out), Op::SliceCols(x, start), ng))
    }

    /// Row-wise softmax. A row whose entries are all `-inf` yields zeros.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (r, c) = t.dims2();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(c.max(1)).take(r) {
            softmax_in_place(row);
        }
        let shape = t.shape().to_vec();
        let ng = self.needs(x);
        self.push(Tensor::from_raw(shape, out), Op::SoftmaxRows(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| sigmoid(v)).collect();
        let shape = t.shape().to_vec();
        let ng = self.needs(x);
        self.push(Tensor::from_raw(shape, out), Op::Sigmoid(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        let ng = self.needs(x);
        self.push(Tensor::from_raw(shape, out), Op::Relu(x), ng)
    }

    pub fn mean(&mut self, x: Var, axis: Axis) -> Var {
        let t = self.value(x);
        let (r, c) = t.dims2();
        let d = t.data();
        let (shape, out) = match axis {
            Axis::Rows => {
                let mut out = vec![0.0; c];
                for row in 0..r {
                    for col in 0..c {
                        out[col] += d[row * c + col];
                    }
                }
                out.iter_mut().for_each(|v| *v /= r as f64);
                (vec![1, c], out)
            }
            Axis::Cols => {
                let out = (0..r)
                    .map(|row| d[row * c..(row + 1) * c].iter().sum::<f64>() / c as f64)
                    .collect();
                (vec![r, 1], out)
            }
        };
        let ng = self.needs(x);
        self.push(Tensor::from_raw(shape, out), Op::Mean(x, axis), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::from_raw(vec![1, 1], vec![s]), Op::Sum(x), ng)
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// per-column `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let (r, c) = tx.dims2();
        if tg.numel() != c {
            return Err(shape_err("layer_norm", tx, tg));
        }
        if tb.numel() != c {
            return Err(shape_err("layer_norm", tx, tb));
        }
        let mut normalized = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for row in 0..r {
            let xs = &tx.data()[row * c..(row + 1) * c];
            let mean = xs.iter().sum::<f64>() / c as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[row] = is;
            for col in 0..c {
                let h = (xs[col] - mean) * is;
                normalized[row * c + col] = h;
                out[row * c + col] = h * tg.data()[col] + tb.data()[col];
            }
        }
        let shape = tx.shape().to_vec();
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Tensor::from_raw(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            ng,
        ))
    }

    /// Gathers rows of `table` (embedding lookup).
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (r, c) = t.dims2();
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(Error::Shape {
                    op: "gather",
                    left: t.shape().to_vec(),
                    right: vec![i],
                });
            }
            out.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let ng = self.needs(table);
        Ok(self.push(
            Tensor::from_raw(vec![indices.len(), c], out),
            Op::Gather(table, indices.to_vec()),
            ng,
        ))
    }

    /// Replaces every element whose `mask` entry is true by `fill`.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], fill: f64) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.numel() {
            return Err(Error::Shape {
                op: "masked_fill",
                left: t.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let out = t
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { fill } else { v })
            .collect();
        let shape = t.shape().to_vec();
        let ng = self.needs(x);
        Ok(self.push(Tensor::from_raw(shape, out), Op::MaskedFill(x, mask.to_vec()), ng))
    }

    /// Summed binary cross-entropy between probabilities `p` and 0/1 `targets`.
    ///
    /// Probabilities are clamped to `[BCE_CLIP, 1 - BCE_CLIP]`; the backward
    /// rule evaluates the unclamped derivative at the clamped point.
    pub fn bce(&mut self, p: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(p);
        if targets.len() != t.numel() {
            return Err(Error::Shape {
                op: "bce",
                left: t.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let loss = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let ng = self.needs(p);
        Ok(self.push(
            Tensor::from_raw(vec![1, 1], vec![loss]),
            Op::Bce(p, targets.to_vec()),
            ng,
        ))
    }

    /// Accumulates d(loss)/d(node) into every node that needs a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            if self.nodes[idx].needs_grad {
                self.propagate(idx, &g);
            }
            self.grads[idx] = Some(g);
        }
        // Every tracked leaf reached by the sweep or not gets a gradient.
        for idx in 0..self.nodes.len() {
            if self.nodes[idx].needs_grad
                && matches!(self.nodes[idx].op, Op::Leaf)
                && self.grads[idx].is_none()
            {
                self.grads[idx] = Some(vec![0.0; self.nodes[idx].value.numel()]);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(delta.to_vec()),
        }
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        let out = &self.nodes[idx].value;
        let mut deltas: Vec<(Var, Vec<f64>)> = Vec::new();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2();
                let n = tb.dims2().1;
                if self.needs(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            da[i * k + p] = dot(gr, &tb.data()[p * n..(p + 1) * n]);
                        }
                    }
                    deltas.push((*a, da));
                }
                if self.needs(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ta.data()[i * k + p];
                            if av != 0.0 {
                                axpy(av, gr, &mut db[p * n..(p + 1) * n]);
                            }
                        }
                    }
                    deltas.push((*b, db));
                }
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2();
                let n = tb.dims2().0;
                if self.needs(*a) {
                    // dA = G · B
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            if gv != 0.0 {
                                axpy(gv, &tb.data()[j * k..(j + 1) * k], &mut da[i * k..(i + 1) * k]);
                            }
                        }
                    }
                    deltas.push((*a, da));
                }
                if self.needs(*b) {
                    // dB = Gᵀ · A
                    let mut db = vec![0.0; n * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            if gv != 0.0 {
                                axpy(gv, &ta.data()[i * k..(i + 1) * k], &mut db[j * k..(j + 1) * k]);
                            }
                        }
                    }
                    deltas.push((*b, db));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = out.dims2();
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[j * r + i] = g[i * c + j];
                    }
                }
                deltas.push((*a, da));
            }
            Op::Add(a, b) => {
                deltas.push((*a, g.to_vec()));
                deltas.push((*b, g.to_vec()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    deltas.push((*a, g.iter().zip(tb.data()).map(|(g, y)| g * y).collect()));
                }
                if self.needs(*b) {
                    deltas.push((*b, g.iter().zip(ta.data()).map(|(g, x)| g * x).collect()));
                }
            }
            Op::AddRow(x, bias) => {
                let c = out.dims2().1;
                deltas.push((*x, g.to_vec()));
                if self.needs(*bias) {
                    let mut db = vec![0.0; c];
                    for row in g.chunks(c.max(1)) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    deltas.push((*bias, db));
                }
            }
            Op::Scale(x, c) => deltas.push((*x, g.iter().map(|v| v * c).collect())),
            Op::MulScalar(x, s) => {
                let (tx, ts) = (self.value(*x), self.value(*s));
                let k = ts.data()[0];
                if self.needs(*x) {
                    deltas.push((*x, g.iter().map(|v| v * k).collect()));
                }
                if self.needs(*s) {
                    deltas.push((*s, vec![dot(g, tx.data())]));
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = out.dims2();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).dims2().1;
                    if self.needs(p) {
                        let mut dp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        deltas.push((p, dp));
                    }
                    offset += c;
                }
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.value(*x).dims2();
                let w = out.dims2().1;
                let mut dx = vec![0.0; r * c];
                for row in 0..r {
                    dx[row * c + start..row * c + start + w]
                        .copy_from_slice(&g[row * w..(row + 1) * w]);
                }
                deltas.push((*x, dx));
            }
            Op::SoftmaxRows(x) => {
                let (r, c) = out.dims2();
                let y = out.data();
                let mut dx = vec![0.0; r * c];
                for row in 0..r {
                    let ys = &y[row * c..(row + 1) * c];
                    let gs = &g[row * c..(row + 1) * c];
                    let s = dot(ys, gs);
                    for col in 0..c {
                        dx[row * c + col] = ys[col] * (gs[col] - s);
                    }
                }
                deltas.push((*x, dx));
            }
            Op::Sigmoid(x) => {
                let dx = g
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                deltas.push((*x, dx));
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                let dx = g
                    .iter()
                    .zip(tx.data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                deltas.push((*x, dx));
            }
            Op::Mean(x, axis) => {
                let (r, c) = self.value(*x).dims2();
                let mut dx = vec![0.0; r * c];
                for row in 0..r {
                    for col in 0..c {
                        dx[row * c + col] = match axis {
                            Axis::Rows => g[col] / r as f64,
                            Axis::Cols => g[row] / c as f64,
                        };
                    }
                }
                deltas.push((*x, dx));
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                deltas.push((*x, vec![g[0]; n]));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let (r, c) = out.dims2();
                let gd = self.value(*gain).data();
                if self.needs(*x) {
                    let mut dx = vec![0.0; r * c];
                    let n = c as f64;
                    for row in 0..r {
                        let h = &normalized[row * c..(row + 1) * c];
                        let gs = &g[row * c..(row + 1) * c];
                        let dh: Vec<f64> = gs.iter().zip(gd).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h = dot(&dh, h);
                        for col in 0..c {
                            dx[row * c + col] =
                                inv_std[row] / n * (n * dh[col] - sum_dh - h[col] * sum_dh_h);
                        }
                    }
                    deltas.push((*x, dx));
                }
                if self.needs(*gain) {
                    let mut dg = vec![0.0; c];
                    for row in 0..r {
                        for col in 0..c {
                            dg[col] += g[row * c + col] * normalized[row * c + col];
                        }
                    }
                    deltas.push((*gain, dg));
                }
                if self.needs(*bias) {
                    let mut db = vec![0.0; c];
                    for row in g.chunks(c.max(1)) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    deltas.push((*bias, db));
                }
            }
            Op::Gather(table, indices) => {
                let (r, c) = self.value(*table).dims2();
                let mut dt = vec![0.0; r * c];
                for (k, &i) in indices.iter().enumerate() {
                    axpy(1.0, &g[k * c..(k + 1) * c], &mut dt[i * c..(i + 1) * c]);
                }
                deltas.push((*table, dt));
            }
            Op::MaskedFill(x, mask) => {
                let dx = g
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| if m { 0.0 } else { g })
                    .collect();
                deltas.push((*x, dx));
            }
            Op::Bce(p, targets) => {
                let tp = self.value(*p);
                let dp = tp
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&p, &y)| {
                        let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
                        g[0] * (p - y) / (p * (1.0 - p))
                    })
                    .collect();
                deltas.push((*p, dp));
            }
        }
        for (v, d) in deltas {
            self.accumulate(v, &d);
        }
    }

    /// Adds the gradients of every parameter inserted on this graph into the
    /// store's gradient buffers.
    pub fn write_grads(&self, store: &mut ParamStore) {
        for (&id, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                store.accumulate_grad(id, g);
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], row);
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[0.0, 0.0]));
        let y = g.softmax_rows(x);
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &[1.0, -2.0, 0.5, 30.0, 31.0, 29.0]));
        let shifted = g.constant(t(&[2, 3], &[8.0, 5.0, 7.5, 30.0, 31.0, 29.0]));
        let a = g.softmax_rows(x);
        let b = g.softmax_rows(shifted);
        for row in g.value(a).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for (u, v) in g.value(a).data().iter().zip(g.value(b).data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn fully_masked_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[f64::NEG_INFINITY, f64::NEG_INFINITY]));
        let y = g.softmax_rows(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::identity(3));
        let x = g.constant(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = g.matmul(i, x).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn mean_over_rows() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1.0, 1.0, 3.0, 3.0]));
        let m = g.mean(x, Axis::Rows);
        assert_eq!(g.value(m).data(), &[2.0, 2.0]);
        assert_eq!(g.value(m).shape(), &[1, 2]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn sum_loss_gives_ones() {
        let mut g = Graph::new();
        let x = g.variable(t(&[2, 2], &[0.3, -1.0, 2.0, 5.0]));
        let l = g.sum(x);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn sigmoid_at_zero_has_quarter_slope() {
        let mut g = Graph::new();
        let w = g.variable(Tensor::zeros(&[1, 3]));
        let x = g.constant(t(&[3, 1], &[1.0, -2.0, 4.0]));
        let z = g.matmul(w, x).unwrap();
        let s = g.sigmoid(z);
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[0.25, -0.5, 1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::zeros(&[2, 1]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn masked_fill_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.variable(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let m = g.masked_fill(x, &[false, true, false], f64::NEG_INFINITY).unwrap();
        let s = g.softmax_rows(m);
        let w = g.constant(t(&[3, 1], &[1.0, 5.0, -1.0]));
        let o = g.matmul(s, w).unwrap();
        g.backward(o).unwrap();
        assert_eq!(g.grad(x).unwrap()[1], 0.0);
        assert_eq!(g.value(s).data()[1], 0.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let x = g.variable(t(&[1, 2], &[3.0, 4.0]));
        let p = g.mul(c, x).unwrap();
        let l = g.sum(p);
        g.backward(l).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap(), &[1.0, 2.0]);
    }
}
