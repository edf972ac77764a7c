//! Reverse-mode automatic differentiation over rank-2 tensors.
//!
//! A [`Graph`] records every operation of one forward pass as a node; calling
//! [`Graph::backward`] walks the nodes in reverse and produces a gradient for
//! each node that depends on a trainable parameter. Graphs are built fresh
//! for each evaluation and dropped afterwards.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::tensor::{gemm, softmax_in_place};
use crate::numerics::{ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddTiled(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Abs(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Transpose(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    StraightThrough(Var),
    MaskMul(Var, Rc<Vec<f64>>),
    MeanAll(Var),
    SumAll(Var),
    SegmentMean(Var, Rc<Vec<(usize, usize)>>),
    MseMean(Var, Var),
    RowSqDistMean(Var, Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    BceWithLogits(Var, Rc<Vec<f64>>),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Rc<Vec<usize>>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dim_err(what: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()))
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf node holding the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    /// Stop-gradient: same value, no backward path.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn zip_same(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(what, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_raw(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `x[r, :] + bias` for every row `r`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let cols = tx.cols();
        if tb.len() != cols {
            return Err(dim_err("add_row", tx, tb));
        }
        let mut value = tx.clone();
        for r in 0..value.rows() {
            for (v, b) in value.row_mut(r).iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, Op::AddRow(x, bias), rg))
    }

    /// `x[r, :] + tile[r mod T, :]`; broadcasts a per-position table over
    /// stacked sequences.
    pub fn add_tiled(&mut self, x: Var, tile: Var) -> Result<Var> {
        let (tx, tt) = (self.value(x), self.value(tile));
        let (rows, cols) = as_matrix(tx);
        let (trows, tcols) = as_matrix(tt);
        if tcols != cols || trows == 0 || rows % trows != 0 {
            return Err(dim_err("add_tiled", tx, tt));
        }
        let mut value = tx.clone();
        for r in 0..rows {
            for (v, b) in value.row_mut(r).iter_mut().zip(tt.row(r % trows)) {
                *v += b;
            }
        }
        let rg = self.rg(&[x, tile]);
        Ok(self.push(value, Op::AddTiled(x, tile), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| {
            let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
            0.5 * v * (1.0 + t)
        });
        let rg = self.rg(&[x]);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::abs);
        let rg = self.rg(&[x]);
        self.push(value, Op::Abs(x), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        let rg = self.rg(&[x]);
        self.push(value, Op::SoftmaxRows(x), rg)
    }

    /// Normalizes each row to zero mean and unit population variance, then
    /// applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = as_matrix(tx);
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.len() != cols || tb.len() != cols {
            return Err(dim_err("layer_norm gain/bias", tx, tg));
        }
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..cols {
                let h = (row[j] - mean) * is;
                xhat[r * cols + j] = h;
                out[r * cols + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let value = Tensor::from_raw(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    /// Row lookup `table[indices[i], :]`.
    pub fn gather_rows(&mut self, table: Var, indices: Rc<Vec<usize>>) -> Result<Var> {
        let tt = self.value(table);
        let (rows, cols) = as_matrix(tt);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Dimension(format!(
                "gather index {bad} out of range for {rows} rows"
            )));
        }
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices.iter() {
            out.extend_from_slice(tt.row(i));
        }
        let value = Tensor::from_raw(vec![indices.len(), cols], out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(value, Op::GatherRows(table, indices), rg))
    }

    /// Straight-through estimator: forward value of `forward`, backward
    /// gradient copied unchanged onto `through`.
    pub fn straight_through(&mut self, through: Var, forward: Var) -> Result<Var> {
        let (tt, tf) = (self.value(through), self.value(forward));
        if tt.shape() != tf.shape() {
            return Err(dim_err("straight_through", tt, tf));
        }
        let value = tf.clone();
        let rg = self.rg(&[through]);
        Ok(self.push(value, Op::StraightThrough(through), rg))
    }

    /// Elementwise product with a fixed mask (dropout).
    pub fn mask_mul(&mut self, x: Var, mask: Rc<Vec<f64>>) -> Result<Var> {
        let tx = self.value(x);
        if tx.len() != mask.len() {
            return Err(Error::Dimension("mask length mismatch".into()));
        }
        let data = tx.data().iter().zip(mask.iter()).map(|(a, m)| a * m).collect();
        let value = Tensor::from_raw(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::MaskMul(x, mask), rg))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(&[x]);
        self.push(value, Op::MeanAll(x), rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::SumAll(x), rg)
    }

    /// Mean of contiguous row segments `(start, len)`, one output row each.
    pub fn segment_mean(&mut self, x: Var, segments: Rc<Vec<(usize, usize)>>) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = as_matrix(tx);
        let mut out = vec![0.0; segments.len() * cols];
        for (s, &(start, len)) in segments.iter().enumerate() {
            if len == 0 || start + len > rows {
                return Err(Error::Dimension(format!(
                    "segment ({start}, {len}) out of range for {rows} rows"
                )));
            }
            let dst = &mut out[s * cols..(s + 1) * cols];
            for r in start..start + len {
                for (d, v) in dst.iter_mut().zip(tx.row(r)) {
                    *d += v;
                }
            }
            dst.iter_mut().for_each(|d| *d /= len as f64);
        }
        let value = Tensor::from_raw(vec![segments.len(), cols], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SegmentMean(x, segments), rg))
    }

    /// Mean over all entries of `(a - b)^2`.
    pub fn mse_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(dim_err("mse_mean", ta, tb));
        }
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let value = Tensor::scalar(s / ta.len() as f64);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MseMean(a, b), rg))
    }

    /// Mean over rows of the squared Euclidean row distance `||a_r - b_r||^2`.
    pub fn row_sq_dist_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err("row_sq_dist_mean", ta, tb));
        }
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let value = Tensor::scalar(s / ta.rows() as f64);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::RowSqDistMean(a, b), rg))
    }

    /// Multi-head scaled dot-product attention over stacked sequences.
    ///
    /// `q`, `k`, `v` are `R×D` with `R = sequences · seq_len`; rows of one
    /// sequence only attend to rows of the same sequence.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, seq_len: usize, heads: usize) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.shape() != tk.shape() || tq.shape() != tv.shape() || tq.rank() != 2 {
            return Err(dim_err("attention", tq, tk));
        }
        let (rows, d) = (tq.shape()[0], tq.shape()[1]);
        if seq_len == 0 || rows % seq_len != 0 || heads == 0 || d % heads != 0 {
            return Err(Error::Dimension(format!(
                "attention: {rows} rows, seq_len {seq_len}, width {d}, heads {heads}"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let seqs = rows / seq_len;
        let n = seq_len;
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        let mut probs = vec![0.0; seqs * heads * n * n];
        let mut out = vec![0.0; rows * d];
        for s in 0..seqs {
            let base = s * n;
            for h in 0..heads {
                let off = h * dh;
                let p = &mut probs[(s * heads + h) * n * n..(s * heads + h + 1) * n * n];
                for a in 0..n {
                    let qa = &qd[(base + a) * d + off..(base + a) * d + off + dh];
                    let prow = &mut p[a * n..(a + 1) * n];
                    for (b, pv) in prow.iter_mut().enumerate() {
                        let kb = &kd[(base + b) * d + off..(base + b) * d + off + dh];
                        *pv = qa.iter().zip(kb).map(|(x, y)| x * y).sum::<f64>() * scale;
                    }
                    softmax_in_place(prow);
                    let o = &mut out[(base + a) * d + off..(base + a) * d + off + dh];
                    for (b, pv) in prow.iter().enumerate() {
                        let vb = &vd[(base + b) * d + off..(base + b) * d + off + dh];
                        for (oo, vv) in o.iter_mut().zip(vb) {
                            *oo += pv * vv;
                        }
                    }
                }
            }
        }
        let value = Tensor::from_raw(vec![rows, d], out)?;
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                seq_len,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy on `B×1` logits against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Rc<Vec<f64>>) -> Result<Var> {
        let tz = self.value(logits);
        if tz.len() != targets.len() || targets.is_empty() {
            return Err(Error::Dimension("bce: logits/targets mismatch".into()));
        }
        let total: f64 = tz
            .data()
            .iter()
            .zip(targets.iter())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let value = Tensor::scalar(total / targets.len() as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(value, Op::BceWithLogits(logits, targets), rg))
    }

    /// Mean softmax cross-entropy on `B×K` logits against class ids.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Rc<Vec<usize>>) -> Result<Var> {
        let tz = self.value(logits);
        let (rows, k) = as_matrix(tz);
        if rows != targets.len() || targets.iter().any(|&t| t >= k) {
            return Err(Error::Dimension("cross-entropy: logits/targets mismatch".into()));
        }
        let mut probs = tz.data().to_vec();
        let mut total = 0.0;
        for r in 0..rows {
            let row = &tz.data()[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            total += lse - row[targets[r]];
            softmax_in_place(&mut probs[r * k..(r + 1) * k]);
        }
        let value = Tensor::scalar(total / rows as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            },
            rg,
        ))
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar output, got {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut Tensor> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(node.value.shape())))
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if let Some(da) = self.slot(grads, *a) {
                    gemm(m, n, k, gd, false, tb.data(), true, da.data_mut(), true);
                }
                if let Some(db) = self.slot(grads, *b) {
                    gemm(k, m, n, ta.data(), true, gd, false, db.data_mut(), true);
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    da.add_assign(g);
                }
                if let Some(db) = self.slot(grads, *b) {
                    db.add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    da.add_assign(g);
                }
                if let Some(db) = self.slot(grads, *b) {
                    for (d, x) in db.data_mut().iter_mut().zip(gd) {
                        *d -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, x), y) in da.data_mut().iter_mut().zip(gd).zip(tb.data()) {
                        *d += x * y;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, x), y) in db.data_mut().iter_mut().zip(gd).zip(ta.data()) {
                        *d += x * y;
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.add_assign(g);
                }
                if let Some(db) = self.slot(grads, *bias) {
                    let cols = g.cols();
                    for r in 0..g.rows() {
                        for (d, v) in db.data_mut().iter_mut().zip(&gd[r * cols..(r + 1) * cols]) {
                            *d += v;
                        }
                    }
                }
            }
            Op::AddTiled(x, tile) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.add_assign(g);
                }
                if let Some(dt) = self.slot(grads, *tile) {
                    let cols = g.cols();
                    let trows = dt.rows();
                    for r in 0..g.rows() {
                        let dst = dt.row_mut(r % trows);
                        for (d, v) in dst.iter_mut().zip(&gd[r * cols..(r + 1) * cols]) {
                            *d += v;
                        }
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for (d, v) in dx.data_mut().iter_mut().zip(gd) {
                        *d += c * v;
                    }
                }
            }
            Op::Gelu(x) => {
                let tx = self.value(*x);
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, v), &u) in dx.data_mut().iter_mut().zip(gd).zip(tx.data()) {
                        let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u);
                        *d += v * (0.5 * (1.0 + t) + 0.5 * u * dt);
                    }
                }
            }
            Op::Abs(x) => {
                let tx = self.value(*x);
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, v), &u) in dx.data_mut().iter_mut().zip(gd).zip(tx.data()) {
                        let s = if u > 0.0 {
                            1.0
                        } else if u < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        *d += v * s;
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                if let Some(dx) = self.slot(grads, *x) {
                    let cols = y.cols();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &gd[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, yv), gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *d += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let cols = g.cols();
                let rows = g.rows();
                let tg = self.value(*gain);
                if let Some(dg) = self.slot(grads, *gain) {
                    for r in 0..rows {
                        for j in 0..cols {
                            dg.data_mut()[j] += gd[r * cols + j] * xhat[r * cols + j];
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *bias) {
                    for r in 0..rows {
                        for j in 0..cols {
                            db.data_mut()[j] += gd[r * cols + j];
                        }
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            dxhat[j] = gd[r * cols + j] * tg.data()[j];
                        }
                        let m1 = dxhat.iter().sum::<f64>() / cols as f64;
                        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d += inv_std[r] * (dxhat[j] - m1 - xh[j] * m2);
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    let gt = g.transpose().expect("rank-2 gradient");
                    dx.add_assign(&gt);
                }
            }
            Op::GatherRows(table, indices) => {
                if let Some(dt) = self.slot(grads, *table) {
                    let cols = g.cols();
                    for (i, &row) in indices.iter().enumerate() {
                        for (d, v) in dt.row_mut(row).iter_mut().zip(&gd[i * cols..(i + 1) * cols]) {
                            *d += v;
                        }
                    }
                }
            }
            Op::StraightThrough(through) => {
                if let Some(dt) = self.slot(grads, *through) {
                    dt.add_assign(g);
                }
            }
            Op::MaskMul(x, mask) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, v), m) in dx.data_mut().iter_mut().zip(gd).zip(mask.iter()) {
                        *d += v * m;
                    }
                }
            }
            Op::MeanAll(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    let s = gd[0] / dx.len() as f64;
                    dx.data_mut().iter_mut().for_each(|d| *d += s);
                }
            }
            Op::SumAll(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.data_mut().iter_mut().for_each(|d| *d += gd[0]);
                }
            }
            Op::SegmentMean(x, segments) => {
                if let Some(dx) = self.slot(grads, *x) {
                    let cols = g.cols();
                    for (s, &(start, len)) in segments.iter().enumerate() {
                        let gs = &gd[s * cols..(s + 1) * cols];
                        for r in start..start + len {
                            for (d, v) in dx.row_mut(r).iter_mut().zip(gs) {
                                *d += v / len as f64;
                            }
                        }
                    }
                }
            }
            Op::MseMean(a, b) | Op::RowSqDistMean(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let denom = match node.op {
                    Op::MseMean(..) => ta.len(),
                    _ => ta.rows(),
                } as f64;
                let s = 2.0 * gd[0] / denom;
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, x), y) in da.data_mut().iter_mut().zip(ta.data()).zip(tb.data()) {
                        *d += s * (x - y);
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, x), y) in db.data_mut().iter_mut().zip(ta.data()).zip(tb.data()) {
                        *d -= s * (x - y);
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                seq_len,
                heads,
                probs,
            } => self.attention_backward(g, *q, *k, *v, *seq_len, *heads, probs, grads),
            Op::BceWithLogits(logits, targets) => {
                let tz = self.value(*logits);
                if let Some(dz) = self.slot(grads, *logits) {
                    let s = gd[0] / targets.len() as f64;
                    for ((d, &z), &y) in dz.data_mut().iter_mut().zip(tz.data()).zip(targets.iter()) {
                        let sig = if z >= 0.0 {
                            1.0 / (1.0 + (-z).exp())
                        } else {
                            let e = z.exp();
                            e / (1.0 + e)
                        };
                        *d += s * (sig - y);
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if let Some(dz) = self.slot(grads, *logits) {
                    let k = dz.cols();
                    let s = gd[0] / targets.len() as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            dz.data_mut()[r * k + j] += s * (probs[r * k + j] - onehot);
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &Tensor,
        q: Var,
        k: Var,
        v: Var,
        n: usize,
        heads: usize,
        probs: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (rows, d) = (tq.shape()[0], tq.shape()[1]);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let seqs = rows / n;
        let gd = g.data();
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        let mut dq = vec![0.0; rows * d];
        let mut dk = vec![0.0; rows * d];
        let mut dv = vec![0.0; rows * d];
        let mut ds = vec![0.0; n * n];
        for s in 0..seqs {
            let base = s * n;
            for h in 0..heads {
                let off = h * dh;
                let p = &probs[(s * heads + h) * n * n..(s * heads + h + 1) * n * n];
                let at = |r: usize| (base + r) * d + off;
                for a in 0..n {
                    let ga = &gd[at(a)..at(a) + dh];
                    let prow = &p[a * n..(a + 1) * n];
                    let mut dot = 0.0;
                    for b in 0..n {
                        let vb = &vd[at(b)..at(b) + dh];
                        let dp: f64 = ga.iter().zip(vb).map(|(x, y)| x * y).sum();
                        ds[a * n + b] = dp;
                        dot += prow[b] * dp;
                        for (dvv, gg) in dv[at(b)..at(b) + dh].iter_mut().zip(ga) {
                            *dvv += prow[b] * gg;
                        }
                    }
                    for b in 0..n {
                        ds[a * n + b] = prow[b] * (ds[a * n + b] - dot) * scale;
                    }
                }
                for a in 0..n {
                    for b in 0..n {
                        let w = ds[a * n + b];
                        if w == 0.0 {
                            continue;
                        }
                        for t in 0..dh {
                            dq[at(a) + t] += w * kd[at(b) + t];
                            dk[at(b) + t] += w * qd[at(a) + t];
                        }
                    }
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(slot) = self.slot(grads, var) {
                for (s, b) in slot.data_mut().iter_mut().zip(buf) {
                    *s += b;
                }
            }
        }
    }
}

/// Per-node gradients from one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the output with respect to `v`, if `v` lies on a path to
    /// a trainable parameter.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds every parameter-leaf gradient into the store's accumulators.
    pub fn accumulate_into(&self, graph: &Graph, store: &mut ParamStore) {
        for (node, grad) in graph.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, grad) {
                let p = store.get_mut(*id);
                if p.trainable {
                    p.grad.add_assign(g);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln(x: &[f64], gain: f64, bias: f64) -> Vec<f64> {
        let mut g = Graph::new();
        let n = x.len();
        let vx = g.constant(Tensor::new(vec![1, n], x.to_vec()).unwrap());
        let vg = g.constant(Tensor::full(&[n], gain));
        let vb = g.constant(Tensor::full(&[n], bias));
        let y = g.layer_norm(vx, vg, vb, 1e-12).unwrap();
        g.value(y).data().to_vec()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9)
    }

    #[test]
    fn layer_norm_examples() {
        assert!(close(&ln(&[1.0, 1.0, 1.0], 1.0, 0.0), &[0.0, 0.0, 0.0]));
        assert!(close(&ln(&[0.0, 2.0], 1.0, 0.0), &[-1.0, 1.0]));
        assert!(close(&ln(&[0.0, 2.0], 2.0, 1.0), &[-1.0, 3.0]));
    }

    #[test]
    fn layer_norm_rejects_wrong_gain() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let gain = g.constant(Tensor::zeros(&[2]));
        assert!(g.layer_norm(x, gain, gain, 1e-5).is_err());
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn attention_is_per_sequence() {
        // Two sequences of length 2: changing the second must not move the first.
        let mut g = Graph::new();
        let base: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let a = g.constant(Tensor::new(vec![4, 2], base.clone()).unwrap());
        let o1 = g.attention(a, a, a, 2, 1).unwrap();
        let mut other = base;
        other[4..].iter_mut().for_each(|v| *v *= -3.0);
        let b = g.constant(Tensor::new(vec![4, 2], other).unwrap());
        let o2 = g.attention(b, b, b, 2, 1).unwrap();
        assert_eq!(g.value(o1).data()[..4], g.value(o2).data()[..4]);
    }
}
