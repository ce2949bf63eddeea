//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Every operator call appends a node holding its forward value. Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates exact
//! vector-Jacobian products into every node that depends on a leaf created
//! with [`Graph::param`].
//!
//! Sequence tensors are laid out `[batch, time, channels]` (rank 2 is read as
//! a single batch). Row-wise operators (`linear`, `softmax`, the losses) view
//! any tensor as `[rows, last_dim]`.

use super::Tensor;
use crate::error::{Error, Result};

/// Handle of a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Conv1d { x: NodeId, w: NodeId, b: NodeId, cols: Vec<f64> },
    Relu(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Concat(Vec<NodeId>),
    Slice { x: NodeId, start: usize },
    TemporalMean(NodeId),
    BceWithLogits { logits: NodeId, targets: Vec<f64> },
    CeWithLogits { logits: NodeId, targets: Vec<usize> },
    GradReverse { x: NodeId, lambda: f64 },
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Reshape(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Constant leaf; no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Copies the value of `id` into a fresh constant leaf.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.value(id).clone();
        self.input(v)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &str, value: Tensor, op: Op, rg: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        Ok(self.push(value, op, rg))
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    /// `x · w + b` over the last dimension; `w` is `[in, out]`, `b` is `[out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.shape().len() != 2 || bv.shape() != [wv.shape()[1]] {
            return Err(Error::Shape(format!(
                "linear weight {:?} / bias {:?}",
                wv.shape(),
                bv.shape()
            )));
        }
        let (din, dout) = (wv.shape()[0], wv.shape()[1]);
        if xv.last_dim() != din || xv.shape().is_empty() {
            return Err(Error::Shape(format!(
                "linear input {:?} against weight {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let rows = xv.rows();
        let mut out = vec![0.0; rows * dout];
        for r in 0..rows {
            out[r * dout..(r + 1) * dout].copy_from_slice(bv.data());
        }
        gemm(rows, din, dout, xv.data(), false, wv.data(), false, &mut out, true);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let rg = self.rg(&[x, w, b]);
        self.push_checked("linear", Tensor::new(shape, out)?, Op::Linear { x, w, b }, rg)
    }

    /// Stride-1 convolution along time with zero "same" padding.
    ///
    /// `x` is `[B, T, C_in]` (or `[T, C_in]`), `w` is `[k, C_in, C_out]` with
    /// odd `k`, and `b` is `[C_out]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (batch, t, cin) = seq_dims(xv)?;
        if wv.shape().len() != 3 || wv.shape()[1] != cin || wv.shape()[0] % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv1d weight {:?} against input {:?}",
                wv.shape(),
                xv.shape()
            )));
        }
        let (k, cout) = (wv.shape()[0], wv.shape()[2]);
        if bv.shape() != [cout] {
            return Err(Error::Shape(format!("conv1d bias {:?}", bv.shape())));
        }
        let cols = im2col(xv.data(), batch, t, cin, k);
        let rows = batch * t;
        let mut out = vec![0.0; rows * cout];
        for r in 0..rows {
            out[r * cout..(r + 1) * cout].copy_from_slice(bv.data());
        }
        gemm(rows, k * cin, cout, &cols, false, wv.data(), false, &mut out, true);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = cout;
        let rg = self.rg(&[x, w, b]);
        self.push_checked(
            "conv1d",
            Tensor::new(shape, out)?,
            Op::Conv1d { x, w, b, cols },
            rg,
        )
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push_checked("relu", t, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push_checked("sigmoid", t, Op::Sigmoid(x), rg)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let d = xv.last_dim();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(d.max(1)) {
            softmax_in_place(row);
        }
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push_checked("softmax", t, Op::Softmax(x), rg)
    }

    /// Concatenates along the last dimension; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let lead = self.value(*first).shape().split_last().map(|(_, l)| l.to_vec());
        let lead = lead.ok_or_else(|| Error::Shape("concat of scalars".into()))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(Error::Shape(format!("concat {s:?} with leading {lead:?}")));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead;
        shape.push(total);
        let rg = self.rg(parts);
        self.push_checked("concat", Tensor::new(shape, out)?, Op::Concat(parts.to_vec()), rg)
    }

    /// Columns `start..start + width` of the last dimension.
    pub fn slice_last(&mut self, x: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if xv.shape().is_empty() || start + width > d || width == 0 {
            return Err(Error::Shape(format!(
                "slice {start}..{} of {:?}",
                start + width,
                xv.shape()
            )));
        }
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&xv.data()[r * d + start..r * d + start + width]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = width;
        let rg = self.rg(&[x]);
        self.push_checked("slice", Tensor::new(shape, out)?, Op::Slice { x, start }, rg)
    }

    /// Mean over the time axis: `[B, T, C] -> [B, C]`, `[T, C] -> [C]`.
    pub fn temporal_mean(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (batch, t, c) = seq_dims(xv)?;
        if t == 0 {
            return Err(Error::Shape("temporal mean over zero frames".into()));
        }
        let mut out = vec![0.0; batch * c];
        for b in 0..batch {
            for i in 0..t {
                let row = &xv.data()[(b * t + i) * c..(b * t + i + 1) * c];
                for (o, v) in out[b * c..(b + 1) * c].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        let inv = 1.0 / t as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let shape = if xv.shape().len() == 3 { vec![batch, c] } else { vec![c] };
        let rg = self.rg(&[x]);
        self.push_checked("temporal_mean", Tensor::new(shape, out)?, Op::TemporalMean(x), rg)
    }

    /// Mean binary cross-entropy of `logits` against targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &[f64]) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.numel() != targets.len() || targets.is_empty() {
            return Err(Error::Shape(format!(
                "bce: {} logits vs {} targets",
                lv.numel(),
                targets.len()
            )));
        }
        if targets.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::Invalid("bce target outside [0, 1]".into()));
        }
        let sum: f64 = lv.data().iter().zip(targets).map(|(&x, &y)| bce_term(x, y)).sum();
        let loss = sum / targets.len() as f64;
        let rg = self.rg(&[logits]);
        self.push_checked(
            "bce_with_logits",
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        )
    }

    /// Mean categorical cross-entropy; one class index per row of `logits`.
    pub fn ce_with_logits(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        let c = lv.last_dim();
        if lv.shape().is_empty() || lv.rows() != targets.len() || targets.is_empty() {
            return Err(Error::Shape(format!(
                "ce: logits {:?} vs {} targets",
                lv.shape(),
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Invalid(format!("class {bad} out of range 0..{c}")));
        }
        let mut sum = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            sum += log_sum_exp(row) - row[t];
        }
        let loss = sum / targets.len() as f64;
        let rg = self.rg(&[logits]);
        self.push_checked(
            "ce_with_logits",
            Tensor::scalar(loss),
            Op::CeWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        )
    }

    /// Identity forward; the backward pass multiplies the gradient by `-lambda`.
    pub fn grad_reverse(&mut self, x: NodeId, lambda: f64) -> Result<NodeId> {
        if !(lambda >= 0.0) {
            return Err(Error::Invalid(format!("gradient reversal weight {lambda}")));
        }
        let v = self.value(x).clone();
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::GradReverse { x, lambda }, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!("add {:?} + {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push_checked("add", t, Op::Add(a, b), rg)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * c).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push_checked("scale", t, Op::Scale(x, c), rg)
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.propagate(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let shape_of = |id: NodeId| self.value(id).shape().to_vec();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (din, dout) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; rows * din];
                    gemm(rows, dout, din, gy.data(), false, wv.data(), true, &mut dx, false);
                    self.accumulate(grads, *x, Tensor::new(shape_of(*x), dx).unwrap());
                }
                if self.requires_grad(*w) {
                    let mut dw = vec![0.0; din * dout];
                    gemm(din, rows, dout, xv.data(), true, gy.data(), false, &mut dw, false);
                    self.accumulate(grads, *w, Tensor::new(shape_of(*w), dw).unwrap());
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, Tensor::new(vec![dout], column_sums(gy.data(), dout)).unwrap());
                }
            }
            Op::Conv1d { x, w, b, cols } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (batch, t, cin) = seq_dims(xv).unwrap();
                let (k, cout) = (wv.shape()[0], wv.shape()[2]);
                let rows = batch * t;
                if self.requires_grad(*x) {
                    let mut dcols = vec![0.0; rows * k * cin];
                    gemm(rows, cout, k * cin, gy.data(), false, wv.data(), true, &mut dcols, false);
                    let dx = col2im(&dcols, batch, t, cin, k);
                    self.accumulate(grads, *x, Tensor::new(shape_of(*x), dx).unwrap());
                }
                if self.requires_grad(*w) {
                    let mut dw = vec![0.0; k * cin * cout];
                    gemm(k * cin, rows, cout, cols, true, gy.data(), false, &mut dw, false);
                    self.accumulate(grads, *w, Tensor::new(shape_of(*w), dw).unwrap());
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, Tensor::new(vec![cout], column_sums(gy.data(), cout)).unwrap());
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let dx = xv
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(shape_of(*x), dx).unwrap());
            }
            Op::Sigmoid(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&y, &g)| g * y * (1.0 - y))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(shape_of(*x), dx).unwrap());
            }
            Op::Softmax(x) => {
                let d = node.value.last_dim().max(1);
                let mut dx = vec![0.0; node.value.numel()];
                for ((y, g), out) in node
                    .value
                    .data()
                    .chunks(d)
                    .zip(gy.data().chunks(d))
                    .zip(dx.chunks_mut(d))
                {
                    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                    for i in 0..d {
                        out[i] = y[i] * (g[i] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(shape_of(*x), dx).unwrap());
            }
            Op::Concat(parts) => {
                let total = node.value.last_dim();
                let rows = node.value.rows();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    if self.requires_grad(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&gy.data()[r * total + off..r * total + off + w]);
                        }
                        self.accumulate(grads, p, Tensor::new(shape_of(p), dp).unwrap());
                    }
                    off += w;
                }
            }
            Op::Slice { x, start } => {
                let xv = self.value(*x);
                let d = xv.last_dim();
                let w = node.value.last_dim();
                let mut dx = vec![0.0; xv.numel()];
                for r in 0..xv.rows() {
                    dx[r * d + start..r * d + start + w].copy_from_slice(&gy.data()[r * w..(r + 1) * w]);
                }
                self.accumulate(grads, *x, Tensor::new(shape_of(*x), dx).unwrap());
            }
            Op::TemporalMean(x) => {
                let (batch, t, c) = seq_dims(self.value(*x)).unwrap();
                let inv = 1.0 / t as f64;
                let mut dx = vec![0.0; batch * t * c];
                for b in 0..batch {
                    let g = &gy.data()[b * c..(b + 1) * c];
                    for i in 0..t {
                        for (o, v) in dx[(b * t + i) * c..(b * t + i + 1) * c].iter_mut().zip(g) {
                            *o = v * inv;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(shape_of(*x), dx).unwrap());
            }
            Op::BceWithLogits { logits, targets } => {
                let scale = gy.item() / targets.len() as f64;
                let dx = self
                    .value(*logits)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&x, &y)| (sigmoid(x) - y) * scale)
                    .collect();
                self.accumulate(grads, *logits, Tensor::new(shape_of(*logits), dx).unwrap());
            }
            Op::CeWithLogits { logits, targets } => {
                let lv = self.value(*logits);
                let c = lv.last_dim();
                let scale = gy.item() / targets.len() as f64;
                let mut dx = lv.data().to_vec();
                for (r, &t) in targets.iter().enumerate() {
                    let row = &mut dx[r * c..(r + 1) * c];
                    softmax_in_place(row);
                    row[t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                self.accumulate(grads, *logits, Tensor::new(shape_of(*logits), dx).unwrap());
            }
            Op::GradReverse { x, lambda } => {
                let dx = gy.data().iter().map(|g| -lambda * g).collect();
                self.accumulate(grads, *x, Tensor::new(shape_of(*x), dx).unwrap());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, gy.clone());
            }
            Op::Scale(x, c) => {
                let dx = gy.data().iter().map(|g| g * c).collect();
                self.accumulate(grads, *x, Tensor::new(shape_of(*x), dx).unwrap());
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, gy.clone().reshape(shape_of(*x)).unwrap());
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `max(x, 0) - x*y + ln(1 + e^{-|x|})`, the stable form of BCE on a logit.
pub fn bce_term(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

fn seq_dims(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [b, n, c] => Ok((b, n, c)),
        [n, c] => Ok((1, n, c)),
        ref s => Err(Error::Shape(format!("expected [B, T, C] or [T, C], got {s:?}"))),
    }
}

fn column_sums(data: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for row in data.chunks(width) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

fn im2col(x: &[f64], batch: usize, t: usize, cin: usize, k: usize) -> Vec<f64> {
    let pad = k / 2;
    let width = k * cin;
    let mut cols = vec![0.0; batch * t * width];
    for b in 0..batch {
        for i in 0..t {
            let dst = &mut cols[(b * t + i) * width..(b * t + i + 1) * width];
            for j in 0..k {
                let src = i + j;
                if src < pad || src - pad >= t {
                    continue;
                }
                let s = b * t + src - pad;
                dst[j * cin..(j + 1) * cin].copy_from_slice(&x[s * cin..(s + 1) * cin]);
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], batch: usize, t: usize, cin: usize, k: usize) -> Vec<f64> {
    let pad = k / 2;
    let width = k * cin;
    let mut dx = vec![0.0; batch * t * cin];
    for b in 0..batch {
        for i in 0..t {
            let src = &dcols[(b * t + i) * width..(b * t + i + 1) * width];
            for j in 0..k {
                let pos = i + j;
                if pos < pad || pos - pad >= t {
                    continue;
                }
                let d = b * t + pos - pad;
                for (o, v) in dx[d * cin..(d + 1) * cin].iter_mut().zip(&src[j * cin..(j + 1) * cin]) {
                    *o += v;
                }
            }
        }
    }
    dx
}

/// `c (+)= op(a) · op(b)` with `op(a)` of shape `[m, k]` and `op(b)` `[k, n]`.
/// A transposed operand is stored row-major in its untransposed shape.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
