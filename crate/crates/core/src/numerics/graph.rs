//! Reverse-mode automatic differentiation over a recorded graph.
//!
//! Operations append nodes to a [`Graph`]; each node keeps its forward
//! value plus whatever it needs for the backward pass. [`Graph::backward`]
//! walks the nodes in reverse insertion order, which is a valid
//! topological order because inputs always precede their consumers.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::kernels::{self, axpy, dot};
use crate::numerics::{ParamId, ParamSet, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Layout of a batched self-attention call: `batch` sequences of `seq`
/// positions each, stacked row-wise as `[batch·seq × hidden]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
}

enum Op<F> {
    Leaf,
    MatMul(NodeId, NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, F),
    Gelu(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        normalized: Vec<F>,
        inv_std: Vec<F>,
    },
    Dropout {
        x: NodeId,
        mask: Vec<F>,
    },
    GatherRows {
        x: NodeId,
        rows: Vec<usize>,
    },
    AssembleRows {
        parts: Vec<(NodeId, Vec<usize>)>,
    },
    PickPerRow {
        x: NodeId,
        cols: Vec<usize>,
    },
    RowScale {
        x: NodeId,
        scale: NodeId,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        shape: AttentionShape,
        key_mask: Vec<bool>,
        probs: Vec<F>,
    },
    Sum(NodeId),
    Mean(NodeId),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    tracks_grad: bool,
}

/// A recorded computation.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    bound: HashMap<ParamId, NodeId>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, tracks_grad: bool) -> NodeId {
        debug_assert!(
            matches!(op, Op::Leaf) || value.is_finite(),
            "non-finite value produced by graph op"
        );
        self.nodes.push(Node { value, op, tracks_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn tracks(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracks_grad
    }

    /// A value that does not receive gradients.
    pub fn constant(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives gradients.
    pub fn variable(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a parameter as a gradient-tracking leaf. Binding the same
    /// parameter twice returns the same node.
    pub fn param(&mut self, params: &ParamSet<F>, id: ParamId) -> NodeId {
        if let Some(&node) = self.bound.get(&id) {
            return node;
        }
        let node = self.variable(params.get(id).clone());
        self.bound.insert(id, node);
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(Error::dim("matmul", format!("{:?} · {:?}", av.shape(), bv.shape())));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let out = kernels::matmul(av.data(), bv.data(), m, k, n);
        let tracks = self.tracks(a) || self.tracks(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), tracks))
    }

    /// `x · wᵀ + b` with `x: [rows × in]`, `w: [out × in]`, `b: [out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 || xv.cols() != wv.cols() {
            return Err(Error::dim(
                "linear",
                format!("input {:?} against weight {:?}", xv.shape(), wv.shape()),
            ));
        }
        let (rows, inner, outer) = (xv.rows(), xv.cols(), wv.rows());
        let mut out = kernels::matmul_nt(xv.data(), wv.data(), rows, inner, outer);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != outer {
                return Err(Error::dim(
                    "linear",
                    format!("bias of length {} for {outer} outputs", bv.len()),
                ));
            }
            for row in out.chunks_mut(outer) {
                for (o, &bias) in row.iter_mut().zip(bv.data()) {
                    *o += bias;
                }
            }
        }
        let tracks = self.tracks(x) || self.tracks(w) || b.is_some_and(|b| self.tracks(b));
        Ok(self.push(Tensor::new(vec![rows, outer], out)?, Op::Linear { x, w, b }, tracks))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: Op<F>, f: impl Fn(F, F) -> F) -> NodeId {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let tracks = self.tracks(a) || self.tracks(b);
        self.push(value, op, tracks)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    fn map(&mut self, x: NodeId, op: Op<F>, f: impl Fn(F) -> F) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let tracks = self.tracks(x);
        self.push(value, op, tracks)
    }

    pub fn scale(&mut self, x: NodeId, factor: F) -> NodeId {
        self.map(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Gelu(x), kernels::gelu)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut out = vec![F::zero(); xv.len()];
        for (src, dst) in xv.data().chunks(cols).zip(out.chunks_mut(cols)) {
            kernels::softmax_row(src, dst);
        }
        let value = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        let tracks = self.tracks(x);
        self.push(value, Op::Softmax(x), tracks)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut out = vec![F::zero(); xv.len()];
        for (src, dst) in xv.data().chunks(cols).zip(out.chunks_mut(cols)) {
            let max = src.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = src.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s - lse;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        let tracks = self.tracks(x);
        self.push(value, Op::LogSoftmax(x), tracks)
    }

    /// Per-row standardisation followed by an affine map over the last axis.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: F) -> Result<NodeId> {
        let xv = self.value(x);
        let cols = xv.cols();
        if self.value(gain).len() != cols || self.value(bias).len() != cols {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "gain/bias lengths {}/{} for width {cols}",
                    self.value(gain).len(),
                    self.value(bias).len()
                ),
            ));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let n = F::from_usize(cols).expect("width");
        let mut out = vec![F::zero(); xv.len()];
        let mut normalized = vec![F::zero(); xv.len()];
        let mut inv_std = Vec::with_capacity(xv.rows());
        for ((src, dst), xhat) in xv
            .data()
            .chunks(cols)
            .zip(out.chunks_mut(cols))
            .zip(normalized.chunks_mut(cols))
        {
            let mean = src.iter().copied().sum::<F>() / n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let inv = F::one() / (var + eps).sqrt();
            for j in 0..cols {
                xhat[j] = (src[j] - mean) * inv;
                dst[j] = xhat[j] * g[j] + b[j];
            }
            inv_std.push(inv);
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let tracks = self.tracks(x) || self.tracks(gain) || self.tracks(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            tracks,
        ))
    }

    /// Inverted dropout. Identity when not training or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, p: f64, training: bool, rng: &mut R) -> NodeId {
        if !training || p <= 0.0 {
            return x;
        }
        let keep = F::lit(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let tracks = self.tracks(x);
        self.push(value, Op::Dropout { x, mask }, tracks)
    }

    /// Selects rows of a matrix (with repetition allowed).
    pub fn gather_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        let (n, cols) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(Error::dim("gather_rows", format!("row {r} of {n}")));
            }
            out.extend_from_slice(xv.row(r));
        }
        let value = Tensor::new(vec![rows.len(), cols], out)?;
        let tracks = self.tracks(x);
        Ok(self.push(value, Op::GatherRows { x, rows: rows.to_vec() }, tracks))
    }

    /// Inverse of a partition: row `j` of part `p` lands at `parts[p].1[j]`.
    /// Every destination row in `0..total_rows` must be written exactly once.
    pub fn assemble_rows(
        &mut self,
        parts: Vec<(NodeId, Vec<usize>)>,
        total_rows: usize,
        cols: usize,
    ) -> Result<NodeId> {
        let mut out = vec![F::zero(); total_rows * cols];
        let mut written = vec![false; total_rows];
        for (node, dest) in &parts {
            let pv = self.value(*node);
            if pv.cols() != cols || pv.rows() != dest.len() {
                return Err(Error::dim(
                    "assemble_rows",
                    format!("part {:?} for {} destinations", pv.shape(), dest.len()),
                ));
            }
            for (j, &d) in dest.iter().enumerate() {
                if d >= total_rows || written[d] {
                    return Err(Error::dim("assemble_rows", format!("bad destination row {d}")));
                }
                written[d] = true;
                out[d * cols..(d + 1) * cols].copy_from_slice(pv.row(j));
            }
        }
        if written.iter().any(|w| !w) {
            return Err(Error::dim("assemble_rows", "not every row was written"));
        }
        let tracks = parts.iter().any(|(n, _)| self.tracks(*n));
        Ok(self.push(
            Tensor::new(vec![total_rows, cols], out)?,
            Op::AssembleRows { parts },
            tracks,
        ))
    }

    /// `out[r] = x[r, cols[r]]`, shaped `[rows × 1]`.
    pub fn pick_per_row(&mut self, x: NodeId, cols: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        if cols.len() != xv.rows() || cols.iter().any(|&c| c >= xv.cols()) {
            return Err(Error::dim(
                "pick_per_row",
                format!("{} picks from {:?}", cols.len(), xv.shape()),
            ));
        }
        let data = cols.iter().enumerate().map(|(r, &c)| xv.at(r, c)).collect();
        let value = Tensor::new(vec![cols.len(), 1], data)?;
        let tracks = self.tracks(x);
        Ok(self.push(value, Op::PickPerRow { x, cols: cols.to_vec() }, tracks))
    }

    /// Multiplies row `r` of `x` by `scale[r]`.
    pub fn row_scale(&mut self, x: NodeId, scale: NodeId) -> Result<NodeId> {
        let (xv, sv) = (self.value(x), self.value(scale));
        if sv.len() != xv.rows() {
            return Err(Error::dim(
                "row_scale",
                format!("{} scales for {} rows", sv.len(), xv.rows()),
            ));
        }
        let cols = xv.cols();
        let mut data = xv.data().to_vec();
        for (row, &s) in data.chunks_mut(cols).zip(sv.data()) {
            for v in row {
                *v *= s;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let tracks = self.tracks(x) || self.tracks(scale);
        Ok(self.push(value, Op::RowScale { x, scale }, tracks))
    }

    /// Multi-head scaled dot-product attention. `key_mask[b·seq + j]` is
    /// false for padding; masked keys receive exactly zero probability.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        shape: AttentionShape,
        key_mask: &[bool],
    ) -> Result<NodeId> {
        let AttentionShape { batch, seq, heads } = shape;
        let hidden = self.value(q).cols();
        let rows = batch * seq;
        for id in [q, k, v] {
            let t = self.value(id);
            if t.rows() != rows || t.cols() != hidden {
                return Err(Error::dim(
                    "attention",
                    format!("operand {:?} for {batch}×{seq} positions", t.shape()),
                ));
            }
        }
        if heads == 0 || !hidden.is_multiple_of(heads) || key_mask.len() != rows {
            return Err(Error::dim(
                "attention",
                format!("hidden {hidden}, heads {heads}, mask {}", key_mask.len()),
            ));
        }
        let d = hidden / heads;
        let scale = F::one() / F::from_usize(d).expect("head dim").sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut ctx = vec![F::zero(); rows * hidden];
        let mut probs = vec![F::zero(); batch * heads * seq * seq];
        let mut scores = vec![F::zero(); seq];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * d;
                for i in 0..seq {
                    let qi = &qd[(b * seq + i) * hidden + off..][..d];
                    let mut max = F::neg_infinity();
                    for j in 0..seq {
                        if key_mask[b * seq + j] {
                            let kj = &kd[(b * seq + j) * hidden + off..][..d];
                            scores[j] = dot(qi, kj) * scale;
                            max = max.max(scores[j]);
                        }
                    }
                    if max == F::neg_infinity() {
                        continue;
                    }
                    let p = &mut probs[((b * heads + h) * seq + i) * seq..][..seq];
                    let mut sum = F::zero();
                    for j in 0..seq {
                        if key_mask[b * seq + j] {
                            p[j] = (scores[j] - max).exp();
                            sum += p[j];
                        }
                    }
                    let out = &mut ctx[(b * seq + i) * hidden + off..][..d];
                    for j in 0..seq {
                        if key_mask[b * seq + j] {
                            p[j] /= sum;
                            axpy(out, p[j], &vd[(b * seq + j) * hidden + off..][..d]);
                        }
                    }
                }
            }
        }
        let tracks = self.tracks(q) || self.tracks(k) || self.tracks(v);
        Ok(self.push(
            Tensor::new(vec![rows, hidden], ctx)?,
            Op::Attention {
                q,
                k,
                v,
                shape,
                key_mask: key_mask.to_vec(),
                probs,
            },
            tracks,
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().copied().sum();
        let tracks = self.tracks(x);
        self.push(Tensor::scalar(s), Op::Sum(x), tracks)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = F::from_usize(xv.len().max(1)).expect("count");
        let s = xv.data().iter().copied().sum::<F>() / n;
        let tracks = self.tracks(x);
        self.push(Tensor::scalar(s), Op::Mean(x), tracks)
    }

    /// Propagates d(loss)/d(node) for every node that tracks gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].tracks_grad {
                self.backprop_node(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<F>>], id: NodeId, contrib: Vec<F>) {
        if !self.tracks(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contrib) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn backprop_node(&self, idx: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.tracks(*a) {
                    // dA = dC · Bᵀ
                    self.accumulate(grads, *a, kernels::matmul_nt(g, bv.data(), m, n, k));
                }
                if self.tracks(*b) {
                    // dB = Aᵀ · dC
                    self.accumulate(grads, *b, kernels::matmul_tn(av.data(), g, m, k, n));
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, inner, outer) = (xv.rows(), xv.cols(), wv.rows());
                if self.tracks(*x) {
                    self.accumulate(grads, *x, kernels::matmul(g, wv.data(), rows, outer, inner));
                }
                if self.tracks(*w) {
                    self.accumulate(grads, *w, kernels::matmul_tn(g, xv.data(), rows, outer, inner));
                }
                if let Some(b) = b {
                    if self.tracks(*b) {
                        let mut db = vec![F::zero(); outer];
                        for row in g.chunks(outer) {
                            axpy(&mut db, F::one(), row);
                        }
                        self.accumulate(grads, *b, db);
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, g.iter().zip(bv).map(|(&d, &y)| d * y).collect());
                self.accumulate(grads, *b, g.iter().zip(av).map(|(&d, &x)| d * x).collect());
            }
            Op::Scale(x, factor) => {
                self.accumulate(grads, *x, g.iter().map(|&d| d * *factor).collect());
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(
                    grads,
                    *x,
                    g.iter().zip(xv).map(|(&d, &v)| d * kernels::gelu_grad(v)).collect(),
                );
            }
            Op::Softmax(x) => {
                let cols = out.cols();
                let mut dx = vec![F::zero(); g.len()];
                for ((p, dy), dst) in out.data().chunks(cols).zip(g.chunks(cols)).zip(dx.chunks_mut(cols)) {
                    let s = dot(p, dy);
                    for j in 0..cols {
                        dst[j] = p[j] * (dy[j] - s);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LogSoftmax(x) => {
                let cols = out.cols();
                let mut dx = vec![F::zero(); g.len()];
                for ((lp, dy), dst) in out.data().chunks(cols).zip(g.chunks(cols)).zip(dx.chunks_mut(cols)) {
                    let s: F = dy.iter().copied().sum();
                    for j in 0..cols {
                        dst[j] = dy[j] - lp[j].exp() * s;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let cols = out.cols();
                let n = F::from_usize(cols).expect("width");
                let gv = self.value(*gain).data();
                let mut dx = vec![F::zero(); g.len()];
                let mut dgain = vec![F::zero(); cols];
                let mut dbias = vec![F::zero(); cols];
                for (r, ((dy, xhat), dst)) in g
                    .chunks(cols)
                    .zip(normalized.chunks(cols))
                    .zip(dx.chunks_mut(cols))
                    .enumerate()
                {
                    let mut mean_dxhat = F::zero();
                    let mut mean_dxhat_xhat = F::zero();
                    for j in 0..cols {
                        let dxh = dy[j] * gv[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[j];
                        dgain[j] += dy[j] * xhat[j];
                        dbias[j] += dy[j];
                    }
                    mean_dxhat /= n;
                    mean_dxhat_xhat /= n;
                    for j in 0..cols {
                        let dxh = dy[j] * gv[j];
                        dst[j] = inv_std[r] * (dxh - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gain, dgain);
                self.accumulate(grads, *bias, dbias);
            }
            Op::Dropout { x, mask } => {
                self.accumulate(grads, *x, g.iter().zip(mask).map(|(&d, &m)| d * m).collect());
            }
            Op::GatherRows { x, rows } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut dx = vec![F::zero(); xv.len()];
                for (j, &r) in rows.iter().enumerate() {
                    axpy(
                        &mut dx[r * cols..(r + 1) * cols],
                        F::one(),
                        &g[j * cols..(j + 1) * cols],
                    );
                }
                self.accumulate(grads, *x, dx);
            }
            Op::AssembleRows { parts } => {
                let cols = out.cols();
                for (part, dest) in parts {
                    let mut dp = Vec::with_capacity(dest.len() * cols);
                    for &d in dest {
                        dp.extend_from_slice(&g[d * cols..(d + 1) * cols]);
                    }
                    self.accumulate(grads, *part, dp);
                }
            }
            Op::PickPerRow { x, cols } => {
                let xv = self.value(*x);
                let width = xv.cols();
                let mut dx = vec![F::zero(); xv.len()];
                for (r, &c) in cols.iter().enumerate() {
                    dx[r * width + c] = g[r];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::RowScale { x, scale } => {
                let (xv, sv) = (self.value(*x), self.value(*scale).data());
                let cols = xv.cols();
                if self.tracks(*x) {
                    let mut dx = g.to_vec();
                    for (row, &s) in dx.chunks_mut(cols).zip(sv) {
                        for v in row {
                            *v *= s;
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.tracks(*scale) {
                    let ds = g
                        .chunks(cols)
                        .zip(xv.data().chunks(cols))
                        .map(|(d, x)| dot(d, x))
                        .collect();
                    self.accumulate(grads, *scale, ds);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                shape,
                key_mask,
                probs,
            } => {
                let AttentionShape { batch, seq, heads } = *shape;
                let hidden = out.cols();
                let d = hidden / heads;
                let scale = F::one() / F::from_usize(d).expect("head dim").sqrt();
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![F::zero(); qd.len()];
                let mut dk = vec![F::zero(); kd.len()];
                let mut dv = vec![F::zero(); vd.len()];
                let mut dp = vec![F::zero(); seq];
                for b in 0..batch {
                    for h in 0..heads {
                        let off = h * d;
                        for i in 0..seq {
                            let p = &probs[((b * heads + h) * seq + i) * seq..][..seq];
                            let gi = &g[(b * seq + i) * hidden + off..][..d];
                            let mut s = F::zero();
                            for j in 0..seq {
                                if key_mask[b * seq + j] {
                                    let row = (b * seq + j) * hidden + off;
                                    dp[j] = dot(gi, &vd[row..row + d]);
                                    axpy(&mut dv[row..row + d], p[j], gi);
                                    s += p[j] * dp[j];
                                }
                            }
                            let qrow = (b * seq + i) * hidden + off;
                            for j in 0..seq {
                                if key_mask[b * seq + j] {
                                    let ds = p[j] * (dp[j] - s) * scale;
                                    let krow = (b * seq + j) * hidden + off;
                                    axpy(&mut dq[qrow..qrow + d], ds, &kd[krow..krow + d]);
                                    axpy(&mut dk[krow..krow + d], ds, &qd[qrow..qrow + d]);
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
                self.accumulate(grads, *v, dv);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let share = g[0] / F::from_usize(n.max(1)).expect("count");
                self.accumulate(grads, *x, vec![share; n]);
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient with respect to a node, `None` if no path reached it.
    pub fn wrt(&self, graph: &Graph<F>, id: NodeId) -> Option<Tensor<F>> {
        self.grads[id.0]
            .as_ref()
            .map(|g| Tensor::new(graph.value(id).shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Per-parameter gradients indexed like `params`; parameters the
    /// graph never touched get `None`.
    pub fn for_params(&self, graph: &Graph<F>, params: &ParamSet<F>) -> Vec<Option<Tensor<F>>> {
        params
            .ids()
            .map(|pid| graph.bound.get(&pid).and_then(|&node| self.wrt(graph, node)))
            .collect()
    }
}
