//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order, so the backward pass walks the tape once in reverse.
//! Parameter nodes read their values from a borrowed [`ParamStore`]; a
//! backward pass returns [`Gradients`] that the caller folds into the store.

use crate::error::{Error, Result};
use crate::tensor::param::{Gradients, ParamId, ParamStore};
use crate::tensor::tensor::{gemm, MatRef, Tensor};

/// Layer-normalisation epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A differentiable operation defined outside this module.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Adjoints of each input given the adjoint of the output.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Input,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Embedding {
        table: Var,
        codes: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Relu(Var),
    Mish(Var),
    Softmax(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    BroadcastAdd {
        x: Var,
        rows: Var,
        group: usize,
    },
    Interleave(Vec<Var>),
    GatherRows {
        x: Var,
        index: Vec<Option<usize>>,
    },
    ConcatCols(Vec<Var>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        probs: Vec<f64>,
    },
    WeightedSum(Vec<(Var, f64)>),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

/// Batch layout for fused scaled dot-product attention.
///
/// Queries are `batch × q_len` rows and keys/values `batch × k_len` rows, each
/// of width `d`. Row `b` only attends to its first `key_len[b]` keys.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayout {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
    pub key_len: Vec<usize>,
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

fn mish_grad(x: f64) -> f64 {
    let t = softplus(x).tanh();
    t + x * (1.0 - t * t) * sigmoid(x)
}

/// In-place max-shifted softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("{name} produced a non-finite value")));
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Input,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x·W + b` for `x: r × n`, `W: n × m`, `b: m`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        if wt.shape().len() != 2 || xt.cols() != wt.shape()[0] {
            return Err(shape_err("linear", xt, wt));
        }
        let (r, n, m) = (xt.rows(), xt.cols(), wt.cols());
        let mut out = vec![0.0; r * m];
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.len() != m {
                return Err(shape_err("linear bias", wt, bt));
            }
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bt.data());
            }
        }
        gemm(
            r,
            n,
            m,
            MatRef::row_major(xt.data(), n),
            MatRef::row_major(wt.data(), m),
            if b.is_some() { 1.0 } else { 0.0 },
            &mut out,
        );
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let rg = self.requires(x) || self.requires(w) || b.is_some_and(|b| self.requires(b));
        self.push(Tensor::from_parts(shape, out), Op::Linear { x, w, b }, rg, "linear")
    }

    /// Row gather from an embedding table.
    pub fn embedding(&mut self, table: Var, codes: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (cl, d) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(codes.len() * d);
        for &c in codes {
            if c >= cl {
                return Err(Error::Index {
                    what: "embedding table",
                    index: c,
                    size: cl,
                });
            }
            out.extend_from_slice(t.row(c));
        }
        let rg = self.requires(table);
        let value = Tensor::from_parts(vec![codes.len(), d], out);
        self.push(
            value,
            Op::Embedding {
                table,
                codes: codes.to_vec(),
            },
            rg,
            "embedding",
        )
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let (xt, gt, st) = (self.value(x), self.value(gain), self.value(shift));
        let d = xt.cols();
        if gt.len() != d || st.len() != d {
            return Err(shape_err("layer_norm", xt, gt));
        }
        let rows = xt.rows();
        let mut xhat = vec![0.0; rows * d];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = xt.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = s;
            for c in 0..d {
                let h = (row[c] - mean) * s;
                xhat[r * d + c] = h;
                out[r * d + c] = h * gt.data()[c] + st.data()[c];
            }
        }
        let rg = self.requires(x) || self.requires(gain) || self.requires(shift);
        let value = Tensor::from_parts(xt.shape().to_vec(), out);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                rstd,
            },
            rg,
            "layer_norm",
        )
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op, name: &'static str) -> Result<Var> {
        let xt = self.value(x);
        let value = Tensor::from_parts(xt.shape().to_vec(), xt.data().iter().map(|v| f(*v)).collect());
        let rg = self.requires(x);
        self.push(value, op, rg, name)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map(x, |v| v.max(0.0), Op::Relu(x), "relu")
    }

    pub fn mish(&mut self, x: Var) -> Result<Var> {
        self.map(x, mish, Op::Mish(x), "mish")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map(x, |v| v * c, Op::Scale(x, c), "scale")
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let mut data = xt.data().to_vec();
        for row in data.chunks_mut(xt.cols()) {
            softmax_in_place(row);
        }
        let value = Tensor::from_parts(xt.shape().to_vec(), data);
        let rg = self.requires(x);
        self.push(value, Op::Softmax(x), rg, "softmax")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(shape_err("add", at, bt));
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_parts(at.shape().to_vec(), data);
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Add(a, b), rg, "add")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(shape_err("mul", at, bt));
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_parts(at.shape().to_vec(), data);
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Mul(a, b), rg, "mul")
    }

    /// Sum of every element, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.requires(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg, "sum")
    }

    /// Adds row `i` of `rows` to rows `i·group .. (i+1)·group` of `x`.
    pub fn broadcast_add(&mut self, x: Var, rows: Var, group: usize) -> Result<Var> {
        let (xt, rt) = (self.value(x), self.value(rows));
        if xt.cols() != rt.cols() || xt.rows() != rt.rows() * group {
            return Err(shape_err("broadcast_add", xt, rt));
        }
        let d = xt.cols();
        let mut data = xt.data().to_vec();
        for (i, block) in data.chunks_mut(group * d).enumerate() {
            let add = rt.row(i);
            for row in block.chunks_mut(d) {
                for (v, a) in row.iter_mut().zip(add) {
                    *v += a;
                }
            }
        }
        let value = Tensor::from_parts(xt.shape().to_vec(), data);
        let rg = self.requires(x) || self.requires(rows);
        self.push(value, Op::BroadcastAdd { x, rows, group }, rg, "broadcast_add")
    }

    /// Stacks `L` tensors of shape `b × d` into `(b·L) × d`, row `i·L + j`
    /// holding row `i` of part `j`.
    pub fn interleave(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]);
        let (b, d) = (first.rows(), first.cols());
        for p in parts {
            let t = self.value(*p);
            if t.rows() != b || t.cols() != d {
                return Err(shape_err("interleave", first, t));
            }
        }
        let l = parts.len();
        let mut data = vec![0.0; b * l * d];
        for (j, p) in parts.iter().enumerate() {
            let t = self.value(*p);
            for i in 0..b {
                data[(i * l + j) * d..(i * l + j + 1) * d].copy_from_slice(t.row(i));
            }
        }
        let rg = parts.iter().any(|p| self.requires(*p));
        self.push(
            Tensor::from_parts(vec![b * l, d], data),
            Op::Interleave(parts.to_vec()),
            rg,
            "interleave",
        )
    }

    /// Output row `r` copies input row `index[r]`, or zeros for `None`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<Option<usize>>) -> Result<Var> {
        let xt = self.value(x);
        let (n, d) = (xt.rows(), xt.cols());
        let mut data = vec![0.0; index.len() * d];
        for (r, src) in index.iter().enumerate() {
            if let Some(s) = *src {
                if s >= n {
                    return Err(Error::Index {
                        what: "gather_rows",
                        index: s,
                        size: n,
                    });
                }
                data[r * d..(r + 1) * d].copy_from_slice(xt.row(s));
            }
        }
        let rg = self.requires(x);
        let value = Tensor::from_parts(vec![index.len(), d], data);
        self.push(value, Op::GatherRows { x, index }, rg, "gather_rows")
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut width = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), t));
            }
            width += t.cols();
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let rg = parts.iter().any(|p| self.requires(*p));
        self.push(
            Tensor::from_parts(vec![rows, width], data),
            Op::ConcatCols(parts.to_vec()),
            rg,
            "concat_cols",
        )
    }

    /// Multi-head scaled dot-product attention (no projections), scale
    /// `1/sqrt(d/heads)`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttentionLayout) -> Result<Var> {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let d = qt.cols();
        let AttentionLayout {
            batch,
            q_len,
            k_len,
            heads,
            ref key_len,
        } = layout;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "model width {d} is not divisible by {heads} heads"
            )));
        }
        if qt.rows() != batch * q_len
            || kt.rows() != batch * k_len
            || kt.shape() != vt.shape()
            || kt.cols() != d
            || key_len.len() != batch
        {
            return Err(shape_err("attention", qt, kt));
        }
        if let Some(&bad) = key_len.iter().find(|&&l| l == 0 || l > k_len) {
            return Err(Error::Index {
                what: "attention key length",
                index: bad,
                size: k_len,
            });
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; batch * heads * q_len * k_len];
        let mut out = vec![0.0; batch * q_len * d];
        let mut scores = vec![0.0; k_len];
        for b in 0..batch {
            let nk = key_len[b];
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..q_len {
                    let qrow = &qt.row(b * q_len + i)[cols.clone()];
                    for (j, s) in scores[..nk].iter_mut().enumerate() {
                        let krow = &kt.row(b * k_len + j)[cols.clone()];
                        *s = qrow.iter().zip(krow).map(|(a, c)| a * c).sum::<f64>() * scale;
                    }
                    softmax_in_place(&mut scores[..nk]);
                    let pbase = ((b * heads + h) * q_len + i) * k_len;
                    probs[pbase..pbase + nk].copy_from_slice(&scores[..nk]);
                    let orow = &mut out[(b * q_len + i) * d + h * dh..(b * q_len + i) * d + (h + 1) * dh];
                    for (j, p) in scores[..nk].iter().enumerate() {
                        let vrow = &vt.row(b * k_len + j)[cols.clone()];
                        for (o, x) in orow.iter_mut().zip(vrow) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        let rg = self.requires(q) || self.requires(k) || self.requires(v);
        self.push(
            Tensor::from_parts(vec![batch * q_len, d], out),
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
            rg,
            "attention",
        )
    }

    /// Attention weights recorded by an attention node, laid out as
    /// `[batch][head][query][key]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// `Σ wᵢ·xᵢ` over one-element tensors.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for (v, w) in terms {
            let t = self.value(*v);
            if t.len() != 1 {
                return Err(Error::Shape {
                    op: "weighted_sum",
                    lhs: t.shape().to_vec(),
                    rhs: vec![1],
                });
            }
            s += w * t.item();
        }
        let rg = terms.iter().any(|(v, _)| self.requires(*v));
        self.push(Tensor::scalar(s), Op::WeightedSum(terms.to_vec()), rg, "weighted_sum")
    }

    /// Records an externally defined operation whose forward value has
    /// already been computed.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        let rg = inputs.iter().any(|v| self.requires(*v));
        let name = op.name();
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
            name,
        )
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                lhs: lt.shape().to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients {
            per_param: vec![None; self.params.len()],
        };
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.requires(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>], out: &mut Gradients) {
        let value = || node.value.as_ref().expect("op nodes own their value");
        match &node.op {
            Op::Input => {}
            Op::Param(id) => match &mut out.per_param[id.0] {
                Some(existing) => existing.add_assign(g),
                slot => *slot = Some(g.clone()),
            },
            Op::Linear { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (r, n, m) = (xt.rows(), xt.cols(), wt.cols());
                if self.requires(*x) {
                    let mut dx = vec![0.0; r * n];
                    gemm(r, m, n, MatRef::row_major(g.data(), m), MatRef::transposed(wt.data(), m), 0.0, &mut dx);
                    self.accumulate(grads, *x, Tensor::from_parts(xt.shape().to_vec(), dx));
                }
                if self.requires(*w) {
                    let mut dw = vec![0.0; n * m];
                    gemm(n, r, m, MatRef::transposed(xt.data(), n), MatRef::row_major(g.data(), m), 0.0, &mut dw);
                    self.accumulate(grads, *w, Tensor::from_parts(wt.shape().to_vec(), dw));
                }
                if let Some(b) = b {
                    if self.requires(*b) {
                        let mut db = vec![0.0; m];
                        for row in g.data().chunks(m) {
                            for (a, v) in db.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        let shape = self.value(*b).shape().to_vec();
                        self.accumulate(grads, *b, Tensor::from_parts(shape, db));
                    }
                }
            }
            Op::Embedding { table, codes } => {
                let t = self.value(*table);
                let d = t.cols();
                let mut dt = vec![0.0; t.len()];
                for (r, &c) in codes.iter().enumerate() {
                    for (a, v) in dt[c * d..(c + 1) * d].iter_mut().zip(g.row(r)) {
                        *a += v;
                    }
                }
                self.accumulate(grads, *table, Tensor::from_parts(t.shape().to_vec(), dt));
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                rstd,
            } => {
                let gt = self.value(*gain);
                let d = gt.len();
                let rows = g.rows();
                if self.requires(*gain) || self.requires(*shift) {
                    let mut dg = vec![0.0; d];
                    let mut ds = vec![0.0; d];
                    for r in 0..rows {
                        for c in 0..d {
                            dg[c] += g.data()[r * d + c] * xhat[r * d + c];
                            ds[c] += g.data()[r * d + c];
                        }
                    }
                    self.accumulate(grads, *gain, Tensor::from_parts(gt.shape().to_vec(), dg));
                    let ss = self.value(*shift).shape().to_vec();
                    self.accumulate(grads, *shift, Tensor::from_parts(ss, ds));
                }
                if self.requires(*x) {
                    let mut dx = vec![0.0; rows * d];
                    let mut dh = vec![0.0; d];
                    for r in 0..rows {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for c in 0..d {
                            dh[c] = g.data()[r * d + c] * gt.data()[c];
                            mean_dh += dh[c];
                            mean_dh_h += dh[c] * xhat[r * d + c];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for c in 0..d {
                            dx[r * d + c] = rstd[r] * (dh[c] - mean_dh - xhat[r * d + c] * mean_dh_h);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_parts(g.shape().to_vec(), dx));
                }
            }
            Op::Relu(x) => {
                let xt = self.value(*x);
                let dx = xt
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_parts(xt.shape().to_vec(), dx));
            }
            Op::Mish(x) => {
                let xt = self.value(*x);
                let dx = xt.data().iter().zip(g.data()).map(|(v, g)| g * mish_grad(*v)).collect();
                self.accumulate(grads, *x, Tensor::from_parts(xt.shape().to_vec(), dx));
            }
            Op::Scale(x, c) => {
                let dx = g.data().iter().map(|v| v * c).collect();
                self.accumulate(grads, *x, Tensor::from_parts(g.shape().to_vec(), dx));
            }
            Op::Softmax(x) => {
                let p = value();
                let n = p.cols();
                let mut dx = vec![0.0; p.len()];
                for ((pr, gr), dr) in p.data().chunks(n).zip(g.data().chunks(n)).zip(dx.chunks_mut(n)) {
                    let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, p), g) in dr.iter_mut().zip(pr).zip(gr) {
                        *d = p * (g - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(p.shape().to_vec(), dx));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(bt.data()).map(|(g, y)| g * y).collect();
                let db = g.data().iter().zip(at.data()).map(|(g, x)| g * x).collect();
                self.accumulate(grads, *a, Tensor::from_parts(at.shape().to_vec(), da));
                self.accumulate(grads, *b, Tensor::from_parts(bt.shape().to_vec(), db));
            }
            Op::Sum(x) => {
                let xt = self.value(*x);
                self.accumulate(grads, *x, Tensor::full(xt.shape(), g.item()));
            }
            Op::BroadcastAdd { x, rows, group } => {
                self.accumulate(grads, *x, g.clone());
                if self.requires(*rows) {
                    let rt = self.value(*rows);
                    let d = rt.cols();
                    let mut dr = vec![0.0; rt.len()];
                    for (i, block) in g.data().chunks(group * d).enumerate() {
                        for row in block.chunks(d) {
                            for (a, v) in dr[i * d..(i + 1) * d].iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                    }
                    self.accumulate(grads, *rows, Tensor::from_parts(rt.shape().to_vec(), dr));
                }
            }
            Op::Interleave(parts) => {
                let l = parts.len();
                let d = g.cols();
                let b = g.rows() / l;
                for (j, p) in parts.iter().enumerate() {
                    if !self.requires(*p) {
                        continue;
                    }
                    let mut dp = vec![0.0; b * d];
                    for i in 0..b {
                        dp[i * d..(i + 1) * d].copy_from_slice(g.row(i * l + j));
                    }
                    let shape = self.value(*p).shape().to_vec();
                    self.accumulate(grads, *p, Tensor::from_parts(shape, dp));
                }
            }
            Op::GatherRows { x, index } => {
                let xt = self.value(*x);
                let d = xt.cols();
                let mut dx = vec![0.0; xt.len()];
                for (r, src) in index.iter().enumerate() {
                    if let Some(s) = *src {
                        for (a, v) in dx[s * d..(s + 1) * d].iter_mut().zip(g.row(r)) {
                            *a += v;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(xt.shape().to_vec(), dx));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.requires(*p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        let shape = self.value(*p).shape().to_vec();
                        self.accumulate(grads, *p, Tensor::from_parts(shape, dp));
                    }
                    offset += w;
                }
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            } => {
                let (qt, kt, vt) = (self.value(*q), self.value(*k), self.value(*v));
                let d = qt.cols();
                let AttentionLayout {
                    batch,
                    q_len,
                    k_len,
                    heads,
                    ref key_len,
                } = *layout;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = vec![0.0; qt.len()];
                let mut dk = vec![0.0; kt.len()];
                let mut dv = vec![0.0; vt.len()];
                let mut dp = vec![0.0; k_len];
                for b in 0..batch {
                    let nk = key_len[b];
                    for h in 0..heads {
                        let c0 = h * dh;
                        for i in 0..q_len {
                            let qi = b * q_len + i;
                            let pbase = ((b * heads + h) * q_len + i) * k_len;
                            let p = &probs[pbase..pbase + nk];
                            let go = &g.row(qi)[c0..c0 + dh];
                            let mut dot = 0.0;
                            for j in 0..nk {
                                let kj = b * k_len + j;
                                let vrow = &vt.row(kj)[c0..c0 + dh];
                                dp[j] = go.iter().zip(vrow).map(|(a, c)| a * c).sum();
                                dot += p[j] * dp[j];
                                let dvrow = &mut dv[kj * d + c0..kj * d + c0 + dh];
                                for (a, gv) in dvrow.iter_mut().zip(go) {
                                    *a += p[j] * gv;
                                }
                            }
                            for j in 0..nk {
                                let ds = p[j] * (dp[j] - dot) * scale;
                                let kj = b * k_len + j;
                                let krow = &kt.row(kj)[c0..c0 + dh];
                                let qrow = &qt.row(qi)[c0..c0 + dh];
                                for (a, x) in dq[qi * d + c0..qi * d + c0 + dh].iter_mut().zip(krow) {
                                    *a += ds * x;
                                }
                                for (a, x) in dk[kj * d + c0..kj * d + c0 + dh].iter_mut().zip(qrow) {
                                    *a += ds * x;
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *q, Tensor::from_parts(qt.shape().to_vec(), dq));
                self.accumulate(grads, *k, Tensor::from_parts(kt.shape().to_vec(), dk));
                self.accumulate(grads, *v, Tensor::from_parts(vt.shape().to_vec(), dv));
            }
            Op::WeightedSum(terms) => {
                for (v, w) in terms {
                    self.accumulate(grads, *v, Tensor::scalar(w * g.item()));
                }
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let dins = op.backward(&ins, value(), g);
                for (v, d) in inputs.iter().zip(dins) {
                    self.accumulate(grads, *v, d);
                }
            }
        }
    }
}
