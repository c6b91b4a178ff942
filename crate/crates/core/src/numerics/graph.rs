//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its output value and the
//! information its backward rule needs. Nodes only reference earlier nodes,
//! so the tape is already in topological order and a single reverse sweep
//! visits each node exactly once.
//!
//! Leaf gradients accumulate across calls to [`Graph::backward`] until
//! [`Graph::zero_grads`] is called.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{matmul_nt, matmul_tn, Tensor};
use crate::error::{contract, Error, Result};

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Gelu(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    SqNorm(Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    Mse(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The compute graph: an append-only tape of operations.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn erf_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

fn erf_gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    cdf + x * pdf
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Registers an input tensor. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a node, if the last backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every leaf that requires them and was reached by backward.
    pub fn gradients(&self) -> BTreeMap<Var, Tensor> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.requires_grad && matches!(n.op, Op::Leaf))
            .filter_map(|(i, _)| self.grads[i].clone().map(|g| (Var(i), g)))
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn binary_same(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        ta.zip_map(tb, f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary_same(a, b, "add", |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        let rg = self.needs(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    /// Adds a row vector `[n]` to every row of a matrix `[m×n]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        let (m, n) = tx.dims2();
        if tr.numel() != n || tx.ndim() != 2 {
            return Err(shape_err("add_row", tx, tr));
        }
        let mut out = tx.data().to_vec();
        for i in 0..m {
            for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        let v = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.needs(&[x, row]);
        Ok(self.push(v, Op::AddRow(x, row), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.ndim() != 2 {
            return Err(shape_err("transpose", ta, ta));
        }
        let v = ta.transpose();
        let rg = self.needs(&[a]);
        Ok(self.push(v, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape.to_vec())?;
        let rg = self.needs(&[a]);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    /// GELU with the exact Gaussian CDF.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(erf_gelu);
        let rg = self.needs(&[a]);
        self.push(v, Op::Gelu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::tanh);
        let rg = self.needs(&[a]);
        self.push(v, Op::Tanh(a), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if !ta.is_finite() {
            return Err(contract("softmax input must be finite"));
        }
        let (m, n) = ta.dims2();
        let mut out = ta.data().to_vec();
        for i in 0..m {
            softmax_in_place(&mut out[i * n..(i + 1) * n]);
        }
        let v = Tensor::new(ta.shape().to_vec(), out)?;
        let rg = self.needs(&[a]);
        Ok(self.push(v, Op::Softmax(a), rg))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2();
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.numel() != n {
            return Err(shape_err("layer_norm gain", tx, tg));
        }
        if tb.numel() != n {
            return Err(shape_err("layer_norm bias", tx, tb));
        }
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &tx.data()[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let v = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.needs(&[x, gain, bias]);
        Ok(self.push(
            v,
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

    /// Gathers rows of `table` ([V×d]) into a `[ids.len()×d]` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (vocab, d) = tt.dims2();
        if ids.is_empty() {
            return Err(contract("embedding lookup needs at least one id"));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index {
                    what: "token id",
                    index: id,
                    limit: vocab,
                });
            }
            out.extend_from_slice(tt.row(id));
        }
        let v = Tensor::new(vec![ids.len(), d], out)?;
        let rg = self.needs(&[table]);
        Ok(self.push(
            v,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2();
        if len == 0 || start + len > n {
            return Err(Error::Index {
                what: "column slice end",
                index: start + len,
                limit: n,
            });
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&tx.data()[i * n + start..i * n + start + len]);
        }
        let v = Tensor::new(vec![m, len], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(v, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| contract("concat of zero parts"))?;
        let (m, _) = self.value(*first).dims2();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let t = self.value(*p);
            if t.dims2().0 != m {
                return Err(shape_err("concat_cols", self.value(*first), t));
            }
            widths.push(t.dims2().1);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[i * w..(i + 1) * w]);
            }
        }
        let v = Tensor::new(vec![m, total], out)?;
        let rg = self.needs(parts);
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.needs(&[a]);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.numel() as f64);
        let rg = self.needs(&[a]);
        self.push(v, Op::Mean(a), rg)
    }

    /// Squared L2 (Frobenius) norm.
    pub fn sq_norm(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).norm_sq());
        let rg = self.needs(&[a]);
        self.push(v, Op::SqNorm(a), rg)
    }

    /// Cross-entropy of a single logit vector against an integer label.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let tl = self.value(logits);
        let n = tl.numel();
        if label >= n {
            return Err(Error::Index {
                what: "label",
                index: label,
                limit: n,
            });
        }
        if !tl.is_finite() {
            return Err(contract("cross-entropy logits must be finite"));
        }
        let mut probs = tl.data().to_vec();
        let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(probs.iter().map(|&z| libm::exp(z - max)).sum::<f64>());
        let loss = lse - tl.data()[label];
        softmax_in_place(&mut probs);
        let rg = self.needs(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, label, probs }, rg))
    }

    /// Mean squared error between two tensors of equal shape.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let diff = self.binary_same(pred, target, "mse", |x, y| x - y)?;
        let v = Tensor::scalar(diff.norm_sq() / diff.numel() as f64);
        let rg = self.needs(&[pred, target]);
        Ok(self.push(v, Op::Mse(pred, target), rg))
    }

    /// Reverse sweep from a scalar node; leaf gradients accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_scaled(loss, 1.0)
    }

    /// Backward with the seed gradient `scale` instead of 1.
    pub fn backward_scaled(&mut self, loss: Var, scale: f64) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(contract("backward requires a scalar loss"));
        }
        let n = loss.0 + 1;
        let mut work: Vec<Option<Tensor>> = vec![None; n];
        work[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![scale])?);
        for i in (0..n).rev() {
            let Some(g) = work[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut work)?;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, work: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut send = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut work[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                send(*a, g.zip_map(val(*b), |x, y| x * y)?);
                send(*b, g.zip_map(val(*a), |x, y| x * y)?);
            }
            Op::Scale(a, s) => send(*a, g.scale(*s)),
            Op::AddRow(x, row) => {
                send(*x, g.clone());
                let (m, n) = g.dims2();
                let mut acc = vec![0.0; n];
                for r in 0..m {
                    for (a, v) in acc.iter_mut().zip(g.row(r)) {
                        *a += v;
                    }
                }
                send(*row, Tensor::new(val(*row).shape().to_vec(), acc)?);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = ta.dims2();
                let (_, n) = tb.dims2();
                if self.nodes[a.0].requires_grad {
                    send(*a, Tensor::new(vec![m, k], matmul_nt(g.data(), tb.data(), m, n, k))?);
                }
                if self.nodes[b.0].requires_grad {
                    send(*b, Tensor::new(vec![k, n], matmul_tn(ta.data(), g.data(), m, k, n))?);
                }
            }
            Op::Transpose(a) => send(*a, g.transpose()),
            Op::Reshape(a) => send(*a, g.clone().reshape(val(*a).shape().to_vec())?),
            Op::Gelu(a) => send(*a, g.zip_map(val(*a), |gv, x| gv * erf_gelu_grad(x))?),
            Op::Tanh(a) => send(*a, g.zip_map(out, |gv, y| gv * (1.0 - y * y))?),
            Op::Softmax(a) => {
                let (m, n) = out.dims2();
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    let y = out.row(r);
                    let gy = g.row(r);
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[r * n + j] = y[j] * (gy[j] - dot);
                    }
                }
                send(*a, Tensor::new(out.shape().to_vec(), dx)?);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (m, n) = out.dims2();
                let gd = val(*gain).data();
                let mut dx = vec![0.0; m * n];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                for r in 0..m {
                    let gy = g.row(r);
                    let h = &xhat[r * n..(r + 1) * n];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..n {
                        let dh = gy[j] * gd[j];
                        mean_dh += dh;
                        mean_dh_h += dh * h[j];
                        dg[j] += gy[j] * h[j];
                        db[j] += gy[j];
                    }
                    mean_dh /= n as f64;
                    mean_dh_h /= n as f64;
                    for j in 0..n {
                        let dh = gy[j] * gd[j];
                        dx[r * n + j] = inv_std[r] * (dh - mean_dh - h[j] * mean_dh_h);
                    }
                }
                send(*x, Tensor::new(out.shape().to_vec(), dx)?);
                send(*gain, Tensor::new(val(*gain).shape().to_vec(), dg)?);
                send(*bias, Tensor::new(val(*bias).shape().to_vec(), db)?);
            }
            Op::Embedding { table, ids } => {
                let tt = val(*table);
                let (_, d) = tt.dims2();
                let mut dt = Tensor::zeros(tt.shape());
                for (r, &id) in ids.iter().enumerate() {
                    for (a, v) in dt.data_mut()[id * d..(id + 1) * d].iter_mut().zip(g.row(r)) {
                        *a += v;
                    }
                }
                send(*table, dt);
            }
            Op::SliceCols { x, start } => {
                let tx = val(*x);
                let (m, n) = tx.dims2();
                let (_, len) = g.dims2();
                let mut dx = Tensor::zeros(tx.shape());
                for r in 0..m {
                    dx.data_mut()[r * n + start..r * n + start + len].copy_from_slice(g.row(r));
                }
                send(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let (m, total) = g.dims2();
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).dims2().1;
                    let mut dp = Vec::with_capacity(m * w);
                    for r in 0..m {
                        dp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                    send(*p, Tensor::new(val(*p).shape().to_vec(), dp)?);
                }
            }
            Op::Sum(a) => send(*a, Tensor::full(val(*a).shape(), g.item())),
            Op::Mean(a) => {
                let t = val(*a);
                send(*a, Tensor::full(t.shape(), g.item() / t.numel() as f64));
            }
            Op::SqNorm(a) => send(*a, val(*a).scale(2.0 * g.item())),
            Op::CrossEntropy { logits, label, probs } => {
                let mut d = probs.clone();
                d[*label] -= 1.0;
                let s = g.item();
                for v in &mut d {
                    *v *= s;
                }
                send(*logits, Tensor::new(val(*logits).shape().to_vec(), d)?);
            }
            Op::Mse(p, t) => {
                let n = val(*p).numel() as f64;
                let s = 2.0 * g.item() / n;
                let diff = val(*p).zip_map(val(*t), |x, y| (x - y) * s)?;
                send(*t, diff.scale(-1.0));
                send(*p, diff);
            }
        }
        Ok(())
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
