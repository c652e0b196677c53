//! Tape of recorded operations. Nodes are appended in evaluation order, so the
//! reverse of insertion order is a valid topological order for backward.

use std::collections::HashSet;

use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param,
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Powf(Var, T),
    Abs(Var),
    Sigmoid(Var),
    Gelu(Var),
    Clamp(Var, T, T),
    Maximum(Var, Var),
    Minimum(Var, Var),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    Reshape(Var),
    NormalizeRows(Var, Vec<T>),
    MaskedLogSumExp(Var, Vec<bool>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    retained: HashSet<usize>,
    param_vars: Vec<(ParamId, Var)>,
}

const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn shape_err<V>(op: &'static str, a: &[usize], b: &[usize]) -> Result<V> {
    Err(Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    })
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            retained: HashSet::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input leaf.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a parameter from the store. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_vars.iter().find(|(p, _)| *p == id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).value.clone(),
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.push((id, v));
        v
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    /// Keep the gradient of an intermediate node after backward.
    pub fn retain_grad(&mut self, v: Var) {
        self.retained.insert(v.0);
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Parameter gradients produced by the last backward.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> + '_ {
        self.param_vars
            .iter()
            .filter_map(move |&(id, v)| self.grad(v).map(|g| (id, g)))
    }

    // ---- elementwise ----

    fn binary_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(op, ta.shape(), tb.shape());
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor {
            shape: ta.shape().to_vec(),
            data,
        })
    }

    fn unary(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let t = self.value(a);
        Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    /// `a[.., n] + b[n]` broadcast over the leading dimension.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.cols();
        if tb.len() != n {
            return shape_err("add_row", ta.shape(), tb.shape());
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, &y) in row.iter_mut().zip(tb.data()) {
                *x += y;
            }
        }
        let t = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        Ok(self.push(t, Op::AddRow(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary_same("div", a, b, |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b), &[a, b]))
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary_same("maximum", a, b, |x, y| if x >= y { x } else { y })?;
        Ok(self.push(t, Op::Maximum(a, b), &[a, b]))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary_same("minimum", a, b, |x, y| if x <= y { x } else { y })?;
        Ok(self.push(t, Op::Minimum(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let t = self.unary(a, |x| x * s);
        self.push(t, Op::Scale(a, s), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        let t = self.unary(a, |x| x + c);
        self.push(t, Op::AddScalar(a), &[a])
    }

    /// `c - a`
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, c)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.exp());
        self.push(t, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.ln());
        self.push(t, Op::Log(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.sqrt());
        self.push(t, Op::Sqrt(a), &[a])
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let p = T::of(p);
        let t = self.unary(a, |x| x.powf(p));
        self.push(t, Op::Powf(a, p), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.abs());
        self.push(t, Op::Abs(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.unary(a, sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    /// tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.unary(a, gelu);
        self.push(t, Op::Gelu(a), &[a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        let t = self.unary(a, |x| x.max(lo).min(hi));
        self.push(t, Op::Clamp(a, lo, hi), &[a])
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = T::of(t.len() as f64);
        let s: T = t.data().iter().copied().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(a), &[a])
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n) {
            let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut s = T::zero();
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x = *x / s;
            }
        }
        let t = Tensor {
            shape: t.shape().to_vec(),
            data,
        };
        self.push(t, Op::Softmax(a), &[a])
    }

    /// Row-wise log-sum-exp restricted to `mask` entries; output has one
    /// element per row. Every row must select at least one entry.
    pub fn masked_logsumexp(&mut self, a: Var, mask: Vec<bool>) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.len() {
            return shape_err("masked_logsumexp", t.shape(), &[mask.len()]);
        }
        let n = t.cols();
        let mut out = Vec::with_capacity(t.rows());
        for (row, m) in t.data().chunks(n).zip(mask.chunks(n)) {
            let mx = row
                .iter()
                .zip(m)
                .filter(|(_, &k)| k)
                .fold(T::neg_infinity(), |acc, (&x, _)| acc.max(x));
            if mx == T::neg_infinity() {
                return Err(Error::Invalid("masked_logsumexp: empty row".into()));
            }
            let s: T = row
                .iter()
                .zip(m)
                .filter(|(_, &k)| k)
                .map(|(&x, _)| (x - mx).exp())
                .sum();
            out.push(mx + s.ln());
        }
        let rows = out.len();
        Ok(self.push(
            Tensor {
                shape: vec![rows],
                data: out,
            },
            Op::MaskedLogSumExp(a, mask),
            &[a],
        ))
    }

    /// Layer normalization over the last dimension with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let n = tx.cols();
        if tg.len() != n || tb.len() != n {
            return shape_err("layer_norm", tx.shape(), tg.shape());
        }
        let eps = T::of(LN_EPS);
        let nf = T::of(n as f64);
        let mut xhat = Vec::with_capacity(tx.len());
        let mut rstd = Vec::with_capacity(tx.rows());
        let mut out = Vec::with_capacity(tx.len());
        for row in tx.data().chunks(n) {
            let mu = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / nf;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mu) * r;
                xhat.push(h);
                out.push(h * tg.data()[j] + tb.data()[j]);
            }
        }
        let t = Tensor {
            shape: tx.shape().to_vec(),
            data: out,
        };
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// L2-normalizes each row. Zero rows are rejected.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = t.cols();
        let mut norms = Vec::with_capacity(t.rows());
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n) {
            let nrm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            if !(nrm > T::zero()) || !nrm.is_finite() {
                return Err(Error::Invalid("normalize_rows: zero-norm row".into()));
            }
            for x in row.iter_mut() {
                *x = *x / nrm;
            }
            norms.push(nrm);
        }
        let t = Tensor {
            shape: t.shape().to_vec(),
            data,
        };
        Ok(self.push(t, Op::NormalizeRows(a, norms), &[a]))
    }

    // ---- linear algebra and layout ----

    /// `a[.., k] x b[k, n] -> [.., n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.shape().len() != 2 || ta.shape().is_empty() || ta.cols() != tb.shape()[0] {
            return shape_err("matmul", ta.shape(), tb.shape());
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let data = matmul_kernel(ta.data(), tb.data(), m, k, n);
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor { shape, data }, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return shape_err("transpose", t.shape(), &[]);
        }
        let (m, n) = (t.shape()[0], t.shape()[1]);
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = t.data()[i * n + j];
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![n, m],
                data,
            },
            Op::Transpose(a),
            &[a],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    /// Columns `[start, start + len)` of a 2-D view.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let n = t.cols();
        if start + len > n || len == 0 {
            return shape_err("slice_cols", t.shape(), &[start, len]);
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for row in t.data().chunks(n) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let t = Tensor {
            shape: vec![t.rows(), len],
            data,
        };
        Ok(self.push(t, Op::SliceCols(a, start), &[a]))
    }

    /// Rows `[start, start + len)` of a 2-D view.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let n = t.cols();
        if start + len > t.rows() || len == 0 {
            return shape_err("slice_rows", t.shape(), &[start, len]);
        }
        let t = Tensor {
            shape: vec![len, n],
            data: t.data()[start * n..(start + len) * n].to_vec(),
        };
        Ok(self.push(t, Op::SliceRows(a, start), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return shape_err("concat_cols", self.value(parts[0]).shape(), t.shape());
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                let n = t.cols();
                data.extend_from_slice(&t.data()[r * n..(r + 1) * n]);
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![rows, total],
                data,
            },
            Op::ConcatCols(parts.to_vec()),
            parts,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return shape_err("concat_rows", self.value(parts[0]).shape(), t.shape());
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        Ok(self.push(
            Tensor {
                shape: vec![rows, cols],
                data,
            },
            Op::ConcatRows(parts.to_vec()),
            parts,
        ))
    }

    /// Flat element gather: `out[i] = a.data[index[i]]`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= t.len()) {
            return shape_err("gather", t.shape(), &[bad]);
        }
        let data = index.iter().map(|&i| t.data()[i]).collect();
        Ok(self.push(
            Tensor {
                shape: vec![index.len()],
                data,
            },
            Op::Gather(a, index),
            &[a],
        ))
    }

    // ---- backward ----

    /// Reverse pass from a scalar `loss`. Gradients of leaves, parameters and
    /// retained nodes accumulate across calls on the same graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut work: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        work[loss.0] = Some(vec![T::one()]);
        if self.grads.len() < self.nodes.len() {
            self.grads.resize_with(self.nodes.len(), || None);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = work[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let keep = matches!(node.op, Op::Leaf | Op::Param) || self.retained.contains(&i);
            if keep {
                let gt = Tensor {
                    shape: node.value.shape().to_vec(),
                    data: g.clone(),
                };
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&gt),
                    slot @ None => *slot = Some(gt),
                }
            }
            backprop_node(&self.nodes, i, g, &mut work);
        }
        Ok(())
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn gelu<T: Scalar>(x: T) -> T {
    let k = T::of(GELU_K);
    let c = T::of(GELU_C);
    let half = T::of(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::of(GELU_K);
    let c = T::of(GELU_C);
    let half = T::of(0.5);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0) * c * x * x)
}

pub(crate) fn matmul_kernel<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(orow, a[i * k + p], &b[p * n..(p + 1) * n]);
        }
    }
    out
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Fixed-order 8-lane dot product.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for j in chunks * 8..a.len() {
        s += a[j] * b[j];
    }
    s
}

fn accumulate<T: Scalar>(nodes: &[Node<T>], work: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut work[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn map2<T: Scalar>(g: &[T], x: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    g.iter().zip(x).map(|(&g, &x)| f(g, x)).collect()
}

fn backprop_node<T: Scalar>(nodes: &[Node<T>], i: usize, g: Vec<T>, work: &mut [Option<Vec<T>>]) {
    let node = &nodes[i];
    let val = |v: Var| -> &Tensor<T> { &nodes[v.0].value };
    let y = node.value.data();
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::Add(a, b) => {
            accumulate(nodes, work, *b, g.clone());
            accumulate(nodes, work, *a, g);
        }
        Op::AddRow(a, b) => {
            let n = val(*b).len();
            let mut gb = vec![T::zero(); n];
            for row in g.chunks(n) {
                for (s, &x) in gb.iter_mut().zip(row) {
                    *s += x;
                }
            }
            accumulate(nodes, work, *b, gb);
            accumulate(nodes, work, *a, g);
        }
        Op::Sub(a, b) => {
            accumulate(nodes, work, *b, g.iter().map(|&x| -x).collect());
            accumulate(nodes, work, *a, g);
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (val(*a).data(), val(*b).data());
            accumulate(nodes, work, *a, map2(&g, tb, |g, x| g * x));
            accumulate(nodes, work, *b, map2(&g, ta, |g, x| g * x));
        }
        Op::Div(a, b) => {
            let (ta, tb) = (val(*a).data(), val(*b).data());
            accumulate(nodes, work, *a, map2(&g, tb, |g, x| g / x));
            let gb = g
                .iter()
                .zip(ta.iter().zip(tb))
                .map(|(&g, (&p, &q))| -g * p / (q * q))
                .collect();
            accumulate(nodes, work, *b, gb);
        }
        Op::Scale(a, s) => {
            let s = *s;
            accumulate(nodes, work, *a, g.iter().map(|&x| x * s).collect());
        }
        Op::AddScalar(a) | Op::Reshape(a) => accumulate(nodes, work, *a, g),
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
            if nodes[a.0].requires_grad {
                let mut ga = vec![T::zero(); m * k];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        ga[r * k + p] = dot(grow, &tb.data()[p * n..(p + 1) * n]);
                    }
                }
                accumulate(nodes, work, *a, ga);
            }
            if nodes[b.0].requires_grad {
                let mut gb = vec![T::zero(); k * n];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        axpy(&mut gb[p * n..(p + 1) * n], ta.data()[r * k + p], grow);
                    }
                }
                accumulate(nodes, work, *b, gb);
            }
        }
        Op::Transpose(a) => {
            let (m, n) = (val(*a).shape()[0], val(*a).shape()[1]);
            let mut ga = vec![T::zero(); m * n];
            for r in 0..m {
                for c in 0..n {
                    ga[r * n + c] = g[c * m + r];
                }
            }
            accumulate(nodes, work, *a, ga);
        }
        Op::Exp(a) => accumulate(nodes, work, *a, map2(&g, y, |g, y| g * y)),
        Op::Log(a) => accumulate(nodes, work, *a, map2(&g, val(*a).data(), |g, x| g / x)),
        Op::Sqrt(a) => accumulate(nodes, work, *a, map2(&g, y, |g, y| g * T::of(0.5) / y)),
        Op::Powf(a, p) => {
            let p = *p;
            let ga = map2(&g, val(*a).data(), |g, x| g * p * x.powf(p - T::one()));
            accumulate(nodes, work, *a, ga);
        }
        Op::Abs(a) => {
            let ga = map2(&g, val(*a).data(), |g, x| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            });
            accumulate(nodes, work, *a, ga);
        }
        Op::Sigmoid(a) => accumulate(nodes, work, *a, map2(&g, y, |g, y| g * y * (T::one() - y))),
        Op::Gelu(a) => accumulate(nodes, work, *a, map2(&g, val(*a).data(), |g, x| g * gelu_grad(x))),
        Op::Clamp(a, lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            let ga = map2(&g, val(*a).data(), |g, x| if x >= lo && x <= hi { g } else { T::zero() });
            accumulate(nodes, work, *a, ga);
        }
        Op::Maximum(a, b) | Op::Minimum(a, b) => {
            let is_max = matches!(node.op, Op::Maximum(..));
            let (ta, tb) = (val(*a).data(), val(*b).data());
            let mut ga = vec![T::zero(); g.len()];
            let mut gb = vec![T::zero(); g.len()];
            for j in 0..g.len() {
                let pick_a = if is_max { ta[j] >= tb[j] } else { ta[j] <= tb[j] };
                if pick_a {
                    ga[j] = g[j];
                } else {
                    gb[j] = g[j];
                }
            }
            accumulate(nodes, work, *a, ga);
            accumulate(nodes, work, *b, gb);
        }
        Op::Sum(a) => {
            let n = val(*a).len();
            accumulate(nodes, work, *a, vec![g[0]; n]);
        }
        Op::Mean(a) => {
            let n = val(*a).len();
            accumulate(nodes, work, *a, vec![g[0] / T::of(n as f64); n]);
        }
        Op::Softmax(a) => {
            let n = node.value.cols();
            let mut ga = vec![T::zero(); g.len()];
            for ((out, gr), yr) in ga.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                let s = dot(gr, yr);
                for j in 0..n {
                    out[j] = yr[j] * (gr[j] - s);
                }
            }
            accumulate(nodes, work, *a, ga);
        }
        Op::MaskedLogSumExp(a, mask) => {
            let ta = val(*a);
            let n = ta.cols();
            let mut ga = vec![T::zero(); ta.len()];
            for r in 0..ta.rows() {
                for c in 0..n {
                    let j = r * n + c;
                    if mask[j] {
                        ga[j] = g[r] * (ta.data()[j] - y[r]).exp();
                    }
                }
            }
            accumulate(nodes, work, *a, ga);
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let n = val(*x).cols();
            let gam = val(*gamma).data();
            let nf = T::of(n as f64);
            if nodes[x.0].requires_grad {
                let mut gx = vec![T::zero(); g.len()];
                for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..n {
                        let d = grow[j] * gam[j];
                        m1 += d;
                        m2 += d * hrow[j];
                    }
                    m1 = m1 / nf;
                    m2 = m2 / nf;
                    for j in 0..n {
                        gx[r * n + j] = rstd[r] * (grow[j] * gam[j] - m1 - hrow[j] * m2);
                    }
                }
                accumulate(nodes, work, *x, gx);
            }
            let mut gg = vec![T::zero(); n];
            let mut gbeta = vec![T::zero(); n];
            for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                for j in 0..n {
                    gg[j] += grow[j] * hrow[j];
                    gbeta[j] += grow[j];
                }
            }
            accumulate(nodes, work, *gamma, gg);
            accumulate(nodes, work, *beta, gbeta);
        }
        Op::NormalizeRows(a, norms) => {
            let n = node.value.cols();
            let mut ga = vec![T::zero(); g.len()];
            for (r, (gr, yr)) in g.chunks(n).zip(y.chunks(n)).enumerate() {
                let s = dot(gr, yr);
                for j in 0..n {
                    ga[r * n + j] = (gr[j] - yr[j] * s) / norms[r];
                }
            }
            accumulate(nodes, work, *a, ga);
        }
        Op::SliceCols(a, start) => {
            let ta = val(*a);
            let (n, len) = (ta.cols(), node.value.cols());
            let mut ga = vec![T::zero(); ta.len()];
            for (dst, src) in ga.chunks_mut(n).zip(g.chunks(len)) {
                dst[*start..*start + len].copy_from_slice(src);
            }
            accumulate(nodes, work, *a, ga);
        }
        Op::SliceRows(a, start) => {
            let ta = val(*a);
            let n = ta.cols();
            let mut ga = vec![T::zero(); ta.len()];
            ga[start * n..start * n + g.len()].copy_from_slice(&g);
            accumulate(nodes, work, *a, ga);
        }
        Op::ConcatCols(parts) => {
            let total = node.value.cols();
            let mut off = 0;
            for &p in parts {
                let n = val(p).cols();
                if nodes[p.0].requires_grad {
                    let mut gp = Vec::with_capacity(val(p).len());
                    for row in g.chunks(total) {
                        gp.extend_from_slice(&row[off..off + n]);
                    }
                    accumulate(nodes, work, p, gp);
                }
                off += n;
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let len = val(p).len();
                accumulate(nodes, work, p, g[off..off + len].to_vec());
                off += len;
            }
        }
        Op::Gather(a, index) => {
            let mut ga = vec![T::zero(); val(*a).len()];
            for (&j, &gv) in index.iter().zip(&g) {
                ga[j] += gv;
            }
            accumulate(nodes, work, *a, ga);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[3]));
        let y = g.softmax(x);
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 5], 3.7));
        let gm = g.constant(Tensor::ones(&[5]));
        let b = g.constant(Tensor::zeros(&[5]));
        let y = g.layer_norm(x, gm, b).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::<f64>::new();
        let eye = g.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let xv = t(&[3, 2], &[1., -2., 3.5, 4., 0.25, 6.]);
        let x = g.constant(xv.clone());
        let y = g.matmul(eye, x).unwrap();
        assert_eq!(g.value(y), &xv);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = g.constant(Tensor::zeros(&[3]));
        assert!(g.add(a, c).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn sum_grad_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[4], &[1., 2., 3., 4.]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn square_grad_and_accumulation() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[2], &[1., 2.]));
        let xx = g.mul(x, x).unwrap();
        let s = g.sum(xx);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[4.0, 8.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[2], &[1., 2.]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[2], &[1., 2.]));
        let d = g.detach(x);
        let y = g.mul(d, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(vec![2, 3], vec![1.0, -30.0, 7.5, 0.0, 0.1, 80.0]).unwrap());
        let y = g.softmax(x);
        for row in g.value(y).data().chunks(3) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}
