//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node appended to a tape. Node
//! indices are a topological order by construction, so [`Graph::backward`]
//! is a single reverse sweep that visits each node once.

use std::sync::atomic::{AtomicBool, Ordering};

use super::tensor::{axis_split, gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};
use crate::rng::SeedRng;

static NAN_GUARD: AtomicBool = AtomicBool::new(false);

/// When on, every node that produces a non-finite value is reported on stderr.
pub fn set_nan_guard(on: bool) {
    NAN_GUARD.store(on, Ordering::Relaxed);
}

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// rhs shape is a trailing suffix of lhs shape
    AddBroadcast(Var, Var),
    MulBroadcast(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Transpose(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Reshape(Var),
    Sum(Var, usize),
    Mean(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Softmax(Var, usize),
    /// per-row reciprocal standard deviations
    LayerNorm(Var, Vec<f64>),
    Dropout(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation tape. Leaf gradients persist across [`Graph::backward`]
/// calls and accumulate until [`Graph::zero_grad`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Strips leading unit dims so `[1, L, d]` broadcasts like `[L, d]`.
fn squeeze_leading(shape: &[usize]) -> &[usize] {
    let first = shape.iter().position(|&d| d != 1).unwrap_or(shape.len().saturating_sub(1));
    &shape[first..]
}

fn check_suffix(op: &'static str, big: &[usize], small: &[usize]) -> Result<()> {
    let small = squeeze_leading(small);
    if small.len() > big.len() || big[big.len() - small.len()..] != *small {
        return Err(Error::shape(op, format!("{small:?} is not a suffix of {big:?}")));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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
        if NAN_GUARD.load(Ordering::Relaxed) && !value.is_finite() {
            eprintln!("cmlrain:debug: non-finite value produced by {op:?}");
        }
        self.nodes.push(Node { value, op, needs_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of `v`; zeros if nothing reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shape(v)),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    // ---------------------------------------------------------------- ops

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// `a + b` where `b` repeats over the leading dims of `a` (bias rows,
    /// positional tables).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_suffix("add_broadcast", x.shape(), y.shape())?;
        let yd = y.data();
        let n = yd.len();
        let data = x.data().iter().enumerate().map(|(i, v)| v + yd[i % n]).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::AddBroadcast(a, b), ng))
    }

    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_suffix("mul_broadcast", x.shape(), y.shape())?;
        let yd = y.data();
        let n = yd.len();
        let data = x.data().iter().enumerate().map(|(i, v)| v * yd[i % n]).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MulBroadcast(a, b), ng))
    }

    /// Elementwise `scale * x + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|v| scale * v + shift);
        let ng = self.needs(a);
        self.push(out, Op::Affine(a, scale), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// `[..., m, k] · [k, n] -> [..., m, n]`; the right operand is shared
    /// across all leading dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, w) = (self.value(a), self.value(b));
        if x.rank() < 2 || w.rank() != 2 || x.shape()[x.rank() - 1] != w.shape()[0] {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", x.shape(), w.shape())));
        }
        let k = w.shape()[0];
        let n = w.shape()[1];
        let m = x.len() / k;
        let mut out = vec![0.0; m * n];
        gemm_acc(x.data(), w.data(), &mut out, m, k, n);
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul(a, b), ng))
    }

    /// Batched `[..., m, k] · [..., k, n]` with identical leading dims.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let (xr, yr) = (x.rank(), y.rank());
        if xr < 3
            || xr != yr
            || x.shape()[..xr - 2] != y.shape()[..yr - 2]
            || x.shape()[xr - 1] != y.shape()[yr - 2]
        {
            return Err(Error::shape("batch_matmul", format!("{:?} x {:?}", x.shape(), y.shape())));
        }
        let (m, k, n) = (x.shape()[xr - 2], x.shape()[xr - 1], y.shape()[yr - 1]);
        let batch = x.len() / (m * k);
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            gemm_acc(
                &x.data()[bi * m * k..(bi + 1) * m * k],
                &y.data()[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = x.shape().to_vec();
        shape[xr - 1] = n;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::BatchMatMul(a, b), ng))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rank() < 2 {
            return Err(Error::InvalidAxis { axis: 1, rank: x.rank() });
        }
        let out = transpose_last2(x);
        let ng = self.needs(a);
        Ok(self.push(out, Op::Transpose(a), ng))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidAxis { axis, rank: base.len() });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat(parts.to_vec(), axis), ng))
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if axis >= x.rank() {
            return Err(Error::InvalidAxis { axis, rank: x.rank() });
        }
        if start >= end || end > x.shape()[axis] {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{end} on axis {axis} of {:?}", x.shape()),
            ));
        }
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let width = end - start;
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * len * inner;
            out.extend_from_slice(&x.data()[base + start * inner..base + end * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = width;
        let ng = self.needs(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Slice(a, axis, start), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// Sum over `axis`, removing it.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.reduce(a, axis, 1.0)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Sum(a, axis), ng))
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(a)
            .get(axis)
            .ok_or(Error::InvalidAxis { axis, rank: self.shape(a).len() })?;
        let out = self.reduce(a, axis, 1.0 / n as f64)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Mean(a, axis), ng))
    }

    fn reduce(&self, a: Var, axis: usize, factor: f64) -> Result<Tensor> {
        let x = self.value(a);
        if axis >= x.rank() {
            return Err(Error::InvalidAxis { axis, rank: x.rank() });
        }
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                let src = &x.data()[(o * len + i) * inner..(o * len + i + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= factor);
        let mut shape: Vec<usize> = x.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Tensor::from_parts(shape, out))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::MeanAll(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        let ng = self.needs(a);
        self.push(out, Op::Softplus(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let ng = self.needs(a);
        self.push(out, Op::Exp(a), ng)
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        if axis >= x.rank() {
            return Err(Error::InvalidAxis { axis, rank: x.rank() });
        }
        let out = softmax_along(x, axis);
        let ng = self.needs(a);
        Ok(self.push(out, Op::Softmax(a, axis), ng))
    }

    /// Normalizes each row of the last axis to zero mean and unit variance
    /// (biased variance, `eps` added inside the root). No gain or bias.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let x = self.value(a);
        let width = *x.shape().last().ok_or(Error::InvalidAxis { axis: 0, rank: 0 })?;
        let rows = x.len() / width;
        let mut out = Vec::with_capacity(x.len());
        let mut rstds = Vec::with_capacity(rows);
        for row in x.data().chunks_exact(width) {
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            out.extend(row.iter().map(|v| (v - mean) * rstd));
            rstds.push(rstd);
        }
        let out = Tensor::from_parts(x.shape().to_vec(), out);
        let ng = self.needs(a);
        Ok(self.push(out, Op::LayerNorm(a, rstds), ng))
    }

    /// Inverted dropout. Identity when `train` is false or `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, train: bool, rng: &mut SeedRng) -> Var {
        if !train || p <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let x = self.value(a);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        let ng = self.needs(a);
        self.push(out, Op::Dropout(a, mask), ng)
    }

    // ----------------------------------------------------------- backward

    /// Reverse sweep from a scalar `loss`, adding into the stored gradient of
    /// every trainable leaf. Calling twice without [`Graph::zero_grad`]
    /// accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut tmp: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        tmp[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = tmp[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let shape = node.value.shape().to_vec();
                match &mut self.grads[i] {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(Tensor::from_parts(shape, g)),
                }
                continue;
            }
            self.backprop_node(i, &g, &mut tmp);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], tmp: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let val = |v: Var| &nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = tmp[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };

        match &nodes[i].op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * y[k];
                    }
                });
                acc(*b, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * x[k];
                    }
                });
            }
            Op::AddBroadcast(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| {
                    let n = d.len();
                    for (k, gv) in g.iter().enumerate() {
                        d[k % n] += gv;
                    }
                });
            }
            Op::MulBroadcast(a, b) => {
                let (x, y) = (val(*a).data(), val(*b).data());
                let n = y.len();
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * y[k % n];
                    }
                });
                acc(*b, &mut |d| {
                    for k in 0..g.len() {
                        d[k % n] += g[k] * x[k];
                    }
                });
            }
            Op::Affine(a, s) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += s * y)),
            Op::MatMul(a, b) => {
                let (x, w) = (val(*a), val(*b));
                let (k, n) = (w.shape()[0], w.shape()[1]);
                let m = x.len() / k;
                acc(*a, &mut |d| gemm_nt_acc(g, w.data(), d, m, n, k));
                acc(*b, &mut |d| gemm_tn_acc(x.data(), g, d, m, k, n));
            }
            Op::BatchMatMul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let r = x.rank();
                let (m, k, n) = (x.shape()[r - 2], x.shape()[r - 1], y.shape()[r - 1]);
                let batch = x.len() / (m * k);
                acc(*a, &mut |d| {
                    for bi in 0..batch {
                        gemm_nt_acc(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &y.data()[bi * k * n..(bi + 1) * k * n],
                            &mut d[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                });
                acc(*b, &mut |d| {
                    for bi in 0..batch {
                        gemm_tn_acc(
                            &x.data()[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut d[bi * k * n..(bi + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            Op::Transpose(a) => {
                let gt = transpose_last2(&Tensor::from_parts(out.shape().to_vec(), g.to_vec()));
                acc(*a, &mut |d| add_into(d, gt.data()));
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let width = val(p).shape()[*axis];
                    acc(p, &mut |d| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + width) * inner];
                            add_into(&mut d[o * width * inner..(o + 1) * width * inner], src);
                        }
                    });
                    offset += width;
                }
            }
            Op::Slice(a, axis, start) => {
                let (outer, len, inner) = axis_split(val(*a).shape(), *axis);
                let width = out.shape()[*axis];
                acc(*a, &mut |d| {
                    for o in 0..outer {
                        let dst = &mut d[(o * len + start) * inner..(o * len + start + width) * inner];
                        add_into(dst, &g[o * width * inner..(o + 1) * width * inner]);
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |d| add_into(d, g)),
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let (outer, len, inner) = axis_split(val(*a).shape(), *axis);
                let f = if matches!(nodes[i].op, Op::Mean(..)) { 1.0 / len as f64 } else { 1.0 };
                acc(*a, &mut |d| {
                    for o in 0..outer {
                        for l in 0..len {
                            for j in 0..inner {
                                d[(o * len + l) * inner + j] += f * g[o * inner + j];
                            }
                        }
                    }
                });
            }
            Op::SumAll(a) => acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += g[0])),
            Op::MeanAll(a) => {
                let n = val(*a).len() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = out.data();
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                });
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        if x[k] > 0.0 {
                            d[k] += g[k];
                        }
                    }
                });
            }
            Op::Softplus(a) => {
                let x = val(*a).data();
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * sigmoid(x[k]);
                    }
                });
            }
            Op::Exp(a) => {
                let y = out.data();
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * y[k];
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = axis_split(out.shape(), *axis);
                let y = out.data();
                acc(*a, &mut |d| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |l: usize| (o * len + l) * inner + j;
                            let dot: f64 = (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum();
                            for l in 0..len {
                                d[idx(l)] += y[idx(l)] * (g[idx(l)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm(a, rstds) => {
                let width = *out.shape().last().unwrap();
                let y = out.data();
                acc(*a, &mut |d| {
                    for (r, rstd) in rstds.iter().enumerate() {
                        let span = r * width..(r + 1) * width;
                        let (gr, yr) = (&g[span.clone()], &y[span.clone()]);
                        let mean_g = gr.iter().sum::<f64>() / width as f64;
                        let mean_gy = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / width as f64;
                        for (k, dv) in d[span].iter_mut().enumerate() {
                            *dv += rstd * (gr[k] - mean_g - yr[k] * mean_gy);
                        }
                    }
                });
            }
            Op::Dropout(a, mask) => acc(*a, &mut |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * mask[k];
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn transpose_last2(x: &Tensor) -> Tensor {
    let r = x.rank();
    let (m, n) = (x.shape()[r - 2], x.shape()[r - 1]);
    let batch = x.len() / (m * n);
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        let src = &x.data()[b * m * n..(b + 1) * m * n];
        let dst = &mut out[b * m * n..(b + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape.swap(r - 2, r - 1);
    Tensor::from_parts(shape, out)
}

pub(crate) fn softmax_along(x: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let src = x.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |l: usize| (o * len + l) * inner + j;
            let max = (0..len).map(|l| src[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for l in 0..len {
                let e = (src[idx(l)] - max).exp();
                out[idx(l)] = e;
                total += e;
            }
            for l in 0..len {
                out[idx(l)] /= total;
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}
