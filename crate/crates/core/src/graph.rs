//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive applied during a forward pass as a
//! node whose parents always precede it, so the node list is already in
//! topological order. [`Graph::backward`] consumes the graph, walks the list
//! once in reverse and returns the gradients of every trainable parameter
//! and every input leaf created with `requires_grad`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{numel, Real, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        batch: usize,
        out_ch: usize,
        cols: Vec<T>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    GlobalAvgPool(Var),
    Pick(Var, Vec<usize>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Reshape(..) => "reshape",
            Op::Permute(..) => "permute",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumLast(..) => "sum_last",
            Op::GlobalAvgPool(..) => "global_avg_pool",
            Op::Pick(..) => "pick",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Conv2d { x, w, b, .. } => {
                let mut p = vec![*x, *w];
                p.extend(b.iter().copied());
                p
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MulRow(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::Softplus(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Sqrt(x)
            | Op::Square(x)
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::Reshape(x)
            | Op::Permute(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::SumLast(x)
            | Op::GlobalAvgPool(x)
            | Op::Pick(x, _) => vec![*x],
            Op::Slice { x, .. } => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Recorded computation. One graph per forward pass; not shared across
/// threads while recording.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<ParamId, Var>,
    grad_enabled: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    params: BTreeMap<ParamId, Tensor<T>>,
    leaves: BTreeMap<Var, Tensor<T>>,
}

impl<T: Real> Default for Gradients<T> {
    fn default() -> Self {
        Gradients {
            params: BTreeMap::new(),
            leaves: BTreeMap::new(),
        }
    }
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn leaf(&self, var: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&var)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Add another set of parameter gradients into this one.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (id, g) in &other.params {
            match self.params.get_mut(id) {
                Some(acc) => {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.params.insert(*id, g.clone());
                }
            }
        }
    }

    /// Keep only parameter gradients for which `keep` returns true.
    pub fn retain_params(&mut self, mut keep: impl FnMut(ParamId) -> bool) {
        self.params.retain(|id, _| keep(*id));
    }

    pub fn scale(&mut self, k: T) {
        for g in self.params.values_mut() {
            for v in g.data_mut() {
                *v *= k;
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<T: Real> Graph<T> {
    /// A graph that records gradients.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            grad_enabled: true,
        }
    }

    /// A graph for pure inference: nothing requires gradients and no
    /// backward bookkeeping is kept.
    pub fn inference() -> Self {
        Graph {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        let parents = op.parents();
        if cfg!(debug_assertions) && !value.is_finite() {
            let inputs_finite = parents.iter().all(|p| self.nodes[p.0].value.is_finite());
            if inputs_finite {
                return Err(Error::NonFinite(format!("output of {}", op.name())));
            }
        }
        let needs_grad = self.grad_enabled && parents.iter().any(|&p| self.needs(p));
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad && self.grad_enabled,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input data; with `requires_grad` its gradient is reported by
    /// [`Gradients::leaf`].
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.leaf(value, requires_grad, None)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false, None)
    }

    pub fn scalar(&mut self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Bind a trainable parameter. Repeated binds of the same id return the
    /// same node, so a weight reused across time steps has one gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone(), true, Some(id));
        self.params.insert(id, v);
        v
    }

    // ---- linear algebra -------------------------------------------------

    fn check_rank(&self, op: &'static str, v: Var, rank: usize) -> Result<()> {
        if self.shape(v).len() != rank {
            return Err(Error::shape(op, format!("rank {rank}"), format!("{:?}", self.shape(v))));
        }
        Ok(())
    }

    /// `a[m,k] · b[k,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_rank("matmul", a, 2)?;
        self.check_rank("matmul", b, 2)?;
        let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
        let (k2, n) = (self.shape(b)[0], self.shape(b)[1]);
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{k}, _] right operand"), format!("{:?}", self.shape(b))));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::mm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                trans_b: false,
            },
        )
    }

    /// `a[m,k] · b[n,k]ᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_rank("matmul_bt", a, 2)?;
        self.check_rank("matmul_bt", b, 2)?;
        let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
        let (n, k2) = (self.shape(b)[0], self.shape(b)[1]);
        if k != k2 {
            return Err(Error::shape("matmul_bt", format!("[_, {k}] right operand"), format!("{:?}", self.shape(b))));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::mm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                trans_b: true,
            },
        )
    }

    /// Affine map `x[b,in] · w[out,in]ᵀ + bias[out]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul_bt(x, w)?;
        match bias {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// Cross-correlation of `x[B,C,H,W]` with `w[O,C,k,k]` plus `bias[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        self.check_rank("conv2d", x, 4)?;
        self.check_rank("conv2d", w, 4)?;
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (batch, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (out_ch, in_ch, k, k2) = (ws[0], ws[1], ws[2], ws[3]);
        if in_ch != c {
            return Err(Error::shape("conv2d", format!("{in_ch} input channels"), format!("{c} channels in {xs:?}")));
        }
        if k != k2 {
            return Err(Error::shape("conv2d", "square kernel", format!("{ws:?}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [out_ch] {
                return Err(Error::shape("conv2d", format!("bias [{out_ch}]"), format!("{:?}", self.shape(b))));
            }
        }
        let ho = ConvGeom::out_dim(h, k, stride, pad);
        let wo = ConvGeom::out_dim(wd, k, stride, pad);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(Error::shape(
                "conv2d",
                "output spatial size >= 1",
                format!("input {h}x{wd}, kernel {k}, stride {stride}, padding {pad}"),
            ));
        };
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let keep_cols = self.grad_enabled && self.needs(w);
        let mut cols_all = if keep_cols { vec![T::zero(); batch * rows * ncols] } else { Vec::new() };
        let mut scratch = vec![T::zero(); rows * ncols];
        let mut out = vec![T::zero(); batch * out_ch * ncols];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for bi in 0..batch {
                let cols: &mut [T] = if keep_cols {
                    &mut cols_all[bi * rows * ncols..(bi + 1) * rows * ncols]
                } else {
                    &mut scratch
                };
                kernels::im2col(&xv[bi * c * h * wd..(bi + 1) * c * h * wd], &geom, cols);
                let o = &mut out[bi * out_ch * ncols..(bi + 1) * out_ch * ncols];
                kernels::mm_nn(wv, cols, o, out_ch, rows, ncols);
                if let Some(b) = bias {
                    let bv = self.value(b).data();
                    for (oc, &bval) in bv.iter().enumerate() {
                        for v in &mut o[oc * ncols..(oc + 1) * ncols] {
                            *v += bval;
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::from_parts(vec![batch, out_ch, ho, wo], out),
            Op::Conv2d {
                x,
                w,
                b: bias,
                geom,
                batch,
                out_ch,
                cols: cols_all,
            },
        )
    }

    // ---- elementwise ----------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?}", self.shape(a)), format!("{:?}", self.shape(b))));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let av = self.value(a);
        let data = av.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_op(&mut self, x: Var, row: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let n = self.value(row).len();
        let xs = self.shape(x);
        if self.shape(row).len() != 1 || xs.last() != Some(&n) {
            return Err(Error::shape(
                op.name(),
                format!("row vector matching last axis of {xs:?}"),
                format!("{:?}", self.shape(row)),
            ));
        }
        let rv = self.value(row).data();
        let xv = self.value(x);
        let data = xv.data().iter().enumerate().map(|(i, &v)| f(v, rv[i % n])).collect();
        let shape = xv.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), op)
    }

    /// Broadcast-add a `[n]` row over the last axis.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op(x, row, |a, b| a + b, Op::AddRow(x, row))
    }

    /// Broadcast-multiply a `[n]` row over the last axis.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op(x, row, |a, b| a * b, Op::MulRow(x, row))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let value = self.value(x).map(f);
        self.push(value, op)
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var> {
        self.unary(x, |v| v * k, Op::Scale(x, k))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -T::one())
    }

    pub fn add_scalar(&mut self, x: Var, k: T) -> Result<Var> {
        self.unary(x, |v| v + k, Op::AddScalar(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    /// Square root; its derivative at 0 is taken as 0 so that norms of
    /// vanishing vectors stay differentiable.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.sqrt(), Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Softmax over the last axis, stabilised by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv.shape().last().ok_or_else(|| Error::shape("softmax", "rank >= 1", "scalar"))?;
        let mut out = vec![T::zero(); xv.len()];
        for (row, o) in xv.data().chunks(n).zip(out.chunks_mut(n)) {
            kernels::softmax_row(row, o);
        }
        let shape = xv.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Softmax(x))
    }

    /// Log-softmax over the last axis, stabilised by max subtraction.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv.shape().last().ok_or_else(|| Error::shape("log_softmax", "rank >= 1", "scalar"))?;
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            out.extend(row.iter().map(|&v| v - lse));
        }
        let shape = xv.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::LogSoftmax(x))
    }

    // ---- shape ----------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push(value, Op::Reshape(x))
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let xs = self.shape(x);
        let mut seen = vec![false; xs.len()];
        if axes.len() != xs.len() || axes.iter().any(|&a| a >= xs.len() || core::mem::replace(&mut seen[a], true)) {
            return Err(Error::contract("permute", format!("{axes:?} is not a permutation of rank {}", xs.len())));
        }
        let (shape, data) = kernels::permute(self.value(x).data(), xs, axes);
        self.push(Tensor::from_parts(shape, data), Op::Permute(x, axes.to_vec()))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.check_rank("transpose", x, 2)?;
        self.permute(x, &[1, 0])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat(&values, axis)?;
        self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || start >= end || end > xs[axis] {
            return Err(Error::contract("slice", format!("range {start}..{end} on axis {axis} of {xs:?}")));
        }
        let outer = numel(&xs[..axis]);
        let inner = numel(&xs[axis + 1..]);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * xs[axis] * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut shape = xs;
        shape[axis] = end - start;
        self.push(Tensor::from_parts(shape, data), Op::Slice { x, axis, start })
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.sum() / T::of(v.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Sum over the last axis, dropping it.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let n = *xs.last().ok_or_else(|| Error::shape("sum_last", "rank >= 1", "scalar"))?;
        let data = self.value(x).data().chunks(n).map(|c| c.iter().copied().sum()).collect();
        self.push(Tensor::from_parts(xs[..xs.len() - 1].to_vec(), data), Op::SumLast(x))
    }

    /// Mean over the spatial axes of `[B,C,H,W]`, giving `[B,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.check_rank("global_avg_pool", x, 4)?;
        let xs = self.shape(x).to_vec();
        let hw = xs[2] * xs[3];
        let norm = T::one() / T::of(hw as f64);
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|c| c.iter().copied().sum::<T>() * norm)
            .collect();
        self.push(Tensor::from_parts(vec![xs[0], xs[1]], data), Op::GlobalAvgPool(x))
    }

    /// Gather elements by flat index into a `[n]` vector.
    pub fn pick(&mut self, x: Var, flat: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = flat.iter().find(|&&i| i >= xv.len()) {
            return Err(Error::contract("pick", format!("index {bad} out of range for {} elements", xv.len())));
        }
        if flat.is_empty() {
            return Err(Error::contract("pick", "no indices"));
        }
        let data = flat.iter().map(|&i| xv.data()[i]).collect();
        self.push(Tensor::from_parts(vec![flat.len()], data), Op::Pick(x, flat.to_vec()))
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a one-element `loss`. Consumes the graph.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be a scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                let t = Tensor::from_parts(node.value.shape().to_vec(), dy);
                match node.param {
                    Some(id) => out.params.insert(id, t),
                    None => out.leaves.insert(Var(i), t),
                };
                continue;
            }
            for p in node.op.parents() {
                if p.0 >= i {
                    return Err(Error::Internal(format!(
                        "tape order violated: node {i} has parent {}",
                        p.0
                    )));
                }
            }
            self.backprop_node(i, &dy, &mut grads);
        }
        Ok(out)
    }

    fn backprop_node(&self, i: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let nodes = &self.nodes;
        // Run `f` on the gradient buffer of `v` if it needs one.
        let mut with = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
            f(slot);
        };
        let val = |v: Var| nodes[v.0].value.data();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n, trans_b } => {
                let (m, k, n) = (*m, *k, *n);
                if *trans_b {
                    with(*a, &mut |g| kernels::mm_nn(dy, val(*b), g, m, n, k));
                    with(*b, &mut |g| kernels::mm_tn(dy, val(*a), g, n, m, k));
                } else {
                    with(*a, &mut |g| kernels::mm_nt(dy, val(*b), g, m, n, k));
                    with(*b, &mut |g| kernels::mm_tn(val(*a), dy, g, k, m, n));
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                batch,
                out_ch,
                cols,
            } => {
                let (rows, ncols) = (geom.col_rows(), geom.col_cols());
                let plane = out_ch * ncols;
                if let Some(b) = b {
                    with(*b, &mut |g| {
                        for bi in 0..*batch {
                            for (oc, gv) in g.iter_mut().enumerate() {
                                let s = bi * plane + oc * ncols;
                                *gv += dy[s..s + ncols].iter().copied().sum::<T>();
                            }
                        }
                    });
                }
                with(*w, &mut |g| {
                    for bi in 0..*batch {
                        let c = &cols[bi * rows * ncols..(bi + 1) * rows * ncols];
                        kernels::mm_nt(&dy[bi * plane..(bi + 1) * plane], c, g, *out_ch, ncols, rows);
                    }
                });
                let wv = val(*w);
                let img = geom.c * geom.h * geom.w;
                with(*x, &mut |g| {
                    let mut dcols = vec![T::zero(); rows * ncols];
                    for bi in 0..*batch {
                        dcols.iter_mut().for_each(|v| *v = T::zero());
                        kernels::mm_tn(wv, &dy[bi * plane..(bi + 1) * plane], &mut dcols, rows, *out_ch, ncols);
                        kernels::col2im(&dcols, geom, &mut g[bi * img..(bi + 1) * img]);
                    }
                });
            }
            Op::Add(a, b) => {
                with(*a, &mut |g| add_into(g, dy));
                with(*b, &mut |g| add_into(g, dy));
            }
            Op::Sub(a, b) => {
                with(*a, &mut |g| add_into(g, dy));
                with(*b, &mut |g| {
                    for (gv, &d) in g.iter_mut().zip(dy) {
                        *gv -= d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                with(*a, &mut |g| {
                    for ((gv, &d), &o) in g.iter_mut().zip(dy).zip(bv) {
                        *gv += d * o;
                    }
                });
                with(*b, &mut |g| {
                    for ((gv, &d), &o) in g.iter_mut().zip(dy).zip(av) {
                        *gv += d * o;
                    }
                });
            }
            Op::AddRow(x, row) => {
                let n = nodes[row.0].value.len();
                with(*x, &mut |g| add_into(g, dy));
                with(*row, &mut |g| {
                    for (j, &d) in dy.iter().enumerate() {
                        g[j % n] += d;
                    }
                });
            }
            Op::MulRow(x, row) => {
                let rv = val(*row);
                let xv = val(*x);
                let n = rv.len();
                with(*x, &mut |g| {
                    for (j, (gv, &d)) in g.iter_mut().zip(dy).enumerate() {
                        *gv += d * rv[j % n];
                    }
                });
                with(*row, &mut |g| {
                    for (j, (&d, &xv)) in dy.iter().zip(xv).enumerate() {
                        g[j % n] += d * xv;
                    }
                });
            }
            Op::Scale(x, k) => with(*x, &mut |g| {
                for (gv, &d) in g.iter_mut().zip(dy) {
                    *gv += d * *k;
                }
            }),
            Op::AddScalar(x) | Op::Reshape(x) => with(*x, &mut |g| add_into(g, dy)),
            Op::Tanh(x) => with(*x, &mut |g| {
                for ((gv, &d), &o) in g.iter_mut().zip(dy).zip(y) {
                    *gv += d * (T::one() - o * o);
                }
            }),
            Op::Sigmoid(x) => with(*x, &mut |g| {
                for ((gv, &d), &o) in g.iter_mut().zip(dy).zip(y) {
                    *gv += d * o * (T::one() - o);
                }
            }),
            Op::Relu(x) => {
                let xv = val(*x);
                with(*x, &mut |g| {
                    for ((gv, &d), &v) in g.iter_mut().zip(dy).zip(xv) {
                        if v > T::zero() {
                            *gv += d;
                        }
                    }
                })
            }
            Op::Softplus(x) => {
                let xv = val(*x);
                with(*x, &mut |g| {
                    for ((gv, &d), &v) in g.iter_mut().zip(dy).zip(xv) {
                        *gv += d * sigmoid(v);
                    }
                })
            }
            Op::Exp(x) => with(*x, &mut |g| {
                for ((gv, &d), &o) in g.iter_mut().zip(dy).zip(y) {
                    *gv += d * o;
                }
            }),
            Op::Log(x) => {
                let xv = val(*x);
                with(*x, &mut |g| {
                    for ((gv, &d), &v) in g.iter_mut().zip(dy).zip(xv) {
                        *gv += d / v;
                    }
                })
            }
            Op::Sqrt(x) => {
                let half = T::of(0.5);
                with(*x, &mut |g| {
                    for ((gv, &d), &o) in g.iter_mut().zip(dy).zip(y) {
                        if o > T::zero() {
                            *gv += d * half / o;
                        }
                    }
                })
            }
            Op::Square(x) => {
                let xv = val(*x);
                let two = T::of(2.0);
                with(*x, &mut |g| {
                    for ((gv, &d), &v) in g.iter_mut().zip(dy).zip(xv) {
                        *gv += d * two * v;
                    }
                })
            }
            Op::Softmax(x) => {
                let n = *node.value.shape().last().unwrap_or(&1);
                with(*x, &mut |g| {
                    for ((gr, dr), yr) in g.chunks_mut(n).zip(dy.chunks(n)).zip(y.chunks(n)) {
                        let s: T = dr.iter().zip(yr).map(|(&d, &o)| d * o).sum();
                        for ((gv, &d), &o) in gr.iter_mut().zip(dr).zip(yr) {
                            *gv += o * (d - s);
                        }
                    }
                })
            }
            Op::LogSoftmax(x) => {
                let n = *node.value.shape().last().unwrap_or(&1);
                with(*x, &mut |g| {
                    for ((gr, dr), yr) in g.chunks_mut(n).zip(dy.chunks(n)).zip(y.chunks(n)) {
                        let s: T = dr.iter().copied().sum();
                        for ((gv, &d), &o) in gr.iter_mut().zip(dr).zip(yr) {
                            *gv += d - o.exp() * s;
                        }
                    }
                })
            }
            Op::Permute(x, axes) => {
                let inv = kernels::inverse_axes(axes);
                let (_, back) = kernels::permute(dy, node.value.shape(), &inv);
                with(*x, &mut |g| add_into(g, &back));
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer = numel(&shape[..*axis]);
                let inner = numel(&shape[axis + 1..]);
                let total = shape[*axis];
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.shape()[*axis];
                    with(p, &mut |g| {
                        for o in 0..outer {
                            let src = &dy[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            add_into(&mut g[o * len * inner..(o + 1) * len * inner], src);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = nodes[x.0].value.shape();
                let outer = numel(&xs[..*axis]);
                let inner = numel(&xs[axis + 1..]);
                let full = xs[*axis];
                let len = node.value.shape()[*axis];
                with(*x, &mut |g| {
                    for o in 0..outer {
                        let dst = &mut g[(o * full + start) * inner..(o * full + start + len) * inner];
                        add_into(dst, &dy[o * len * inner..(o + 1) * len * inner]);
                    }
                });
            }
            Op::Sum(x) => with(*x, &mut |g| {
                for gv in g.iter_mut() {
                    *gv += dy[0];
                }
            }),
            Op::Mean(x) => with(*x, &mut |g| {
                let d = dy[0] / T::of(g.len() as f64);
                for gv in g.iter_mut() {
                    *gv += d;
                }
            }),
            Op::SumLast(x) => {
                let n = *nodes[x.0].value.shape().last().unwrap_or(&1);
                with(*x, &mut |g| {
                    for (gr, &d) in g.chunks_mut(n).zip(dy) {
                        for gv in gr.iter_mut() {
                            *gv += d;
                        }
                    }
                })
            }
            Op::GlobalAvgPool(x) => {
                let xs = nodes[x.0].value.shape();
                let hw = xs[2] * xs[3];
                let norm = T::one() / T::of(hw as f64);
                with(*x, &mut |g| {
                    for (gr, &d) in g.chunks_mut(hw).zip(dy) {
                        for gv in gr.iter_mut() {
                            *gv += d * norm;
                        }
                    }
                })
            }
            Op::Pick(x, idx) => with(*x, &mut |g| {
                for (&j, &d) in idx.iter().zip(dy) {
                    g[j] += d;
                }
            }),
        }
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Real>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}
