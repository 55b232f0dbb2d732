//! Dynamic reverse-mode differentiation tape over dense `f64` tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass. Operations append nodes and
//! return lightweight [`Var`] handles; [`Tape::backward`] walks the nodes in
//! reverse and accumulates vector-Jacobian products. Binary elementwise ops
//! follow numpy broadcasting rules, and gradients of broadcast operands are
//! reduced back to the operand's shape.
//!
//! Every op validates shapes and returns [`Error::Shape`] naming the op and
//! the offending shapes. In debug builds every op output is also scanned for
//! NaN/Inf.

use std::cell::{Cell, Ref, RefCell};
use std::sync::atomic::{AtomicU32, Ordering};

use super::tensor::{strides, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Maximum(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    IndexSelect {
        x: Var,
        axis: usize,
        indices: Vec<usize>,
    },
    Broadcast(Var),
    SoftmaxLast(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    LayerNorm {
        x: Var,
        rstd: Vec<f64>,
    },
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Abs(Var),
    Sin(Var),
    Cos(Var),
    Pow(Var, f64),
    Atan2(Var, Var),
    SumAll(Var),
    SumAxis(Var, usize),
    MinAxis {
        x: Var,
        axis: usize,
        argmin: Vec<usize>,
    },
    NormLast(Var),
    Bilinear {
        grid: Var,
        coords: Var,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Maximum(..) => "maximum",
            Op::Minimum(..) => "minimum",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(..) => "reshape",
            Op::Permute(..) => "permute",
            Op::IndexSelect { .. } => "index_select",
            Op::Broadcast(..) => "broadcast_to",
            Op::SoftmaxLast(..) => "softmax_lastdim",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Abs(..) => "abs",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Pow(..) => "powf",
            Op::Atan2(..) => "atan2",
            Op::SumAll(..) => "sum",
            Op::SumAxis(..) => "sum_axis",
            Op::MinAxis { .. } => "min_axis",
            Op::NormLast(..) => "norm_lastdim",
            Op::Bilinear { .. } => "bilinear_sample",
        }
    }
}

/// Names of the differentiable operations, as reported by errors and
/// accepted by [`Tape::corrupt_backward`].
pub const OP_NAMES: &[&str] = &[
    "matmul", "add", "sub", "mul", "div", "maximum", "minimum", "scale", "add_scalar", "concat", "slice", "reshape",
    "permute", "index_select", "broadcast_to", "softmax_lastdim", "relu", "sigmoid", "softplus", "layer_norm", "exp",
    "log", "sqrt", "abs", "sin", "cos", "powf", "atan2", "sum", "sum_axis", "min_axis", "norm_lastdim",
    "bilinear_sample",
];

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        assert_eq!(v.tape, self.tape, "variable from a different tape");
        let shape = &self.shapes[v.index()];
        match &self.grads[v.index()] {
            Some(g) => Tensor::from_parts(shape.clone(), g.clone()),
            None => Tensor::zeros(shape),
        }
    }

    pub fn is_reached(&self, v: Var) -> bool {
        self.grads[v.index()].is_some()
    }
}

pub struct Tape {
    id: u32,
    nodes: RefCell<Vec<Node>>,
    corrupt: Cell<Option<(&'static str, f64)>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            corrupt: Cell::new(None),
        }
    }

    /// Test hook: every backward pass through operations named `op` scales
    /// the propagated gradient by `1 + factor`.
    pub fn corrupt_backward(&self, op: &'static str, factor: f64) {
        self.corrupt.set(Some((op, factor)));
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records `t` as a leaf. It participates in differentiation iff
    /// `t.requires_grad()`.
    pub fn leaf(&self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.push_unchecked(t, Op::Leaf, needs_grad)
    }

    pub fn constant(&self, t: Tensor) -> Var {
        self.push_unchecked(t.with_requires_grad(false), Op::Leaf, false)
    }

    /// Copy of `v`'s value that blocks gradients.
    pub fn detach(&self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn scalar(&self, v: f64) -> Result<Var> {
        Ok(self.constant(Tensor::scalar(v)?))
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        self.check(v);
        Ref::map(self.nodes.borrow(), |n| &n[v.index()].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn data(&self, v: Var) -> Vec<f64> {
        self.value(v).data().to_vec()
    }

    pub fn item(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.check(v);
        self.nodes.borrow()[v.index()].needs_grad
    }

    fn check(&self, v: Var) {
        assert_eq!(v.tape, self.id, "variable used on a foreign tape");
    }

    fn push_unchecked(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var { tape: self.id, idx }
    }

    fn push(&self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if cfg!(debug_assertions) && value.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let needs_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.index()].needs_grad)
        };
        Ok(self.push_unchecked(value, op, needs_grad))
    }

    // ------------------------------------------------------------------
    // Linear algebra
    // ------------------------------------------------------------------

    /// `(m,k)@(k,n)` or batched `(b,m,k)@(b,k,n)`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (batch, m, k, n) = matmul_dims(&sa, &sb)?;
        let out = {
            let va = self.value(a);
            let vb = self.value(b);
            let mut out = vec![0.0; batch * m * n];
            for bi in 0..batch {
                mm(
                    &va.data()[bi * m * k..(bi + 1) * m * k],
                    &vb.data()[bi * k * n..(bi + 1) * k * n],
                    m,
                    k,
                    n,
                    &mut out[bi * m * n..(bi + 1) * m * n],
                );
            }
            let shape = if sa.len() == 3 { vec![batch, m, n] } else { vec![m, n] };
            Tensor::from_parts(shape, out)
        };
        self.push("matmul", out, Op::Matmul(a, b), &[a, b])
    }

    /// Swaps the last two axes.
    pub fn transpose(&self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(Error::shape("transpose", format!("rank {r} < 2")));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    // ------------------------------------------------------------------
    // Broadcasting elementwise binaries
    // ------------------------------------------------------------------

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn maximum(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("maximum", a, b, f64::max, Op::Maximum(a, b))
    }

    pub fn minimum(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("minimum", a, b, f64::min, Op::Minimum(a, b))
    }

    fn binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let out = {
            let va = self.value(a);
            let vb = self.value(b);
            let shape = broadcast_shape(va.shape(), vb.shape())
                .ok_or_else(|| Error::shape(name, format!("{:?} vs {:?}", va.shape(), vb.shape())))?;
            let data = if va.shape() == vb.shape() {
                va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect()
            } else {
                let oa = broadcast_offsets(va.shape(), &shape);
                let ob = broadcast_offsets(vb.shape(), &shape);
                oa.iter()
                    .zip(&ob)
                    .map(|(&i, &j)| f(va.data()[i], vb.data()[j]))
                    .collect()
            };
            Tensor::from_parts(shape, data)
        };
        self.push(name, out, op, &[a, b])
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + s, Op::AddScalar(a))
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// `s - a`
    pub fn rsub_scalar(&self, s: f64, a: Var) -> Result<Var> {
        let n = self.neg(a)?;
        self.add_scalar(n, s)
    }

    // ------------------------------------------------------------------
    // Elementwise unaries
    // ------------------------------------------------------------------

    fn unary(&self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = {
            let va = self.value(a);
            Tensor::from_parts(va.shape().to_vec(), va.data().iter().map(|&x| f(x)).collect())
        };
        self.push(name, out, op, &[a])
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid_value, Op::Sigmoid(a))
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&self, a: Var) -> Result<Var> {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::NonFinite { op: "log" });
        }
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn sqrt(&self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(Error::NonFinite { op: "sqrt" });
        }
        self.unary("sqrt", a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn abs(&self, a: Var) -> Result<Var> {
        self.unary("abs", a, f64::abs, Op::Abs(a))
    }

    pub fn sin(&self, a: Var) -> Result<Var> {
        self.unary("sin", a, f64::sin, Op::Sin(a))
    }

    pub fn cos(&self, a: Var) -> Result<Var> {
        self.unary("cos", a, f64::cos, Op::Cos(a))
    }

    /// `a^e` for non-negative `a`.
    pub fn powf(&self, a: Var, e: f64) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(Error::NonFinite { op: "powf" });
        }
        self.unary("powf", a, |x| x.powf(e), Op::Pow(a, e))
    }

    /// Elementwise `atan2(y, x)`; both operands must share a shape.
    pub fn atan2(&self, y: Var, x: Var) -> Result<Var> {
        let (sy, sx) = (self.shape(y), self.shape(x));
        if sy != sx {
            return Err(Error::shape("atan2", format!("{sy:?} vs {sx:?}")));
        }
        let out = {
            let vy = self.value(y);
            let vx = self.value(x);
            let d = vy.data().iter().zip(vx.data()).map(|(&a, &b)| a.atan2(b)).collect();
            Tensor::from_parts(sy, d)
        };
        self.push("atan2", out, Op::Atan2(y, x), &[y, x])
    }

    pub fn softmax_lastdim(&self, a: Var) -> Result<Var> {
        let out = {
            let va = self.value(a);
            let n = *va.shape().last().ok_or_else(|| Error::shape("softmax_lastdim", "scalar input"))?;
            let mut d = va.data().to_vec();
            for row in d.chunks_mut(n.max(1)) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    s += *v;
                }
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
            Tensor::from_parts(va.shape().to_vec(), d)
        };
        self.push("softmax_lastdim", out, Op::SoftmaxLast(a), &[a])
    }

    /// Normalizes over the last axis (no affine terms; apply gain and bias
    /// with `mul`/`add`).
    pub fn layer_norm(&self, a: Var, eps: f64) -> Result<Var> {
        let (out, rstd) = {
            let va = self.value(a);
            let n = *va.shape().last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
            let mut d = va.data().to_vec();
            let mut rstd = Vec::with_capacity(d.len() / n.max(1));
            for row in d.chunks_mut(n) {
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let r = 1.0 / (var + eps).sqrt();
                for v in row.iter_mut() {
                    *v = (*v - mean) * r;
                }
                rstd.push(r);
            }
            (Tensor::from_parts(va.shape().to_vec(), d), rstd)
        };
        self.push("layer_norm", out, Op::LayerNorm { x: a, rstd }, &[a])
    }

    /// Euclidean norm over the last axis. The gradient at a zero vector is
    /// taken to be zero.
    pub fn norm_lastdim(&self, a: Var) -> Result<Var> {
        let out = {
            let va = self.value(a);
            let shape = va.shape();
            let n = *shape.last().ok_or_else(|| Error::shape("norm_lastdim", "scalar input"))?;
            let d = va
                .data()
                .chunks(n)
                .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect();
            Tensor::from_parts(shape[..shape.len() - 1].to_vec(), d)
        };
        self.push("norm_lastdim", out, Op::NormLast(a), &[a])
    }

    // ------------------------------------------------------------------
    // Reductions
    // ------------------------------------------------------------------

    pub fn sum(&self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum::<f64>();
        self.push("sum", Tensor::from_parts(vec![], vec![s]), Op::SumAll(a), &[a])
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let out = {
            let va = self.value(a);
            let (outer, n, inner) = split_axis("sum_axis", va.shape(), axis)?;
            let mut d = vec![0.0; outer * inner];
            for o in 0..outer {
                for j in 0..n {
                    let src = &va.data()[(o * n + j) * inner..(o * n + j + 1) * inner];
                    for (acc, v) in d[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *acc += v;
                    }
                }
            }
            let mut shape = va.shape().to_vec();
            shape.remove(axis);
            Tensor::from_parts(shape, d)
        };
        self.push("sum_axis", out, Op::SumAxis(a, axis), &[a])
    }

    pub fn mean_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(a)
            .get(axis)
            .ok_or_else(|| Error::shape("mean_axis", format!("axis {axis} out of range")))?;
        if n == 0 {
            return Err(Error::shape("mean_axis", "empty axis"));
        }
        let s = self.sum_axis(a, axis)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Minimum over `axis`, removing it. The gradient flows to the first
    /// minimizing entry.
    pub fn min_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let (out, argmin) = {
            let va = self.value(a);
            let (outer, n, inner) = split_axis("min_axis", va.shape(), axis)?;
            if n == 0 {
                return Err(Error::shape("min_axis", "empty axis"));
            }
            let mut d = vec![f64::INFINITY; outer * inner];
            let mut arg = vec![0usize; outer * inner];
            for o in 0..outer {
                for j in 0..n {
                    for i in 0..inner {
                        let v = va.data()[(o * n + j) * inner + i];
                        let k = o * inner + i;
                        if v < d[k] {
                            d[k] = v;
                            arg[k] = j;
                        }
                    }
                }
            }
            let mut shape = va.shape().to_vec();
            shape.remove(axis);
            (Tensor::from_parts(shape, d), arg)
        };
        self.push("min_axis", out, Op::MinAxis { x: a, axis, argmin }, &[a])
    }

    // ------------------------------------------------------------------
    // Shape manipulation
    // ------------------------------------------------------------------

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(shape)?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    pub fn permute(&self, a: Var, perm: &[usize]) -> Result<Var> {
        let out = {
            let va = self.value(a);
            let shape = va.shape();
            let mut seen = vec![false; shape.len()];
            if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
                return Err(Error::shape("permute", format!("{perm:?} for shape {shape:?}")));
            }
            let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
            let map = permute_offsets(shape, perm);
            let d = map.iter().map(|&i| va.data()[i]).collect();
            Tensor::from_parts(out_shape, d)
        };
        self.push("permute", out, Op::Permute(a, perm.to_vec()), &[a])
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first);
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        let mut shapes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
            shapes.push(s);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut d = Vec::with_capacity(outer * total * inner);
        {
            let nodes = self.nodes.borrow();
            for o in 0..outer {
                for (p, s) in parts.iter().zip(&shapes) {
                    let chunk = s[axis] * inner;
                    d.extend_from_slice(&nodes[p.index()].value.data()[o * chunk..(o + 1) * chunk]);
                }
            }
        }
        let mut shape = base.clone();
        shape[axis] = total;
        self.push("concat", Tensor::from_parts(shape, d), Op::Concat(parts.to_vec(), axis), parts)
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let out = {
            let va = self.value(a);
            let (outer, n, inner) = split_axis("slice", va.shape(), axis)?;
            if start > end || end > n {
                return Err(Error::shape("slice", format!("{start}..{end} on axis of size {n}")));
            }
            let w = end - start;
            let mut d = Vec::with_capacity(outer * w * inner);
            for o in 0..outer {
                d.extend_from_slice(&va.data()[(o * n + start) * inner..(o * n + end) * inner]);
            }
            let mut shape = va.shape().to_vec();
            shape[axis] = w;
            Tensor::from_parts(shape, d)
        };
        self.push("slice", out, Op::Slice { x: a, axis, start }, &[a])
    }

    /// Gathers `indices` along `axis` (repeats allowed).
    pub fn index_select(&self, a: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let out = {
            let va = self.value(a);
            let (outer, n, inner) = split_axis("index_select", va.shape(), axis)?;
            if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
                return Err(Error::shape("index_select", format!("index {bad} on axis of size {n}")));
            }
            let mut d = Vec::with_capacity(outer * indices.len() * inner);
            for o in 0..outer {
                for &i in indices {
                    d.extend_from_slice(&va.data()[(o * n + i) * inner..(o * n + i + 1) * inner]);
                }
            }
            let mut shape = va.shape().to_vec();
            shape[axis] = indices.len();
            Tensor::from_parts(shape, d)
        };
        self.push(
            "index_select",
            out,
            Op::IndexSelect {
                x: a,
                axis,
                indices: indices.to_vec(),
            },
            &[a],
        )
    }

    pub fn broadcast_to(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = {
            let va = self.value(a);
            match broadcast_shape(va.shape(), shape) {
                Some(s) if s == shape => {}
                _ => return Err(Error::shape("broadcast", format!("{:?} -> {shape:?}", va.shape()))),
            }
            let off = broadcast_offsets(va.shape(), shape);
            Tensor::from_parts(shape.to_vec(), off.iter().map(|&i| va.data()[i]).collect())
        };
        self.push("broadcast", out, Op::Broadcast(a), &[a])
    }

    // ------------------------------------------------------------------
    // Sampling
    // ------------------------------------------------------------------

    /// Bilinear interpolation of `grid` (H×W×C) at `coords` (P×2, row then
    /// column, in continuous cell units). Corners outside the grid read as
    /// zero. Differentiable in both the grid and the coordinates.
    pub fn bilinear_sample(&self, grid: Var, coords: Var) -> Result<Var> {
        let out = {
            let g = self.value(grid);
            let c = self.value(coords);
            let gs = g.shape();
            let cs = c.shape();
            if gs.len() != 3 || gs[0] < 2 || gs[1] < 2 || cs.len() != 2 || cs[1] != 2 {
                return Err(Error::shape("bilinear_sample", format!("grid {gs:?}, coords {cs:?}")));
            }
            let (h, w, ch) = (gs[0], gs[1], gs[2]);
            let p = cs[0];
            let mut d = vec![0.0; p * ch];
            for (pi, rc) in c.data().chunks(2).enumerate() {
                let out = &mut d[pi * ch..(pi + 1) * ch];
                for (ri, ci, wgt) in bilinear_corners(rc[0], rc[1], h, w).into_iter().flatten() {
                    let src = &g.data()[(ri * w + ci) * ch..(ri * w + ci + 1) * ch];
                    for (o, s) in out.iter_mut().zip(src) {
                        *o += wgt.weight * s;
                    }
                }
            }
            Tensor::from_parts(vec![p, ch], d)
        };
        self.push("bilinear_sample", out, Op::Bilinear { grid, coords }, &[grid, coords])
    }

    // ------------------------------------------------------------------
    // Backward
    // ------------------------------------------------------------------

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss);
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.index()];
        if root.value.numel() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.needs_grad {
            return Err(Error::Tape(
                "loss is not connected to any variable that requires gradients".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.index() + 1];
        grads[loss.index()] = Some(vec![1.0]);

        for idx in (0..=loss.index()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match self.corrupt.get() {
                Some((op, factor)) if op == node.op.name() => {
                    let scaled: Vec<f64> = g.iter().map(|v| v * (1.0 + factor)).collect();
                    backprop_node(&nodes, node, &scaled, &mut grads)?;
                }
                _ => backprop_node(&nodes, node, &g, &mut grads)?,
            }
            grads[idx] = Some(g);
        }

        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Tape(format!("non-finite gradient at node {i}")));
                }
            }
        }
        grads.resize(nodes.len(), None);
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, f: impl FnOnce(&mut [f64])) {
    let node = &nodes[v.index()];
    if !node.needs_grad {
        return;
    }
    let slot = grads[v.index()].get_or_insert_with(|| vec![0.0; node.value.numel()]);
    f(slot);
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
    let val = |v: Var| &nodes[v.index()].value;
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (sa, sb) = (val(*a).shape(), val(*b).shape());
            let (batch, m, k, n) = matmul_dims(sa, sb)?;
            let (da, db) = (val(*a).data(), val(*b).data());
            accumulate(grads, nodes, *a, |ga| {
                for bi in 0..batch {
                    let gb = &g[bi * m * n..(bi + 1) * m * n];
                    let bb = &db[bi * k * n..(bi + 1) * k * n];
                    let out = &mut ga[bi * m * k..(bi + 1) * m * k];
                    for i in 0..m {
                        let grow = &gb[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bb[p * n..(p + 1) * n];
                            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
            });
            accumulate(grads, nodes, *b, |gbm| {
                for bi in 0..batch {
                    let gb = &g[bi * m * n..(bi + 1) * m * n];
                    let ab = &da[bi * m * k..(bi + 1) * m * k];
                    let out = &mut gbm[bi * k * n..(bi + 1) * k * n];
                    for i in 0..m {
                        let grow = &gb[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ab[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (o, gv) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += aip * gv;
                            }
                        }
                    }
                }
            });
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Maximum(a, b) | Op::Minimum(a, b) => {
            let out_shape = node.value.shape();
            let (va, vb) = (val(*a), val(*b));
            let same = va.shape() == out_shape && vb.shape() == out_shape;
            let oa = if same { Vec::new() } else { broadcast_offsets(va.shape(), out_shape) };
            let ob = if same { Vec::new() } else { broadcast_offsets(vb.shape(), out_shape) };
            let ia = |i: usize| if same { i } else { oa[i] };
            let ib = |i: usize| if same { i } else { ob[i] };
            let (xa, xb) = (va.data(), vb.data());
            let op = &node.op;
            accumulate(grads, nodes, *a, |ga| {
                for (i, gv) in g.iter().enumerate() {
                    let (x, yv) = (xa[ia(i)], xb[ib(i)]);
                    let d = match op {
                        Op::Add(..) | Op::Sub(..) => 1.0,
                        Op::Mul(..) => yv,
                        Op::Div(..) => 1.0 / yv,
                        Op::Maximum(..) => f64::from(u8::from(x >= yv)),
                        _ => f64::from(u8::from(x <= yv)),
                    };
                    ga[ia(i)] += gv * d;
                }
            });
            accumulate(grads, nodes, *b, |gb| {
                for (i, gv) in g.iter().enumerate() {
                    let (x, yv) = (xa[ia(i)], xb[ib(i)]);
                    let d = match op {
                        Op::Add(..) => 1.0,
                        Op::Sub(..) => -1.0,
                        Op::Mul(..) => x,
                        Op::Div(..) => -x / (yv * yv),
                        Op::Maximum(..) => f64::from(u8::from(yv > x)),
                        _ => f64::from(u8::from(yv < x)),
                    };
                    gb[ib(i)] += gv * d;
                }
            });
        }
        Op::Scale(a, s) => accumulate(grads, nodes, *a, |ga| {
            for (o, gv) in ga.iter_mut().zip(g) {
                *o += gv * s;
            }
        }),
        Op::AddScalar(a) | Op::Reshape(a) => accumulate(grads, nodes, *a, |ga| add_into(ga, g)),
        Op::Concat(parts, axis) => {
            let base = val(parts[0]).shape();
            let outer: usize = base[..*axis].iter().product();
            let inner: usize = base[axis + 1..].iter().product();
            let total: usize = parts.iter().map(|p| val(*p).shape()[*axis]).sum();
            let mut start = 0;
            for p in parts {
                let w = val(*p).shape()[*axis];
                accumulate(grads, nodes, *p, |gp| {
                    for o in 0..outer {
                        let src = &g[(o * total + start) * inner..(o * total + start + w) * inner];
                        add_into(&mut gp[o * w * inner..(o + 1) * w * inner], src);
                    }
                });
                start += w;
            }
        }
        Op::Slice { x, axis, start } => {
            let (outer, n, inner) = split_axis("slice", val(*x).shape(), *axis)?;
            let w = node.value.shape()[*axis];
            accumulate(grads, nodes, *x, |gx| {
                for o in 0..outer {
                    let dst = &mut gx[(o * n + start) * inner..(o * n + start + w) * inner];
                    add_into(dst, &g[o * w * inner..(o + 1) * w * inner]);
                }
            });
        }
        Op::Permute(a, perm) => {
            let map = permute_offsets(val(*a).shape(), perm);
            accumulate(grads, nodes, *a, |ga| {
                for (i, gv) in map.iter().zip(g) {
                    ga[*i] += gv;
                }
            });
        }
        Op::IndexSelect { x, axis, indices } => {
            let (outer, n, inner) = split_axis("index_select", val(*x).shape(), *axis)?;
            let k = indices.len();
            accumulate(grads, nodes, *x, |gx| {
                for o in 0..outer {
                    for (j, &i) in indices.iter().enumerate() {
                        let dst = &mut gx[(o * n + i) * inner..(o * n + i + 1) * inner];
                        add_into(dst, &g[(o * k + j) * inner..(o * k + j + 1) * inner]);
                    }
                }
            });
        }
        Op::Broadcast(a) => {
            let off = broadcast_offsets(val(*a).shape(), node.value.shape());
            accumulate(grads, nodes, *a, |ga| {
                for (i, gv) in off.iter().zip(g) {
                    ga[*i] += gv;
                }
            });
        }
        Op::SoftmaxLast(a) => {
            let n = *node.value.shape().last().unwrap_or(&1);
            accumulate(grads, nodes, *a, |ga| {
                for ((gr, yr), out) in g.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in out.iter_mut().zip(gr).zip(yr) {
                        *o += yv * (gv - dot);
                    }
                }
            });
        }
        Op::Relu(a) => {
            let x = val(*a).data();
            accumulate(grads, nodes, *a, |ga| {
                for i in 0..g.len() {
                    if x[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            });
        }
        Op::Sigmoid(a) => elementwise(grads, nodes, *a, g, |i| y[i] * (1.0 - y[i])),
        Op::Softplus(a) => {
            let x = val(*a).data();
            elementwise(grads, nodes, *a, g, |i| sigmoid_value(x[i]))
        }
        Op::Exp(a) => elementwise(grads, nodes, *a, g, |i| y[i]),
        Op::Log(a) => {
            let x = val(*a).data();
            elementwise(grads, nodes, *a, g, |i| 1.0 / x[i])
        }
        Op::Sqrt(a) => elementwise(grads, nodes, *a, g, |i| if y[i] > 0.0 { 0.5 / y[i] } else { 0.0 }),
        Op::Abs(a) => {
            let x = val(*a).data();
            elementwise(grads, nodes, *a, g, |i| x[i].signum() * f64::from(u8::from(x[i] != 0.0)))
        }
        Op::Sin(a) => {
            let x = val(*a).data();
            elementwise(grads, nodes, *a, g, |i| x[i].cos())
        }
        Op::Cos(a) => {
            let x = val(*a).data();
            elementwise(grads, nodes, *a, g, |i| -x[i].sin())
        }
        Op::Pow(a, e) => {
            let x = val(*a).data();
            elementwise(grads, nodes, *a, g, |i| if *e == 0.0 { 0.0 } else { e * x[i].powf(e - 1.0) })
        }
        Op::Atan2(ya, xa) => {
            let (yv, xv) = (val(*ya).data(), val(*xa).data());
            let r2 = |i: usize| yv[i] * yv[i] + xv[i] * xv[i];
            elementwise(grads, nodes, *ya, g, |i| if r2(i) > 0.0 { xv[i] / r2(i) } else { 0.0 });
            elementwise(grads, nodes, *xa, g, |i| if r2(i) > 0.0 { -yv[i] / r2(i) } else { 0.0 });
        }
        Op::LayerNorm { x, rstd } => {
            let n = *node.value.shape().last().unwrap_or(&1);
            accumulate(grads, nodes, *x, |gx| {
                for (r, ((gr, yr), out)) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)).enumerate() {
                    let mg = gr.iter().sum::<f64>() / n as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for ((o, gv), yv) in out.iter_mut().zip(gr).zip(yr) {
                        *o += rstd[r] * (gv - mg - yv * mgy);
                    }
                }
            });
        }
        Op::SumAll(a) => accumulate(grads, nodes, *a, |ga| {
            for o in ga.iter_mut() {
                *o += g[0];
            }
        }),
        Op::SumAxis(a, axis) => {
            let (outer, n, inner) = split_axis("sum_axis", val(*a).shape(), *axis)?;
            accumulate(grads, nodes, *a, |ga| {
                for o in 0..outer {
                    for j in 0..n {
                        let dst = &mut ga[(o * n + j) * inner..(o * n + j + 1) * inner];
                        add_into(dst, &g[o * inner..(o + 1) * inner]);
                    }
                }
            });
        }
        Op::MinAxis { x, axis, argmin } => {
            let (_, n, inner) = split_axis("min_axis", val(*x).shape(), *axis)?;
            accumulate(grads, nodes, *x, |gx| {
                for (k, (&j, gv)) in argmin.iter().zip(g).enumerate() {
                    let (o, i) = (k / inner, k % inner);
                    gx[(o * n + j) * inner + i] += gv;
                }
            });
        }
        Op::NormLast(a) => {
            let x = val(*a).data();
            let n = *val(*a).shape().last().unwrap_or(&1);
            accumulate(grads, nodes, *a, |ga| {
                for (r, (gv, yv)) in g.iter().zip(y).enumerate() {
                    if *yv > 0.0 {
                        for c in 0..n {
                            ga[r * n + c] += gv * x[r * n + c] / yv;
                        }
                    }
                }
            });
        }
        Op::Bilinear { grid, coords } => {
            let gv = val(*grid);
            let (h, w, ch) = (gv.shape()[0], gv.shape()[1], gv.shape()[2]);
            let cd = val(*coords).data();
            accumulate(grads, nodes, *grid, |gg| {
                for (pi, rc) in cd.chunks(2).enumerate() {
                    let gout = &g[pi * ch..(pi + 1) * ch];
                    for (ri, ci, wgt) in bilinear_corners(rc[0], rc[1], h, w).into_iter().flatten() {
                        let dst = &mut gg[(ri * w + ci) * ch..(ri * w + ci + 1) * ch];
                        for (d, s) in dst.iter_mut().zip(gout) {
                            *d += wgt.weight * s;
                        }
                    }
                }
            });
            accumulate(grads, nodes, *coords, |gc| {
                for (pi, rc) in cd.chunks(2).enumerate() {
                    let gout = &g[pi * ch..(pi + 1) * ch];
                    for (ri, ci, wgt) in bilinear_corners(rc[0], rc[1], h, w).into_iter().flatten() {
                        let src = &gv.data()[(ri * w + ci) * ch..(ri * w + ci + 1) * ch];
                        let dot: f64 = src.iter().zip(gout).map(|(a, b)| a * b).sum();
                        gc[pi * 2] += wgt.d_row * dot;
                        gc[pi * 2 + 1] += wgt.d_col * dot;
                    }
                }
            });
        }
    }
    Ok(())
}

fn elementwise(grads: &mut [Option<Vec<f64>>], nodes: &[Node], a: Var, g: &[f64], d: impl Fn(usize) -> f64) {
    accumulate(grads, nodes, a, |ga| {
        for (i, (o, gv)) in ga.iter_mut().zip(g).enumerate() {
            *o += gv * d(i);
        }
    });
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn sigmoid_value(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Copy)]
struct CornerWeight {
    weight: f64,
    d_row: f64,
    d_col: f64,
}

/// The (up to) four in-bounds corners around `(r, c)` with their
/// interpolation weights and weight derivatives.
fn bilinear_corners(r: f64, c: f64, h: usize, w: usize) -> [Option<(usize, usize, CornerWeight)>; 4] {
    let r0 = r.floor();
    let c0 = c.floor();
    let fr = r - r0;
    let fc = c - c0;
    let cells = [
        (0.0, 0.0, (1.0 - fr) * (1.0 - fc), -(1.0 - fc), -(1.0 - fr)),
        (0.0, 1.0, (1.0 - fr) * fc, -fc, 1.0 - fr),
        (1.0, 0.0, fr * (1.0 - fc), 1.0 - fc, -fr),
        (1.0, 1.0, fr * fc, fc, fr),
    ];
    cells.map(|(dr, dc, weight, d_row, d_col)| {
        let ri = r0 + dr;
        let ci = c0 + dc;
        if ri < 0.0 || ci < 0.0 || ri > (h - 1) as f64 || ci > (w - 1) as f64 {
            None
        } else {
            Some((ri as usize, ci as usize, CornerWeight { weight, d_row, d_col }))
        }
    })
}

fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
}

fn matmul_dims(sa: &[usize], sb: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match (sa, sb) {
        ([m, k], [k2, n]) if k == k2 => Ok((1, *m, *k, *n)),
        ([b, m, k], [b2, k2, n]) if b == b2 && k == k2 => Ok((*b, *m, *k, *n)),
        _ => Err(Error::shape("matmul", format!("{sa:?} @ {sb:?}"))),
    }
}

fn split_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(op, format!("axis {axis} for shape {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out_shape`, the offset of the source element in a
/// tensor of `in_shape` broadcast to it.
fn broadcast_offsets(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let r = out_shape.len();
    let lead = r - in_shape.len();
    let in_strides = strides(in_shape);
    let eff: Vec<usize> = (0..r)
        .map(|i| {
            if i < lead || in_shape[i - lead] == 1 {
                0
            } else {
                in_strides[i - lead]
            }
        })
        .collect();
    let n: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; r];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(off);
        for ax in (0..r).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// For every element of the permuted output, the offset of its source.
fn permute_offsets(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n: usize = shape.iter().product();
    let r = shape.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; r];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(off);
        for ax in (0..r).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = tape.softmax_lastdim(x).unwrap();
        for v in tape.data(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_matmul() {
        let tape = Tape::new();
        let a = t(&[3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let i = tape.constant(Tensor::eye(3));
        let av = tape.constant(a.clone());
        let y = tape.matmul(i, av).unwrap();
        assert_eq!(*tape.value(y), a);
    }

    #[test]
    fn sigmoid_at_zero() {
        let tape = Tape::new();
        let x = tape.scalar(0.0).unwrap();
        assert_eq!(tape.item(tape.sigmoid(x).unwrap()).unwrap(), 0.5);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = tape.constant(Tensor::zeros(&[4]));
        assert!(tape.add(a, c).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn sum_of_param_has_unit_gradient() {
        let tape = Tape::new();
        let p = tape.leaf(Tensor::zeros(&[2, 2]).with_requires_grad(true));
        let l = tape.sum(p).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p), Tensor::ones(&[2, 2]));
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_param() {
        let tape = Tape::new();
        let p = tape.leaf(t(&[2, 2], &[1., 2., 3., 4.]).with_requires_grad(true));
        let sq = tape.mul(p, p).unwrap();
        let l = tape.sum(sq).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).data(), &[2., 4., 6., 8.]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached_losses() {
        let tape = Tape::new();
        let p = tape.leaf(Tensor::zeros(&[2]).with_requires_grad(true));
        assert!(tape.backward(p).is_err());
        let c = tape.constant(Tensor::zeros(&[]));
        assert!(tape.backward(c).is_err());
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]).with_requires_grad(true));
        let b = tape.leaf(Tensor::zeros(&[3]).with_requires_grad(true));
        let s = tape.add(a, b).unwrap();
        let l = tape.sum(s).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(b).data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn bilinear_fixtures() {
        let tape = Tape::new();
        let grid = tape.constant(t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]));
        let pts = tape.constant(t(&[3, 2], &[1.0, 0.0, 0.5, 0.5, -5.0, -5.0]));
        let s = tape.bilinear_sample(grid, pts).unwrap();
        assert_eq!(tape.data(s), vec![3.0, 2.5, 0.0]);
    }

    #[test]
    fn permute_and_concat_round_trip() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[0., 1., 2., 3., 4., 5.]));
        let p = tape.transpose(a).unwrap();
        assert_eq!(tape.data(p), vec![0., 3., 1., 4., 2., 5.]);
        let c = tape.concat(&[a, a], 1).unwrap();
        assert_eq!(tape.shape(c), vec![2, 6]);
        let s = tape.slice(c, 1, 3, 6).unwrap();
        assert_eq!(*tape.value(s), *tape.value(a));
    }
}
