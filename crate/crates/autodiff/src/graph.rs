//! The define-by-run tape: every operation appends a node holding its
//! output value, and [`Graph::backward`] walks the nodes in reverse.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{
    broadcast_shape, broadcast_strides, for_each_broadcast, reduce_to_shape, strides, Tensor,
    MAX_RANK,
};
use crate::AutodiffError;

type Result<T> = std::result::Result<T, AutodiffError>;

const LAYER_NORM_EPS: f64 = 1e-5;
const L2_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulConst(usize, Rc<Tensor>),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Gelu(usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    Softmax(usize),
    LayerNorm { x: usize, rstd: Vec<f64> },
    L2Normalize { x: usize, norms: Vec<f64> },
    SumAll(usize),
    SumAxis { x: usize, axis: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    Reshape(usize),
    Permute { x: usize, perm: Vec<usize> },
    IndexSelect { x: usize, indices: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulConst(..) => "mul_const",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Gelu(..) => "gelu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Softplus(..) => "softplus",
            Op::Square(..) => "square",
            Op::Clamp(..) => "clamp",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::SumAll(..) => "sum",
            Op::SumAxis { .. } => "sum_axis",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(..) => "reshape",
            Op::Permute { .. } => "permute",
            Op::IndexSelect { .. } => "index_select",
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass.
///
/// A fresh graph is built per training step. In debug builds a *strict*
/// graph (the default) panics as soon as an operation produces a
/// non-finite value; a lenient graph only records the first offender,
/// which callers can inspect through [`Graph::first_non_finite`].
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    strict: bool,
    first_non_finite: Cell<Option<(usize, &'static str)>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            strict: true,
            first_non_finite: Cell::new(None),
        }
    }

    pub fn lenient() -> Self {
        Self {
            strict: false,
            ..Self::new()
        }
    }

    /// Node id and op name of the first operation that produced NaN or Inf.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.first_non_finite.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Rc::new(value), Op::Leaf, true)
    }

    /// A leaf sharing an existing buffer.
    pub fn leaf_rc(&self, value: Rc<Tensor>) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Rc::new(value), Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'g>(&'g self, parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = parts.first().ok_or_else(|| AutodiffError::InvalidShape {
            shape: vec![],
            reason: "concat of zero tensors".into(),
        })?;
        let shape0 = first.shape();
        check_axis(axis, shape0.len())?;
        let mut out_shape = shape0.clone();
        out_shape[axis] = 0;
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == shape0.len()
                && s.iter()
                    .zip(&shape0)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: shape0,
                    rhs: s,
                });
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = shape0[..axis].iter().product();
        let inner: usize = shape0[axis + 1..].iter().product();
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for v in &values {
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let t = Tensor::new(&out_shape, data)?;
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(self.push(
            Rc::new(t),
            Op::Concat {
                inputs: parts.iter().map(|p| p.id).collect(),
                axis,
            },
            rg,
        ))
    }

    fn push(&self, value: Rc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if !value.is_finite() {
            if self.first_non_finite.get().is_none() {
                self.first_non_finite.set(Some((id, op.name())));
            }
            if self.strict && !matches!(op, Op::Leaf) {
                debug_assert!(false, "non-finite output from `{}` (node {id})", op.name());
            }
        }
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { graph: self, id }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Reverse-mode sweep from a scalar `loss`, returning gradients of every leaf.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, &mut grads, node, &g);
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; `None` if the loss does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.accumulate(&g),
        slot @ None => *slot = Some(g),
    }
}

fn map_grad(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(other.data()).map(|(a, b)| f(*a, *b)).collect();
    Tensor::new(g.shape(), data).expect("shape preserved")
}

/// `reduce_to_shape(g * broadcast(other), target)`
fn mul_broadcast_reduce(g: &Tensor, other: &Tensor, target: &[usize]) -> Tensor {
    let out = g.shape();
    let mut prod = Tensor::zeros(out);
    if other.shape() == out {
        return reduce_to_shape(&map_grad(g, other, |a, b| a * b), target);
    }
    let so = broadcast_strides(other.shape(), out);
    let zeros = vec![0; out.len()];
    let (gd, od) = (g.data(), other.data());
    let pd = prod.data_mut();
    for_each_broadcast(out, &zeros, &so, |flat, _, ob| pd[flat] = gd[flat] * od[ob]);
    reduce_to_shape(&prod, target)
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Tensor>], node: &Node, g: &Tensor) {
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            let (sa, sb) = (nodes[*a].value.shape(), nodes[*b].value.shape());
            accumulate(nodes, grads, *a, reduce_to_shape(g, sa));
            accumulate(nodes, grads, *b, reduce_to_shape(g, sb));
        }
        Op::Sub(a, b) => {
            let (sa, sb) = (nodes[*a].value.shape(), nodes[*b].value.shape());
            accumulate(nodes, grads, *a, reduce_to_shape(g, sa));
            let mut gb = reduce_to_shape(g, sb);
            gb.data_mut().iter_mut().for_each(|v| *v = -*v);
            accumulate(nodes, grads, *b, gb);
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            if nodes[*a].requires_grad {
                accumulate(nodes, grads, *a, mul_broadcast_reduce(g, vb, va.shape()));
            }
            if nodes[*b].requires_grad {
                accumulate(nodes, grads, *b, mul_broadcast_reduce(g, va, vb.shape()));
            }
        }
        Op::MulConst(x, c) => {
            let sx = nodes[*x].value.shape();
            accumulate(nodes, grads, *x, mul_broadcast_reduce(g, c, sx));
        }
        Op::Scale(x, s) => {
            let s = *s;
            let gx = Tensor::new(g.shape(), g.data().iter().map(|v| v * s).collect()).unwrap();
            accumulate(nodes, grads, *x, gx);
        }
        Op::Offset(x) => accumulate(nodes, grads, *x, g.clone()),
        Op::MatMul(a, b) => backprop_matmul(nodes, grads, *a, *b, g),
        Op::Sigmoid(x) => accumulate(nodes, grads, *x, map_grad(g, y, |g, y| g * y * (1.0 - y))),
        Op::Tanh(x) => accumulate(nodes, grads, *x, map_grad(g, y, |g, y| g * (1.0 - y * y))),
        Op::Gelu(x) => {
            let gx = map_grad(g, &nodes[*x].value, |g, x| g * gelu_grad(x));
            accumulate(nodes, grads, *x, gx);
        }
        Op::Exp(x) => accumulate(nodes, grads, *x, map_grad(g, y, |g, y| g * y)),
        Op::Log(x) => accumulate(nodes, grads, *x, map_grad(g, &nodes[*x].value, |g, x| g / x)),
        Op::Softplus(x) => {
            let gx = map_grad(g, &nodes[*x].value, |g, x| g * sigmoid(x));
            accumulate(nodes, grads, *x, gx);
        }
        Op::Square(x) => {
            accumulate(nodes, grads, *x, map_grad(g, &nodes[*x].value, |g, x| 2.0 * g * x))
        }
        Op::Clamp(x, lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            let gx = map_grad(g, &nodes[*x].value, |g, x| if x > lo && x < hi { g } else { 0.0 });
            accumulate(nodes, grads, *x, gx);
        }
        Op::Softmax(x) => {
            let n = *y.shape().last().unwrap_or(&1);
            let mut gx = Tensor::zeros(y.shape());
            for ((yr, gr), outr) in y
                .data()
                .chunks_exact(n)
                .zip(g.data().chunks_exact(n))
                .zip(gx.data_mut().chunks_exact_mut(n))
            {
                let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for i in 0..n {
                    outr[i] = yr[i] * (gr[i] - s);
                }
            }
            accumulate(nodes, grads, *x, gx);
        }
        Op::LayerNorm { x, rstd } => {
            let n = *y.shape().last().unwrap_or(&1);
            let mut gx = Tensor::zeros(y.shape());
            for (r, ((yr, gr), outr)) in y
                .data()
                .chunks_exact(n)
                .zip(g.data().chunks_exact(n))
                .zip(gx.data_mut().chunks_exact_mut(n))
                .enumerate()
            {
                let mean_g = gr.iter().sum::<f64>() / n as f64;
                let mean_gy = yr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                for i in 0..n {
                    outr[i] = rstd[r] * (gr[i] - mean_g - yr[i] * mean_gy);
                }
            }
            accumulate(nodes, grads, *x, gx);
        }
        Op::L2Normalize { x, norms } => {
            let n = *y.shape().last().unwrap_or(&1);
            let mut gx = Tensor::zeros(y.shape());
            for (r, ((yr, gr), outr)) in y
                .data()
                .chunks_exact(n)
                .zip(g.data().chunks_exact(n))
                .zip(gx.data_mut().chunks_exact_mut(n))
                .enumerate()
            {
                let norm = norms[r];
                if norm > L2_EPS {
                    let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for i in 0..n {
                        outr[i] = (gr[i] - yr[i] * proj) / norm;
                    }
                } else {
                    for i in 0..n {
                        outr[i] = gr[i] / L2_EPS;
                    }
                }
            }
            accumulate(nodes, grads, *x, gx);
        }
        Op::SumAll(x) => {
            let g0 = g.data()[0];
            accumulate(nodes, grads, *x, Tensor::full(nodes[*x].value.shape(), g0));
        }
        Op::SumAxis { x, axis } => {
            let sx = nodes[*x].value.shape();
            let outer: usize = sx[..*axis].iter().product();
            let len = sx[*axis];
            let inner: usize = sx[axis + 1..].iter().product();
            let mut gx = Tensor::zeros(sx);
            let gd = g.data();
            let out = gx.data_mut();
            for o in 0..outer {
                for a in 0..len {
                    let dst = &mut out[(o * len + a) * inner..(o * len + a + 1) * inner];
                    dst.copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                }
            }
            accumulate(nodes, grads, *x, gx);
        }
        Op::Concat { inputs, axis } => {
            let shape = y.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis] * inner;
            let mut offset = 0;
            for &input in inputs {
                let si = nodes[input].value.shape().to_vec();
                let block = si[*axis] * inner;
                if nodes[input].requires_grad {
                    let mut data = Vec::with_capacity(outer * block);
                    for o in 0..outer {
                        let start = o * total + offset;
                        data.extend_from_slice(&g.data()[start..start + block]);
                    }
                    accumulate(nodes, grads, input, Tensor::new(&si, data).unwrap());
                }
                offset += block;
            }
        }
        Op::Slice { x, axis, start } => {
            let sx = nodes[*x].value.shape();
            let outer: usize = sx[..*axis].iter().product();
            let inner: usize = sx[axis + 1..].iter().product();
            let len = y.shape()[*axis];
            let mut gx = Tensor::zeros(sx);
            let full = sx[*axis] * inner;
            let out = gx.data_mut();
            for o in 0..outer {
                let dst = o * full + start * inner;
                out[dst..dst + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            accumulate(nodes, grads, *x, gx);
        }
        Op::Reshape(x) => {
            let gx = g.clone().reshape(nodes[*x].value.shape()).unwrap();
            accumulate(nodes, grads, *x, gx);
        }
        Op::Permute { x, perm } => {
            let mut inverse = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            accumulate(nodes, grads, *x, permute_tensor(g, &inverse));
        }
        Op::IndexSelect { x, indices } => {
            let sx = nodes[*x].value.shape();
            let row: usize = sx[1..].iter().product();
            let mut gx = Tensor::zeros(sx);
            let out = gx.data_mut();
            for (k, &src) in indices.iter().enumerate() {
                for i in 0..row {
                    out[src * row + i] += g.data()[k * row + i];
                }
            }
            accumulate(nodes, grads, *x, gx);
        }
    }
}

fn backprop_matmul(nodes: &[Node], grads: &mut [Option<Tensor>], a: usize, b: usize, g: &Tensor) {
    let va = &nodes[a].value;
    let vb = &nodes[b].value;
    let sa = va.shape();
    let sb = vb.shape();
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let n = sb[sb.len() - 1];
    if sb.len() == 2 {
        let rows = va.len() / k;
        if nodes[a].requires_grad {
            let mut ga = Tensor::zeros(sa);
            gemm_nt(rows, n, k, g.data(), vb.data(), ga.data_mut());
            accumulate(nodes, grads, a, ga);
        }
        if nodes[b].requires_grad {
            let mut gb = Tensor::zeros(sb);
            gemm_tn(rows, k, n, va.data(), g.data(), gb.data_mut());
            accumulate(nodes, grads, b, gb);
        }
    } else {
        let batch = va.len() / (m * k);
        if nodes[a].requires_grad {
            let mut ga = Tensor::zeros(sa);
            let gad = ga.data_mut();
            for i in 0..batch {
                gemm_nt(
                    m,
                    n,
                    k,
                    &g.data()[i * m * n..],
                    &vb.data()[i * k * n..],
                    &mut gad[i * m * k..(i + 1) * m * k],
                );
            }
            accumulate(nodes, grads, a, ga);
        }
        if nodes[b].requires_grad {
            let mut gb = Tensor::zeros(sb);
            let gbd = gb.data_mut();
            for i in 0..batch {
                gemm_tn(
                    m,
                    k,
                    n,
                    &va.data()[i * m * k..],
                    &g.data()[i * m * n..],
                    &mut gbd[i * k * n..(i + 1) * k * n],
                );
            }
            accumulate(nodes, grads, b, gb);
        }
    }
}

fn check_axis(axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(AutodiffError::AxisOutOfRange { axis, rank });
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
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

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn permute_tensor(x: &Tensor, perm: &[usize]) -> Tensor {
    let sx = x.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| sx[p]).collect();
    let src_strides = strides(sx);
    // Stride in the source for each output axis.
    let mapped: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let zeros = vec![0; perm.len()];
    let mut out = Tensor::zeros(&out_shape);
    let src = x.data();
    let dst = out.data_mut();
    for_each_broadcast(&out_shape, &mapped, &zeros, |flat, off, _| dst[flat] = src[off]);
    out
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Scalar value, if this node holds exactly one element.
    pub fn item(&self) -> Option<f64> {
        self.graph.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut off from the gradient flow.
    pub fn detach(self) -> Var<'g> {
        self.graph.push(self.value(), Op::Leaf, false)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g> {
        let v = self.value();
        let data = v.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(v.shape(), data).expect("shape preserved");
        self.graph.push(Rc::new(t), op, self.requires_grad())
    }

    fn binary(
        self,
        other: Var<'g>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'g>> {
        let (va, vb) = (self.value(), other.value());
        let t = broadcast_binary(&va, &vb, name, f)?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(Rc::new(t), op, rg))
    }

    /// Element-wise sum with NumPy broadcasting.
    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Multiplies by a broadcastable constant (masks, dropout keep-masks).
    pub fn mul_const(self, c: Tensor) -> Result<Var<'g>> {
        let v = self.value();
        let t = broadcast_binary(&v, &c, "mul_const", |a, b| a * b)?;
        if t.shape() != v.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul_const",
                lhs: v.shape().to_vec(),
                rhs: c.shape().to_vec(),
            });
        }
        let rg = self.requires_grad();
        Ok(self.graph.push(Rc::new(t), Op::MulConst(self.id, Rc::new(c)), rg))
    }

    pub fn scale(self, s: f64) -> Var<'g> {
        self.unary(Op::Scale(self.id, s), |x| x * s)
    }

    pub fn offset(self, c: f64) -> Var<'g> {
        self.unary(Op::Offset(self.id), |x| x + c)
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    /// `[..., M, K] x [K, N]` or `[..., M, K] x [..., K, N]` with equal leading axes.
    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let (va, vb) = (self.value(), other.value());
        let t = matmul_forward(&va, &vb)?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(Rc::new(t), Op::MatMul(self.id, other.id), rg))
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'g> {
        self.unary(Op::Gelu(self.id), gelu)
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'g> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(self) -> Var<'g> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn square(self) -> Var<'g> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g> {
        self.unary(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Softmax over the last axis (max-subtracted).
    pub fn softmax(self) -> Var<'g> {
        let v = self.value();
        let n = *v.shape().last().unwrap_or(&1);
        let mut out = Tensor::zeros(v.shape());
        for (xr, yr) in v.data().chunks_exact(n).zip(out.data_mut().chunks_exact_mut(n)) {
            let max = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (y, x) in yr.iter_mut().zip(xr) {
                *y = (x - max).exp();
                sum += *y;
            }
            yr.iter_mut().for_each(|y| *y /= sum);
        }
        let rg = self.requires_grad();
        self.graph.push(Rc::new(out), Op::Softmax(self.id), rg)
    }

    /// Zero-mean unit-variance normalization over the last axis, without affine terms.
    pub fn layer_norm(self) -> Var<'g> {
        let v = self.value();
        let n = *v.shape().last().unwrap_or(&1);
        let mut out = Tensor::zeros(v.shape());
        let mut rstd = Vec::with_capacity(v.len() / n.max(1));
        for (xr, yr) in v.data().chunks_exact(n).zip(out.data_mut().chunks_exact_mut(n)) {
            let mean = xr.iter().sum::<f64>() / n as f64;
            let var = xr.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (y, x) in yr.iter_mut().zip(xr) {
                *y = (x - mean) * r;
            }
            rstd.push(r);
        }
        let rg = self.requires_grad();
        self.graph
            .push(Rc::new(out), Op::LayerNorm { x: self.id, rstd }, rg)
    }

    /// Scales each last-axis row to unit Euclidean norm.
    pub fn l2_normalize(self) -> Var<'g> {
        let v = self.value();
        let n = *v.shape().last().unwrap_or(&1);
        let mut out = Tensor::zeros(v.shape());
        let mut norms = Vec::with_capacity(v.len() / n.max(1));
        for (xr, yr) in v.data().chunks_exact(n).zip(out.data_mut().chunks_exact_mut(n)) {
            let norm = xr.iter().map(|x| x * x).sum::<f64>().sqrt();
            let d = norm.max(L2_EPS);
            for (y, x) in yr.iter_mut().zip(xr) {
                *y = x / d;
            }
            norms.push(norm);
        }
        let rg = self.requires_grad();
        self.graph
            .push(Rc::new(out), Op::L2Normalize { x: self.id, norms }, rg)
    }

    pub fn sum(self) -> Var<'g> {
        let v = self.value();
        let rg = self.requires_grad();
        self.graph
            .push(Rc::new(Tensor::scalar(v.sum())), Op::SumAll(self.id), rg)
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums out `axis`, dropping it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'g>> {
        let v = self.value();
        let sx = v.shape();
        check_axis(axis, sx.len())?;
        let outer: usize = sx[..axis].iter().product();
        let len = sx[axis];
        let inner: usize = sx[axis + 1..].iter().product();
        let mut out_shape = sx.to_vec();
        out_shape.remove(axis);
        let mut out = Tensor::zeros(&out_shape);
        let od = out.data_mut();
        for o in 0..outer {
            for a in 0..len {
                let src = &v.data()[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (d, s) in od[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let rg = self.requires_grad();
        Ok(self
            .graph
            .push(Rc::new(out), Op::SumAxis { x: self.id, axis }, rg))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'g>> {
        let len = *self.shape().get(axis).ok_or(AutodiffError::AxisOutOfRange {
            axis,
            rank: self.shape().len(),
        })?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'g>> {
        let v = self.value();
        let sx = v.shape();
        check_axis(axis, sx.len())?;
        if start + len > sx[axis] {
            return Err(AutodiffError::InvalidShape {
                shape: sx.to_vec(),
                reason: format!("slice {start}..{} out of range on axis {axis}", start + len),
            });
        }
        let outer: usize = sx[..axis].iter().product();
        let inner: usize = sx[axis + 1..].iter().product();
        let full = sx[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = o * full + start * inner;
            data.extend_from_slice(&v.data()[s..s + len * inner]);
        }
        let mut out_shape = sx.to_vec();
        out_shape[axis] = len;
        let t = Tensor::new(&out_shape, data)?;
        let rg = self.requires_grad();
        Ok(self.graph.push(
            Rc::new(t),
            Op::Slice {
                x: self.id,
                axis,
                start,
            },
            rg,
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let t = (*self.value()).clone().reshape(shape)?;
        let rg = self.requires_grad();
        Ok(self.graph.push(Rc::new(t), Op::Reshape(self.id), rg))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'g>> {
        let v = self.value();
        let rank = v.ndim();
        let mut seen = [false; MAX_RANK];
        let valid = perm.len() == rank
            && perm.iter().all(|&p| p < rank && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(AutodiffError::InvalidShape {
                shape: v.shape().to_vec(),
                reason: format!("invalid permutation {perm:?}"),
            });
        }
        let t = permute_tensor(&v, perm);
        let rg = self.requires_grad();
        Ok(self.graph.push(
            Rc::new(t),
            Op::Permute {
                x: self.id,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'g>> {
        let rank = self.shape().len();
        if rank < 2 {
            return Err(AutodiffError::InvalidShape {
                shape: self.shape(),
                reason: "transpose needs rank >= 2".into(),
            });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(&perm)
    }

    /// Gathers entries of the leading axis.
    pub fn index_select(self, indices: &[usize]) -> Result<Var<'g>> {
        let v = self.value();
        let sx = v.shape();
        if sx.is_empty() {
            return Err(AutodiffError::InvalidShape {
                shape: vec![],
                reason: "index_select on a scalar".into(),
            });
        }
        let row: usize = sx[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            if i >= sx[0] {
                return Err(AutodiffError::InvalidShape {
                    shape: sx.to_vec(),
                    reason: format!("index {i} out of range"),
                });
            }
            data.extend_from_slice(&v.data()[i * row..(i + 1) * row]);
        }
        let mut out_shape = sx.to_vec();
        out_shape[0] = indices.len();
        let t = Tensor::new(&out_shape, data)?;
        let rg = self.requires_grad();
        Ok(self.graph.push(
            Rc::new(t),
            Op::IndexSelect {
                x: self.id,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Keeps the leading-axis entries whose mask bit is set.
    pub fn masked_select(self, mask: &[bool]) -> Result<Var<'g>> {
        let rows = self.shape().first().copied().unwrap_or(0);
        if mask.len() != rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "masked_select",
                lhs: self.shape(),
                rhs: vec![mask.len()],
            });
        }
        let idx: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        self.index_select(&idx)
    }
}

fn broadcast_binary(
    a: &Tensor,
    b: &Tensor,
    name: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        return Tensor::new(a.shape(), data);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
        AutodiffError::ShapeMismatch {
            op: name,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
    })?;
    // Fast path: `b` tiles the trailing axes of `a`.
    if out_shape == a.shape() && a.shape().ends_with(b.shape()) && !b.is_empty() {
        let mut data = Vec::with_capacity(a.len());
        for chunk in a.data().chunks_exact(b.len()) {
            data.extend(chunk.iter().zip(b.data()).map(|(x, y)| f(*x, *y)));
        }
        return Tensor::new(&out_shape, data);
    }
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let mut out = Tensor::zeros(&out_shape);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for_each_broadcast(&out_shape, &sa, &sb, |flat, oa, ob| od[flat] = f(ad[oa], bd[ob]));
    Ok(out)
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    let mismatch = || AutodiffError::ShapeMismatch {
        op: "matmul",
        lhs: sa.to_vec(),
        rhs: sb.to_vec(),
    };
    if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
        return Err(mismatch());
    }
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let n = sb[sb.len() - 1];
    let mut out_shape = sa.to_vec();
    *out_shape.last_mut().unwrap() = n;
    let mut out = Tensor::zeros(&out_shape);
    if sb.len() == 2 {
        let rows = a.len() / k.max(1);
        gemm_nn(rows, k, n, a.data(), b.data(), out.data_mut());
    } else {
        if sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(mismatch());
        }
        let batch = a.len() / (m * k).max(1);
        let od = out.data_mut();
        for i in 0..batch {
            gemm_nn(
                m,
                k,
                n,
                &a.data()[i * m * k..],
                &b.data()[i * k * n..],
                &mut od[i * m * n..(i + 1) * m * n],
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let g = Graph::new();
        let y = g.constant(Tensor::zeros(&[4])).softmax();
        for v in y.value().data() {
            assert_eq!(*v, 0.25);
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let g = Graph::new();
        let y = g.constant(Tensor::full(&[2, 5], 3.7)).layer_norm();
        assert!(y.value().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matmul_matches_hand_computation() {
        let g = Graph::new();
        let a = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let b = g.constant(t(&[3, 2], &[7., 8., 9., 10., 11., 12.]));
        let c = a.matmul(b).unwrap();
        assert_eq!(c.value().data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn product_rule_for_scalars() {
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.leaf(Tensor::scalar(-2.5));
        let z = x.mul(y).unwrap();
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), Some(-2.5));
        assert_eq!(grads.get(y).unwrap().item(), Some(3.0));
    }

    #[test]
    fn fan_out_accumulates() {
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        // f = x*x + 3x  => f' = 2x + 3 = 7
        let f = x.mul(x).unwrap().add(x.scale(3.0)).unwrap();
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), Some(7.0));
    }

    #[test]
    fn detached_branch_contributes_nothing() {
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let f = x.mul(x.detach()).unwrap();
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), Some(2.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[3]));
        assert!(matches!(g.backward(x), Err(AutodiffError::NonScalarLoss(_))));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = a.matmul(b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(a.add(g.constant(Tensor::zeros(&[4]))).is_err());
    }

    #[test]
    fn concat_slice_and_permute() {
        let g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.constant(t(&[2, 1], &[9., 8.]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(c.value().data(), &[1., 2., 9., 3., 4., 8.]);
        let s = c.slice(1, 1, 2).unwrap();
        assert_eq!(s.value().data(), &[2., 9., 4., 8.]);
        let p = c.transpose().unwrap();
        assert_eq!(p.shape(), vec![3, 2]);
        assert_eq!(p.value().data(), &[1., 3., 2., 4., 9., 8.]);
    }

    #[test]
    fn masked_select_keeps_marked_rows() {
        let g = Graph::new();
        let x = g.leaf(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let y = x.masked_select(&[true, false, true]).unwrap();
        assert_eq!(y.value().data(), &[1., 2., 5., 6.]);
        let grads = g.backward(y.sum()).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1., 1., 0., 0., 1., 1.]);
    }

    #[test]
    fn lenient_graph_records_first_non_finite() {
        let g = Graph::lenient();
        let x = g.constant(Tensor::scalar(-1.0));
        let _ = x.ln();
        assert_eq!(g.first_non_finite().map(|(_, op)| op), Some("log"));
    }
}
