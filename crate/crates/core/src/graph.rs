//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node appended to a tape. Parents
//! always have smaller ids than their children, so the tape order is a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! Gradients reaching a node through several children are summed in the order
//! the children appear on the tape.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::conv::{conv2d, conv2d_backward};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Sum(NodeId),
    Mean(NodeId, f64),
    Expand(NodeId),
    Reshape(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Concat(Vec<NodeId>, usize),
    IndexSelect(NodeId, Vec<usize>),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
    },
    LogSumExpRows(NodeId, Option<Rc<Vec<bool>>>),
    GatherCols(NodeId, Vec<usize>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Graph({} nodes)", self.nodes.borrow().len())
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({:?}, {:?})", self.id.0, self.value().shape())
    }
}

/// Accumulated gradients from one backward sweep, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape if nothing reached it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            graph: self,
            id: NodeId(nodes.len() - 1),
        }
    }

    fn push(&self, name: &'static str, value: Tensor, op: Op, parents: &[NodeId]) -> Result<Var<'_>> {
        value.ensure_finite(name)?;
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.0].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            graph: self,
            id: NodeId(nodes.len() - 1),
        })
    }

    fn value_of(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id.0].value)
    }

    /// Reverse sweep from a single-element root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id.0].value;
        if root_value.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id.0] = Some(Tensor::ones(root_value.shape()));

        for id in (0..=root.id.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |n: &NodeId| -> &Tensor { &nodes[n.0].value };
            let wants = |n: &NodeId| nodes[n.0].requires_grad;
            let mut contrib: Vec<(NodeId, Tensor)> = Vec::with_capacity(2);
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    if wants(a) {
                        contrib.push((*a, g.clone()));
                    }
                    if wants(b) {
                        contrib.push((*b, g.clone()));
                    }
                }
                Op::Sub(a, b) => {
                    if wants(a) {
                        contrib.push((*a, g.clone()));
                    }
                    if wants(b) {
                        contrib.push((*b, g.mul_scalar(-1.0)));
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        contrib.push((*a, g.mul(val(b))?));
                    }
                    if wants(b) {
                        contrib.push((*b, g.mul(val(a))?));
                    }
                }
                Op::Div(a, b) => {
                    let bv = val(b);
                    if wants(a) {
                        contrib.push((*a, g.zip_map(bv, "div_backward", |g, b| g / b)?));
                    }
                    if wants(b) {
                        let gb = g.zip_map(&node.value, "div_backward", |g, q| g * q)?;
                        contrib.push((*b, gb.zip_map(bv, "div_backward", |t, b| -t / b)?));
                    }
                }
                Op::AddScalar(a) => contrib.push((*a, g.clone())),
                Op::MulScalar(a, s) => contrib.push((*a, g.mul_scalar(*s))),
                Op::Relu(a) => {
                    contrib.push((*a, g.zip_map(val(a), "relu_backward", |g, x| if x > 0.0 { g } else { 0.0 })?));
                }
                Op::Exp(a) => contrib.push((*a, g.mul(&node.value)?)),
                Op::Log(a) => contrib.push((*a, g.zip_map(val(a), "log_backward", |g, x| g / x)?)),
                Op::Sqrt(a) => {
                    contrib.push((*a, g.zip_map(&node.value, "sqrt_backward", |g, y| 0.5 * g / y)?));
                }
                Op::Sum(a) => contrib.push((*a, g.expand_to(val(a).shape())?)),
                Op::Mean(a, scale) => contrib.push((*a, g.expand_to(val(a).shape())?.mul_scalar(*scale))),
                Op::Expand(a) => contrib.push((*a, g.sum_to(val(a).shape())?)),
                Op::Reshape(a) => contrib.push((*a, g.reshape(val(a).shape())?)),
                Op::MatMul(a, b) => {
                    if wants(a) {
                        contrib.push((*a, g.matmul(&val(b).transpose()?)?));
                    }
                    if wants(b) {
                        contrib.push((*b, val(a).transpose()?.matmul(&g)?));
                    }
                }
                Op::Transpose(a) => contrib.push((*a, g.transpose()?)),
                Op::Concat(parts, axis) => {
                    let outer: usize = g.shape()[..*axis].iter().product();
                    let inner: usize = g.shape()[axis + 1..].iter().product();
                    let total = g.shape()[*axis];
                    let mut offset = 0;
                    for p in parts {
                        let shape = val(p).shape().to_vec();
                        let extent = shape[*axis];
                        if wants(p) {
                            let mut data = Vec::with_capacity(val(p).len());
                            for o in 0..outer {
                                let start = (o * total + offset) * inner;
                                data.extend_from_slice(&g.data()[start..start + extent * inner]);
                            }
                            contrib.push((*p, Tensor::new(shape, data)?));
                        }
                        offset += extent;
                    }
                }
                Op::IndexSelect(a, indices) => {
                    let src = val(a);
                    let stride = src.len() / src.shape()[0];
                    let mut data = vec![0.0; src.len()];
                    for (row, &i) in indices.iter().enumerate() {
                        let go = &g.data()[row * stride..(row + 1) * stride];
                        for (d, &v) in data[i * stride..(i + 1) * stride].iter_mut().zip(go) {
                            *d += v;
                        }
                    }
                    contrib.push((*a, Tensor::new(src.shape().to_vec(), data)?));
                }
                Op::Conv2d {
                    input,
                    kernel,
                    stride,
                    pad,
                } => {
                    let (gi, gk) = conv2d_backward(
                        val(input),
                        val(kernel),
                        &g,
                        *stride,
                        *pad,
                        wants(input),
                        wants(kernel),
                    )?;
                    if let Some(gi) = gi {
                        contrib.push((*input, gi));
                    }
                    if let Some(gk) = gk {
                        contrib.push((*kernel, gk));
                    }
                }
                Op::LogSumExpRows(a, mask) => {
                    let x = val(a);
                    let cols = x.shape()[1];
                    let mut data = vec![0.0; x.len()];
                    for (r, (&gr, &lse)) in g.data().iter().zip(node.value.data()).enumerate() {
                        for c in 0..cols {
                            let k = r * cols + c;
                            if mask.as_ref().is_none_or(|m| m[k]) {
                                data[k] = gr * (x.data()[k] - lse).exp();
                            }
                        }
                    }
                    contrib.push((*a, Tensor::new(x.shape().to_vec(), data)?));
                }
                Op::GatherCols(a, cols_idx) => {
                    let x = val(a);
                    let cols = x.shape()[1];
                    let mut data = vec![0.0; x.len()];
                    for (r, (&c, &gr)) in cols_idx.iter().zip(g.data()).enumerate() {
                        data[r * cols + c] += gr;
                    }
                    contrib.push((*a, Tensor::new(x.shape().to_vec(), data)?));
                }
            }
            for (parent, grad) in contrib {
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn same_graph(&self, other: &Var<'g>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "vars from different graphs"
        );
    }

    fn binary(
        self,
        other: Var<'g>,
        name: &'static str,
        f: impl Fn(&Tensor, &Tensor) -> Result<Tensor>,
        op: fn(NodeId, NodeId) -> Op,
    ) -> Result<Var<'g>> {
        self.same_graph(&other);
        let v = f(&self.value(), &other.value())?;
        self.graph.push(name, v, op(self.id, other.id), &[self.id, other.id])
    }

    fn unary(self, name: &'static str, v: Tensor, op: Op) -> Result<Var<'g>> {
        self.graph.push(name, v, op, &[self.id])
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "add", Tensor::add, Op::Add)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "sub", Tensor::sub, Op::Sub)
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "mul", Tensor::mul, Op::Mul)
    }

    pub fn div(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "div", Tensor::div, Op::Div)
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'g>> {
        let v = self.value().add_scalar(s);
        self.unary("add_scalar", v, Op::AddScalar(self.id))
    }

    pub fn mul_scalar(self, s: f64) -> Result<Var<'g>> {
        let v = self.value().mul_scalar(s);
        self.unary("mul_scalar", v, Op::MulScalar(self.id, s))
    }

    pub fn div_scalar(self, s: f64) -> Result<Var<'g>> {
        if s == 0.0 {
            return Err(TensorError::Domain {
                op: "div",
                detail: "zero divisor".into(),
            });
        }
        self.mul_scalar(1.0 / s)
    }

    pub fn neg(self) -> Result<Var<'g>> {
        self.mul_scalar(-1.0)
    }

    pub fn square(self) -> Result<Var<'g>> {
        self.mul(self)
    }

    pub fn relu(self) -> Result<Var<'g>> {
        let v = self.value().relu();
        self.unary("relu", v, Op::Relu(self.id))
    }

    pub fn exp(self) -> Result<Var<'g>> {
        let v = self.value().exp();
        self.unary("exp", v, Op::Exp(self.id))
    }

    pub fn log(self) -> Result<Var<'g>> {
        let v = self.value().log()?;
        self.unary("log", v, Op::Log(self.id))
    }

    pub fn sqrt(self) -> Result<Var<'g>> {
        let v = self.value().sqrt()?;
        if v.data().contains(&0.0) {
            return Err(TensorError::Domain {
                op: "sqrt",
                detail: "gradient undefined at zero".into(),
            });
        }
        self.unary("sqrt", v, Op::Sqrt(self.id))
    }

    /// Sum over `axes`; reduced axes are kept with extent 1.
    pub fn sum_keepdim(self, axes: &[usize]) -> Result<Var<'g>> {
        let v = self.value().sum_axes(axes, true)?;
        self.unary("sum", v, Op::Sum(self.id))
    }

    pub fn mean_keepdim(self, axes: &[usize]) -> Result<Var<'g>> {
        let value = self.value();
        let v = value.sum_axes(axes, true)?;
        let scale = v.len() as f64 / value.len() as f64;
        self.unary("mean", v.mul_scalar(scale), Op::Mean(self.id, scale))
    }

    pub fn sum(self, axes: &[usize]) -> Result<Var<'g>> {
        let shape = self.value().sum_axes(axes, false)?.shape().to_vec();
        self.sum_keepdim(axes)?.reshape(&shape)
    }

    pub fn mean(self, axes: &[usize]) -> Result<Var<'g>> {
        let shape = self.value().sum_axes(axes, false)?.shape().to_vec();
        self.mean_keepdim(axes)?.reshape(&shape)
    }

    pub fn sum_all(self) -> Result<Var<'g>> {
        let axes: Vec<usize> = (0..self.value().rank()).collect();
        self.sum(&axes)
    }

    pub fn mean_all(self) -> Result<Var<'g>> {
        let axes: Vec<usize> = (0..self.value().rank()).collect();
        self.mean(&axes)
    }

    /// NCHW → N×C spatial mean.
    pub fn global_avg_pool(self) -> Result<Var<'g>> {
        if self.value().rank() != 4 {
            return Err(TensorError::RankMismatch {
                op: "global_avg_pool",
                expected: 4,
                shape: self.shape(),
            });
        }
        self.mean(&[2, 3])
    }

    pub fn expand_to(self, shape: &[usize]) -> Result<Var<'g>> {
        let v = self.value().expand_to(shape)?;
        self.unary("expand", v, Op::Expand(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let v = self.value().reshape(shape)?;
        self.unary("reshape", v, Op::Reshape(self.id))
    }

    /// Collapses every axis after the first.
    pub fn flatten_rows(self) -> Result<Var<'g>> {
        let shape = self.shape();
        let rest: usize = shape[1..].iter().product();
        self.reshape(&[shape[0], rest])
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "matmul", Tensor::matmul, Op::MatMul)
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        let v = self.value().transpose()?;
        self.unary("transpose", v, Op::Transpose(self.id))
    }

    pub fn concat(parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = parts.first().ok_or(TensorError::Empty { op: "concat" })?;
        parts.iter().for_each(|p| first.same_graph(p));
        let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let v = Tensor::concat(&refs, axis)?;
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        first.graph.push("concat", v, Op::Concat(ids.clone(), axis), &ids)
    }

    pub fn index_select(self, indices: &[usize]) -> Result<Var<'g>> {
        let v = self.value().index_select(indices)?;
        self.unary("index_select", v, Op::IndexSelect(self.id, indices.to_vec()))
    }

    pub fn conv2d(self, kernel: Var<'g>, stride: usize, pad: usize) -> Result<Var<'g>> {
        self.same_graph(&kernel);
        let v = conv2d(&self.value(), &kernel.value(), stride, pad)?;
        self.graph.push(
            "conv2d",
            v,
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                stride,
                pad,
            },
            &[self.id, kernel.id],
        )
    }

    /// Adds a per-channel bias of shape `[C]` to an NCHW map.
    pub fn add_channel_bias(self, bias: Var<'g>) -> Result<Var<'g>> {
        let shape = self.shape();
        let c = bias.value().len();
        if shape.len() != 4 || shape[1] != c {
            return Err(TensorError::ShapeMismatch {
                op: "add_channel_bias",
                lhs: shape,
                rhs: bias.shape(),
            });
        }
        let expanded = bias.reshape(&[1, c, 1, 1])?.expand_to(&shape)?;
        self.add(expanded)
    }

    /// `x · W + b` for x: N×F, W: F×K, b: K.
    pub fn linear(self, weight: Var<'g>, bias: Var<'g>) -> Result<Var<'g>> {
        let xw = self.matmul(weight)?;
        let shape = xw.shape();
        if bias.value().len() != shape[1] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: shape,
                rhs: bias.shape(),
            });
        }
        let b = bias.reshape(&[1, shape[1]])?.expand_to(&shape)?;
        xw.add(b)
    }

    /// Row-wise `log Σ exp` of an N×K matrix, optionally over a subset of
    /// entries (`mask[r*K + c]`). Returns N.
    pub fn logsumexp_rows(self, mask: Option<Vec<bool>>) -> Result<Var<'g>> {
        let x = self.value();
        let [rows, cols] = x.shape()[..] else {
            return Err(TensorError::RankMismatch {
                op: "logsumexp_rows",
                expected: 2,
                shape: x.shape().to_vec(),
            });
        };
        if let Some(m) = &mask {
            if m.len() != x.len() {
                return Err(TensorError::DataLength {
                    shape: x.shape().to_vec(),
                    len: m.len(),
                });
            }
        }
        let keep = |k: usize| mask.as_ref().is_none_or(|m| m[k]);
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = r * cols..(r + 1) * cols;
            let max = row
                .clone()
                .filter(|&k| keep(k))
                .map(|k| x.data()[k])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::Empty { op: "logsumexp_rows" });
            }
            let s = row
                .filter(|&k| keep(k))
                .fold(0.0, |acc, k| acc + (x.data()[k] - max).exp());
            out.push(max + s.ln());
        }
        let v = Tensor::new(vec![rows], out)?;
        self.unary("logsumexp_rows", v, Op::LogSumExpRows(self.id, mask.map(Rc::new)))
    }

    /// Picks `x[r, cols[r]]` from each row of an N×K matrix. Returns N.
    pub fn gather_cols(self, cols: &[usize]) -> Result<Var<'g>> {
        let x = self.value();
        let [rows, k] = x.shape()[..] else {
            return Err(TensorError::RankMismatch {
                op: "gather_cols",
                expected: 2,
                shape: x.shape().to_vec(),
            });
        };
        if cols.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "gather_cols",
                lhs: x.shape().to_vec(),
                rhs: vec![cols.len()],
            });
        }
        let mut out = Vec::with_capacity(rows);
        for (r, &c) in cols.iter().enumerate() {
            if c >= k {
                return Err(TensorError::IndexOutOfRange { index: c, len: k });
            }
            out.push(x.data()[r * k + c]);
        }
        let v = Tensor::new(vec![rows], out)?;
        self.unary("gather_cols", v, Op::GatherCols(self.id, cols.to_vec()))
    }

    /// Detached copy: same value, no gradient path.
    pub fn detach(self) -> Var<'g> {
        self.graph.constant(self.value().as_ref().clone())
    }
}
