//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] is an append-only list of [`Node`]s. Each builder method
//! validates shapes, evaluates the new node immediately and returns its
//! [`NodeId`]; because inputs must already exist, the node list is always in
//! topological order. [`Graph::forward`] re-evaluates every non-leaf node
//! after leaves have been replaced with [`Graph::set_leaf`], and
//! [`Graph::backward`] propagates gradients from a scalar root.
//!
//! Binary elementwise ops accept equal shapes, or one operand with a single
//! element which is broadcast. No other broadcasting is performed.
//!
//! ```
//! use uqdepth::autodiff::{Array, Graph};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Array::scalar(3.0), true);
//! let y = g.square(x).unwrap();
//! assert_eq!(g.value(y).item(), 9.0);
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

mod array;
pub mod kernels;

use std::collections::HashMap;

pub use array::Array;
use kernels::ConvGeom;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    PowConst(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    MatMul(NodeId, NodeId),
    /// `input` is `n×cin×h×w`, `weight` is `cout×cin×k×k` with odd `k`,
    /// `bias` is `[cout]`. Zero padding of `(k-1)/2` on every side.
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
    },
    MaxElem(NodeId, NodeId),
    UpsampleNearest(NodeId, usize),
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        input: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    },
    FlipH(NodeId),
    FlipV(NodeId),
    Reshape(NodeId, Vec<usize>),
}

impl Op {
    pub fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) | MaxElem(a, b) => vec![*a, *b],
            Neg(a) | Exp(a) | Log(a) | Square(a) | Sqrt(a) | PowConst(a, _) | Sum(a) | Mean(a) | Relu(a)
            | Sigmoid(a) | Softplus(a) | UpsampleNearest(a, _) | FlipH(a) | FlipV(a) | Reshape(a, _) => {
                vec![*a]
            }
            Conv2d { input, weight, bias, .. } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Concat { inputs, .. } => inputs.clone(),
            Slice { input, .. } => vec![*input],
        }
    }

    pub fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Div(..) => "div",
            Neg(_) => "neg",
            Exp(_) => "exp",
            Log(_) => "log",
            Square(_) => "square",
            Sqrt(_) => "sqrt",
            PowConst(..) => "pow_const",
            Sum(_) => "sum",
            Mean(_) => "mean",
            Relu(_) => "relu",
            Sigmoid(_) => "sigmoid",
            Softplus(_) => "softplus",
            MatMul(..) => "matmul",
            Conv2d { .. } => "conv2d",
            MaxElem(..) => "max_elem",
            UpsampleNearest(..) => "upsample_nearest",
            Concat { .. } => "concat",
            Slice { .. } => "slice",
            FlipH(_) => "flip_h",
            FlipV(_) => "flip_v",
            Reshape(..) => "reshape",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub op: Op,
    pub value: Array,
    /// Set explicitly for leaves; inherited from any input for other nodes.
    pub requires_grad: bool,
}

impl Node {
    pub fn inputs(&self) -> Vec<NodeId> {
        self.op.inputs()
    }
}

/// Gradients of a scalar root with respect to every node that requires one.
#[derive(Debug, Clone, Default)]
pub struct GradientMap {
    grads: HashMap<NodeId, Array>,
}

impl GradientMap {
    pub fn get(&self, id: NodeId) -> Option<&Array> {
        self.grads.get(&id)
    }

    pub fn remove(&mut self, id: NodeId) -> Option<Array> {
        self.grads.remove(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.grads.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn same_or_scalar(ctx: &str, a: &Array, b: &Array) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.len() == 1 {
        Ok(a.shape().to_vec())
    } else if a.len() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::shape(ctx, a.shape(), b.shape()))
    }
}

#[inline]
fn at(a: &Array, i: usize) -> f64 {
    let d = a.data();
    if d.len() == 1 {
        d[0]
    } else {
        d[i]
    }
}

fn binary(ctx: &str, a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Result<Array> {
    let shape = same_or_scalar(ctx, a, b)?;
    Ok(Array::from_fn(&shape, |i| f(at(a, i), at(b, i))))
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
    (-x.abs()).exp().ln_1p() + x.max(0.0)
}

/// `(outer, axis_len, inner)` split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn leaf(&mut self, value: Array, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            id,
            op: Op::Leaf,
            value,
            requires_grad,
        });
        id
    }

    pub fn constant(&mut self, value: Array) -> NodeId {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Array::scalar(value))
    }

    /// Replaces a leaf's value. Call [`Graph::forward`] afterwards to refresh
    /// dependent nodes.
    pub fn set_leaf(&mut self, id: NodeId, value: Array) -> Result<()> {
        let node = self
            .nodes
            .get_mut(id.0)
            .ok_or_else(|| Error::Contract(format!("unknown node {}", id.0)))?;
        if node.op != Op::Leaf {
            return Err(Error::Contract(format!("node {} is not a leaf", id.0)));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::shape("set_leaf", node.value.shape(), value.shape()));
        }
        node.value = value;
        Ok(())
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let id = self.nodes.len();
        let inputs = op.inputs();
        if let Some(bad) = inputs.iter().find(|i| i.0 >= id) {
            return Err(Error::Contract(format!("node {} references future node {}", id, bad.0)));
        }
        let value = self.eval(id, &op)?;
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            id: NodeId(id),
            op,
            value,
            requires_grad,
        });
        Ok(NodeId(id))
    }

    /// Re-evaluates every non-leaf node in order.
    pub fn forward(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if self.nodes[i].op == Op::Leaf {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let value = self.eval(i, &op)?;
            self.nodes[i].value = value;
        }
        Ok(())
    }

    fn eval(&self, id: usize, op: &Op) -> Result<Array> {
        let v = |n: &NodeId| &self.nodes[n.0].value;
        let domain = |message: String| Error::Domain { node: Some(id), message };
        Ok(match op {
            Op::Leaf => return Err(Error::Contract("leaves are not evaluated".into())),
            Op::Add(a, b) => binary("add", v(a), v(b), |x, y| x + y)?,
            Op::Sub(a, b) => binary("sub", v(a), v(b), |x, y| x - y)?,
            Op::Mul(a, b) => binary("mul", v(a), v(b), |x, y| x * y)?,
            Op::Div(a, b) => {
                if v(b).data().contains(&0.0) {
                    return Err(domain("division by zero".into()));
                }
                binary("div", v(a), v(b), |x, y| x / y)?
            }
            Op::Neg(a) => v(a).map(|x| -x),
            Op::Exp(a) => v(a).map(f64::exp),
            Op::Log(a) => {
                if let Some(x) = v(a).data().iter().find(|&&x| !(x > 0.0)) {
                    return Err(domain(format!("log of non-positive value {x}")));
                }
                v(a).map(f64::ln)
            }
            Op::Square(a) => v(a).map(|x| x * x),
            Op::Sqrt(a) => {
                if let Some(x) = v(a).data().iter().find(|&&x| !(x > 0.0)) {
                    return Err(domain(format!("sqrt of non-positive value {x}")));
                }
                v(a).map(f64::sqrt)
            }
            Op::PowConst(a, p) => {
                if p.fract() != 0.0 {
                    if let Some(x) = v(a).data().iter().find(|&&x| !(x > 0.0)) {
                        return Err(domain(format!("non-integer power of non-positive value {x}")));
                    }
                }
                let p = *p;
                v(a).map(|x| x.powf(p))
            }
            Op::Sum(a) => Array::scalar(v(a).data().iter().sum()),
            Op::Mean(a) => Array::scalar(v(a).data().iter().sum::<f64>() / v(a).len() as f64),
            Op::Relu(a) => v(a).map(|x| x.max(0.0)),
            Op::Sigmoid(a) => v(a).map(sigmoid),
            Op::Softplus(a) => v(a).map(softplus),
            Op::MatMul(a, b) => {
                let (x, y) = (v(a), v(b));
                if x.ndim() != 2 || y.ndim() != 2 || x.shape()[1] != y.shape()[0] {
                    return Err(Error::shape("matmul", x.shape(), y.shape()));
                }
                let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                let mut out = vec![0.0; m * n];
                kernels::matmul_acc(x.data(), y.data(), m, k, n, &mut out);
                Array::new(vec![m, n], out)?
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
            } => {
                let (x, w) = (v(input), v(weight));
                let g = self.conv_geom(x, w, bias.as_ref().map(v), *stride)?;
                let n = x.shape()[0];
                let out = kernels::conv2d_forward(x.data(), n, w.data(), bias.as_ref().map(|b| v(b).data()), &g);
                Array::new(vec![n, g.cout, g.out_h(), g.out_w()], out)?
            }
            Op::MaxElem(a, b) => binary("max_elem", v(a), v(b), f64::max)?,
            Op::UpsampleNearest(a, f) => {
                let x = v(a);
                let (planes, h, w) = Self::trailing_hw(x, "upsample_nearest")?;
                if *f == 0 {
                    return Err(Error::Contract("upsample factor must be positive".into()));
                }
                let mut shape = x.shape().to_vec();
                let nd = shape.len();
                shape[nd - 2] *= f;
                shape[nd - 1] *= f;
                Array::new(shape, kernels::upsample_nearest(x.data(), planes, h, w, *f))?
            }
            Op::Concat { inputs, axis } => {
                let first = v(&inputs[0]);
                if *axis >= first.ndim() {
                    return Err(Error::Contract(format!("concat axis {axis} out of range for {:?}", first.shape())));
                }
                let mut shape = first.shape().to_vec();
                shape[*axis] = 0;
                for i in inputs {
                    let s = v(i).shape();
                    let compatible = s.len() == first.ndim()
                        && s.iter().zip(first.shape()).enumerate().all(|(d, (p, q))| d == *axis || p == q);
                    if !compatible {
                        return Err(Error::shape("concat", first.shape(), s));
                    }
                    shape[*axis] += s[*axis];
                }
                let (outer, _, inner) = split_axis(first.shape(), *axis);
                let mut out = Vec::with_capacity(shape.iter().product());
                for o in 0..outer {
                    for i in inputs {
                        let x = v(i);
                        let chunk = x.shape()[*axis] * inner;
                        out.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
                    }
                }
                Array::new(shape, out)?
            }
            Op::Slice {
                input,
                axis,
                start,
                len,
            } => {
                let x = v(input);
                if *axis >= x.ndim() || *len == 0 || start + len > x.shape()[*axis] {
                    return Err(Error::Contract(format!(
                        "slice axis={axis} start={start} len={len} invalid for {:?}",
                        x.shape()
                    )));
                }
                let (outer, alen, inner) = split_axis(x.shape(), *axis);
                let mut shape = x.shape().to_vec();
                shape[*axis] = *len;
                let mut out = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = o * alen * inner + start * inner;
                    out.extend_from_slice(&x.data()[base..base + len * inner]);
                }
                Array::new(shape, out)?
            }
            Op::FlipH(a) => v(a).flip_h()?,
            Op::FlipV(a) => v(a).flip_v()?,
            Op::Reshape(a, shape) => v(a).clone().reshape(shape)?,
        })
    }

    fn trailing_hw(x: &Array, ctx: &str) -> Result<(usize, usize, usize)> {
        if x.ndim() < 2 {
            return Err(Error::Contract(format!("{ctx} needs at least 2 dims, got {:?}", x.shape())));
        }
        let nd = x.ndim();
        let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
        Ok((x.len() / (h * w), h, w))
    }

    fn conv_geom(&self, x: &Array, w: &Array, bias: Option<&Array>, stride: usize) -> Result<ConvGeom> {
        if x.ndim() != 4 || w.ndim() != 4 || x.shape()[1] != w.shape()[1] {
            return Err(Error::shape("conv2d", x.shape(), w.shape()));
        }
        let k = w.shape()[2];
        if w.shape()[3] != k || k.is_multiple_of(2) {
            return Err(Error::Contract(format!("conv2d kernel must be square and odd, got {:?}", w.shape())));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::Contract(format!("conv2d stride must be 1 or 2, got {stride}")));
        }
        if let Some(b) = bias {
            if b.shape() != [w.shape()[0]] {
                return Err(Error::shape("conv2d bias", b.shape(), &[w.shape()[0]]));
            }
        }
        Ok(ConvGeom {
            cin: x.shape()[1],
            h: x.shape()[2],
            w: x.shape()[3],
            cout: w.shape()[0],
            k,
            stride,
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Div(a, b))
    }
    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Neg(a))
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Exp(a))
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Log(a))
    }
    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Square(a))
    }
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sqrt(a))
    }
    pub fn pow_const(&mut self, a: NodeId, p: f64) -> Result<NodeId> {
        self.push(Op::PowConst(a, p))
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(a))
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(a))
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(a))
    }
    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Softplus(a))
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }
    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>, stride: usize) -> Result<NodeId> {
        self.push(Op::Conv2d {
            input,
            weight,
            bias,
            stride,
        })
    }
    pub fn max_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MaxElem(a, b))
    }
    pub fn upsample_nearest(&mut self, a: NodeId, factor: usize) -> Result<NodeId> {
        self.push(Op::UpsampleNearest(a, factor))
    }
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::Contract("concat of zero inputs".into()));
        }
        self.push(Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        })
    }
    pub fn slice(&mut self, input: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::Slice {
            input,
            axis,
            start,
            len,
        })
    }
    pub fn flip_h(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::FlipH(a))
    }
    pub fn flip_v(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::FlipV(a))
    }
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.push(Op::Reshape(a, shape.to_vec()))
    }

    /// Gradients of the scalar `root` with respect to every node that
    /// requires one. Fan-out contributions are summed.
    pub fn backward(&self, root: NodeId) -> Result<GradientMap> {
        let rv = &self
            .nodes
            .get(root.0)
            .ok_or_else(|| Error::Contract(format!("unknown root node {}", root.0)))?
            .value;
        if rv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, node {} has shape {:?}",
                root.0,
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || node.op == Op::Leaf {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut out = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if !node.requires_grad {
                continue;
            }
            let data = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
            out.insert(node.id, Array::new(node.value.shape().to_vec(), data)?);
        }
        Ok(GradientMap { grads: out })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        let out = &node.value;

        // Accumulates a gradient contribution, summing if the input was broadcast.
        let mut acc = |id: NodeId, contrib: Vec<f64>| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            let n = self.nodes[id.0].value.len();
            let contrib = if n == 1 && contrib.len() != 1 {
                vec![contrib.iter().sum()]
            } else {
                contrib
            };
            match &mut grads[id.0] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    acc(*a, g.iter().enumerate().map(|(i, gi)| gi * at(vb, i)).collect());
                }
                if wants(*b) {
                    acc(*b, g.iter().enumerate().map(|(i, gi)| gi * at(va, i)).collect());
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    acc(*a, g.iter().enumerate().map(|(i, gi)| gi / at(vb, i)).collect());
                }
                if wants(*b) {
                    acc(
                        *b,
                        g.iter()
                            .enumerate()
                            .map(|(i, gi)| -gi * at(va, i) / (at(vb, i) * at(vb, i)))
                            .collect(),
                    );
                }
            }
            Op::Neg(a) => acc(*a, g.iter().map(|x| -x).collect()),
            Op::Exp(a) => acc(*a, g.iter().zip(out.data()).map(|(gi, o)| gi * o).collect()),
            Op::Log(a) => acc(*a, g.iter().zip(val(*a).data()).map(|(gi, x)| gi / x).collect()),
            Op::Square(a) => acc(*a, g.iter().zip(val(*a).data()).map(|(gi, x)| 2.0 * x * gi).collect()),
            Op::Sqrt(a) => acc(*a, g.iter().zip(out.data()).map(|(gi, o)| gi / (2.0 * o)).collect()),
            Op::PowConst(a, p) => acc(
                *a,
                g.iter().zip(val(*a).data()).map(|(gi, x)| gi * p * x.powf(p - 1.0)).collect(),
            ),
            Op::Sum(a) => acc(*a, vec![g[0]; val(*a).len()]),
            Op::Mean(a) => {
                let n = val(*a).len();
                acc(*a, vec![g[0] / n as f64; n])
            }
            Op::Relu(a) => acc(
                *a,
                g.iter()
                    .zip(val(*a).data())
                    .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                    .collect(),
            ),
            Op::Sigmoid(a) => acc(*a, g.iter().zip(out.data()).map(|(gi, s)| gi * s * (1.0 - s)).collect()),
            Op::Softplus(a) => acc(*a, g.iter().zip(val(*a).data()).map(|(gi, x)| gi * sigmoid(*x)).collect()),
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::matmul_abt_acc(g, vb.data(), m, k, n, &mut ga);
                    acc(*a, ga);
                }
                if wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::matmul_atb_acc(va.data(), g, m, k, n, &mut gb);
                    acc(*b, gb);
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
            } => {
                let (x, w) = (val(*input), val(*weight));
                let geom = self
                    .conv_geom(x, w, bias.map(val), *stride)
                    .expect("geometry validated at construction");
                let cg = kernels::conv2d_backward(x.data(), x.shape()[0], w.data(), g, &geom, wants(*input));
                if let Some(dx) = cg.input {
                    acc(*input, dx);
                }
                acc(*weight, cg.weight);
                if let Some(b) = bias {
                    acc(*b, cg.bias);
                }
            }
            Op::MaxElem(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let pick_a: Vec<bool> = (0..g.len()).map(|i| at(va, i) >= at(vb, i)).collect();
                if wants(*a) {
                    acc(*a, g.iter().zip(&pick_a).map(|(gi, &p)| if p { *gi } else { 0.0 }).collect());
                }
                if wants(*b) {
                    acc(*b, g.iter().zip(&pick_a).map(|(gi, &p)| if p { 0.0 } else { *gi }).collect());
                }
            }
            Op::UpsampleNearest(a, f) => {
                let (planes, h, w) = Self::trailing_hw(val(*a), "upsample_nearest").expect("validated");
                acc(*a, kernels::upsample_nearest_backward(g, planes, h, w, *f));
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_axis(out.shape(), *axis);
                let mut parts: Vec<Vec<f64>> = inputs.iter().map(|i| Vec::with_capacity(val(*i).len())).collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (p, i) in parts.iter_mut().zip(inputs) {
                        let chunk = val(*i).shape()[*axis] * inner;
                        p.extend_from_slice(&g[offset..offset + chunk]);
                        offset += chunk;
                    }
                }
                for (i, p) in inputs.iter().zip(parts) {
                    acc(*i, p);
                }
            }
            Op::Slice {
                input,
                axis,
                start,
                len,
            } => {
                let x = val(*input);
                let (outer, alen, inner) = split_axis(x.shape(), *axis);
                let mut gx = vec![0.0; x.len()];
                for o in 0..outer {
                    let base = o * alen * inner + start * inner;
                    gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*input, gx);
            }
            Op::FlipH(a) => {
                let ga = Array::new(out.shape().to_vec(), g.to_vec()).and_then(|x| x.flip_h());
                acc(*a, ga.expect("validated").into_data());
            }
            Op::FlipV(a) => {
                let ga = Array::new(out.shape().to_vec(), g.to_vec()).and_then(|x| x.flip_v());
                acc(*a, ga.expect("validated").into_data());
            }
            Op::Reshape(a, _) => acc(*a, g.to_vec()),
        }
    }
}

/// Maximum relative error between the analytic gradient of `root` with
/// respect to `leaf` and a central finite difference with the given step.
///
/// The relative error per element is
/// `|analytic - numeric| / max(1e-12, |numeric|)`. The graph is restored to
/// its original leaf value before returning.
pub fn grad_check(graph: &mut Graph, root: NodeId, leaf: NodeId, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Contract(format!("grad_check step must be positive, got {step}")));
    }
    if graph.node(leaf).op != Op::Leaf {
        return Err(Error::Contract(format!("node {} is not a leaf", leaf.index())));
    }
    let original = graph.value(leaf).clone();
    if !original.all_finite() {
        return Err(Error::Contract("grad_check leaf must be finite".into()));
    }
    let grads = graph.backward(root)?;
    let analytic = grads
        .get(leaf)
        .cloned()
        .unwrap_or_else(|| Array::zeros(original.shape()));

    let mut worst = 0.0f64;
    let mut probe = original.clone();
    let result = (|| -> Result<f64> {
        for i in 0..original.len() {
            probe.data_mut()[i] = original.data()[i] + step;
            graph.set_leaf(leaf, probe.clone())?;
            graph.forward()?;
            let plus = graph.value(root).item();
            probe.data_mut()[i] = original.data()[i] - step;
            graph.set_leaf(leaf, probe.clone())?;
            graph.forward()?;
            let minus = graph.value(root).item();
            probe.data_mut()[i] = original.data()[i];

            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1e-12);
            worst = worst.max(err);
        }
        Ok(worst)
    })();
    graph.set_leaf(leaf, original)?;
    graph.forward()?;
    result
}
