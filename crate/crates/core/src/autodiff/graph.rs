//! Static computation graphs with forward evaluation and reverse-mode gradients.
//!
//! A [`Graph`] is an append-only list of [`Op`] records. Because builder methods
//! only accept ids of nodes that already exist, every node's inputs precede it
//! and the list is a valid topological order by construction.
//!
//! Shapes are checked at evaluation time, so one graph serves any batch size.

use std::collections::HashMap;
use std::fmt;

use super::kernels;
use super::{GraphError, Gradients, ParamId, ParamStore, Tensor};

/// Index of a node inside its [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Named input bindings for one evaluation.
pub type Inputs = HashMap<String, Tensor>;

/// Operation kinds.
///
/// Binary elementwise ops broadcast with numpy rules (trailing dimensions
/// aligned, size-1 or missing dimensions stretched).
#[derive(Debug, Clone)]
pub enum Op {
    Input(String),
    Param(ParamId),
    Const(Tensor),
    /// `[.., p, q] x [.., q, r]`; a rank-2 operand is shared across the other's batch.
    MatMul(NodeId, NodeId),
    /// Swap the last two axes.
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    DivScalar(NodeId, f64),
    AddScalar(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Square(NodeId),
    Softmax { input: NodeId, axis: usize },
    /// Sum over one axis (removed), or over everything to a scalar.
    Sum { input: NodeId, axis: Option<usize> },
    Mean { input: NodeId, axis: Option<usize> },
    /// Keep the first `keep` dimensions and replace the rest by `tail`.
    Reshape { input: NodeId, keep: usize, tail: Vec<usize> },
    Slice { input: NodeId, axis: usize, start: usize, end: usize },
    /// Select positions along the last axis.
    Gather { input: NodeId, indices: Vec<usize> },
    /// Squared euclidean distance of every row `[.., m]` to every center `[k, m]` → `[.., k]`.
    SqDist { input: NodeId, centers: NodeId },
}

impl Op {
    fn operands(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Input(_) | Param(_) | Const(_) => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![*a, *b],
            SqDist { input, centers } => vec![*input, *centers],
            Transpose(a) | Scale(a, _) | DivScalar(a, _) | AddScalar(a, _) | Tanh(a)
            | Sigmoid(a) | Relu(a) | Exp(a) | Square(a) => vec![*a],
            Softmax { input, .. }
            | Sum { input, .. }
            | Mean { input, .. }
            | Reshape { input, .. }
            | Slice { input, .. }
            | Gather { input, .. } => vec![*input],
        }
    }

    pub fn kind(&self) -> &'static str {
        use Op::*;
        match self {
            Input(_) => "input",
            Param(_) => "param",
            Const(_) => "const",
            MatMul(..) => "matmul",
            Transpose(_) => "transpose",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Div(..) => "div",
            Scale(..) => "scale",
            DivScalar(..) => "div_scalar",
            AddScalar(..) => "add_scalar",
            Tanh(_) => "tanh",
            Sigmoid(_) => "sigmoid",
            Relu(_) => "relu",
            Exp(_) => "exp",
            Square(_) => "square",
            Softmax { .. } => "softmax",
            Sum { .. } => "sum",
            Mean { .. } => "mean",
            Reshape { .. } => "reshape",
            Slice { .. } => "slice",
            Gather { .. } => "gather",
            SqDist { .. } => "sqdist",
        }
    }
}

/// Append-only computation graph with one designated output.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Op>,
    output: Option<NodeId>,
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

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0]
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    pub fn set_output(&mut self, id: NodeId) {
        self.check(id);
        self.output = Some(id);
    }

    /// Parameter ids referenced by this graph, in node order, without repeats.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for op in &self.nodes {
            if let Op::Param(p) = op {
                if !ids.contains(p) {
                    ids.push(*p);
                }
            }
        }
        ids
    }

    fn check(&self, id: NodeId) {
        assert!(id.0 < self.nodes.len(), "node {id} does not exist yet");
    }

    fn push(&mut self, op: Op) -> NodeId {
        for operand in op.operands() {
            self.check(operand);
        }
        self.nodes.push(op);
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Input(name.into()))
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(Op::Param(id))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(a, c))
    }

    pub fn div_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::DivScalar(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::AddScalar(a, c))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a))
    }

    pub fn softmax(&mut self, input: NodeId, axis: usize) -> NodeId {
        self.push(Op::Softmax { input, axis })
    }

    pub fn sum(&mut self, input: NodeId, axis: Option<usize>) -> NodeId {
        self.push(Op::Sum { input, axis })
    }

    pub fn mean(&mut self, input: NodeId, axis: Option<usize>) -> NodeId {
        self.push(Op::Mean { input, axis })
    }

    pub fn reshape(&mut self, input: NodeId, keep: usize, tail: Vec<usize>) -> NodeId {
        self.push(Op::Reshape { input, keep, tail })
    }

    pub fn slice(&mut self, input: NodeId, axis: usize, start: usize, end: usize) -> NodeId {
        assert!(start < end, "empty slice {start}..{end}");
        self.push(Op::Slice { input, axis, start, end })
    }

    pub fn gather(&mut self, input: NodeId, indices: Vec<usize>) -> NodeId {
        assert!(!indices.is_empty(), "empty gather");
        self.push(Op::Gather { input, indices })
    }

    pub fn sqdist(&mut self, input: NodeId, centers: NodeId) -> NodeId {
        self.push(Op::SqDist { input, centers })
    }

    /// `x · w + b` with `w: [in, out]` and `b: [out]`.
    pub fn affine(&mut self, x: NodeId, w: ParamId, b: ParamId) -> NodeId {
        let w = self.param(w);
        let b = self.param(b);
        let xw = self.matmul(x, w);
        self.add(xw, b)
    }

    /// Nodes the given targets depend on (inclusive).
    fn ancestors(&self, targets: &[NodeId]) -> Vec<bool> {
        let mut needed = vec![false; self.nodes.len()];
        for t in targets {
            self.check(*t);
            needed[t.0] = true;
        }
        for i in (0..self.nodes.len()).rev() {
            if needed[i] {
                for o in self.nodes[i].operands() {
                    needed[o.0] = true;
                }
            }
        }
        needed
    }

    fn forward(
        &self,
        targets: &[NodeId],
        inputs: &Inputs,
        params: &ParamStore,
    ) -> Result<Vec<Option<Tensor>>, GraphError> {
        let needed = self.ancestors(targets);
        let last = targets.iter().map(|t| t.0).max().unwrap_or(0);
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for i in 0..=last.min(self.nodes.len().saturating_sub(1)) {
            if !needed[i] {
                continue;
            }
            let id = NodeId(i);
            let v = self.forward_node(id, &values, inputs, params)?;
            if !v.all_finite() {
                return Err(GraphError::NonFinite { node: id, kind: self.nodes[i].kind() });
            }
            values[i] = Some(v);
        }
        Ok(values)
    }

    fn forward_node(
        &self,
        id: NodeId,
        values: &[Option<Tensor>],
        inputs: &Inputs,
        params: &ParamStore,
    ) -> Result<Tensor, GraphError> {
        let val = |n: &NodeId| values[n.0].as_ref().expect("operand evaluated before use");
        let mismatch = |detail: String| GraphError::ShapeMismatch { node: id, detail };
        use Op::*;
        Ok(match &self.nodes[id.0] {
            Input(name) => inputs
                .get(name)
                .cloned()
                .ok_or_else(|| GraphError::MissingInput { node: id, name: name.clone() })?,
            Param(p) => params
                .get(*p)
                .cloned()
                .ok_or(GraphError::UnknownParam { node: id, param: *p })?,
            Const(t) => t.clone(),
            MatMul(a, b) => kernels::matmul(val(a), val(b)).map_err(mismatch)?,
            Transpose(a) => kernels::transpose(val(a)).map_err(mismatch)?,
            Add(a, b) => kernels::binary(val(a), val(b), |x, y| x + y).map_err(mismatch)?,
            Sub(a, b) => kernels::binary(val(a), val(b), |x, y| x - y).map_err(mismatch)?,
            Mul(a, b) => kernels::binary(val(a), val(b), |x, y| x * y).map_err(mismatch)?,
            Div(a, b) => kernels::binary(val(a), val(b), |x, y| x / y).map_err(mismatch)?,
            Scale(a, c) => val(a).map(|x| x * c),
            DivScalar(a, c) => val(a).map(|x| x / c),
            AddScalar(a, c) => val(a).map(|x| x + c),
            Tanh(a) => val(a).map(f64::tanh),
            Sigmoid(a) => val(a).map(sigmoid),
            Relu(a) => val(a).map(|x| x.max(0.0)),
            Exp(a) => val(a).map(f64::exp),
            Square(a) => val(a).map(|x| x * x),
            Softmax { input, axis } => kernels::softmax(val(input), *axis).map_err(mismatch)?,
            Sum { input, axis } => kernels::sum(val(input), *axis).map_err(mismatch)?,
            Mean { input, axis } => {
                let x = val(input);
                let count = match axis {
                    Some(ax) => *x.shape().get(*ax).unwrap_or(&1),
                    None => x.len(),
                } as f64;
                kernels::sum(x, *axis).map_err(mismatch)?.map(|s| s / count)
            }
            Reshape { input, keep, tail } => {
                let x = val(input);
                if *keep > x.rank() {
                    return Err(mismatch(format!("cannot keep {keep} dims of {:?}", x.shape())));
                }
                let mut shape = x.shape()[..*keep].to_vec();
                shape.extend_from_slice(tail);
                x.clone()
                    .reshaped(shape)
                    .map_err(|e| mismatch(e.to_string()))?
            }
            Slice { input, axis, start, end } => {
                kernels::slice(val(input), *axis, *start, *end).map_err(mismatch)?
            }
            Gather { input, indices } => kernels::gather(val(input), indices).map_err(mismatch)?,
            SqDist { input, centers } => {
                kernels::sqdist(val(input), val(centers)).map_err(mismatch)?
            }
        })
    }

    /// Forward pass returning the designated output.
    pub fn evaluate(&self, inputs: &Inputs, params: &ParamStore) -> Result<Tensor, GraphError> {
        let out = self.output.ok_or(GraphError::NoOutput)?;
        self.evaluate_node(out, inputs, params)
    }

    pub fn evaluate_node(
        &self,
        node: NodeId,
        inputs: &Inputs,
        params: &ParamStore,
    ) -> Result<Tensor, GraphError> {
        let mut values = self.forward(&[node], inputs, params)?;
        Ok(values[node.0].take().expect("target evaluated"))
    }

    pub fn evaluate_nodes(
        &self,
        nodes: &[NodeId],
        inputs: &Inputs,
        params: &ParamStore,
    ) -> Result<Vec<Tensor>, GraphError> {
        let values = self.forward(nodes, inputs, params)?;
        Ok(nodes.iter().map(|n| values[n.0].clone().expect("target evaluated")).collect())
    }

    /// Reverse-mode gradient of the scalar output with respect to every parameter
    /// in `params`. Unreachable parameters receive zero gradients.
    pub fn gradients(
        &self,
        inputs: &Inputs,
        params: &ParamStore,
    ) -> Result<(f64, Gradients), GraphError> {
        let out = self.output.ok_or(GraphError::NoOutput)?;
        let values = self.forward(&[out], inputs, params)?;
        let out_val = values[out.0].as_ref().expect("output evaluated");
        let loss = match out_val.item() {
            Some(v) => v,
            None => return Err(GraphError::NonScalarOutput { shape: out_val.shape().to_vec() }),
        };

        let needed = self.ancestors(&[out]);
        // Only propagate into nodes that lead to a parameter.
        let mut wants = vec![false; self.nodes.len()];
        for (i, op) in self.nodes.iter().enumerate().take(out.0 + 1) {
            wants[i] = needed[i]
                && match op {
                    Op::Param(_) => true,
                    other => other.operands().iter().any(|o| wants[o.0]),
                };
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::filled(out_val.shape(), 1.0));
        let mut param_grads: Vec<Tensor> =
            params.ids().map(|p| Tensor::zeros(params.value(p).shape())).collect();

        for i in (0..=out.0).rev() {
            if !wants[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let val = |n: &NodeId| values[n.0].as_ref().expect("forward value present");
            let y = values[i].as_ref().expect("forward value present");
            let acc = |n: NodeId, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !wants[n.0] {
                    return;
                }
                match &mut grads[n.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            use Op::*;
            match &self.nodes[i] {
                Input(_) | Const(_) => {}
                Param(p) => {
                    if let Some(slot) = param_grads.get_mut(p.0) {
                        slot.add_assign(&g);
                    }
                }
                MatMul(a, b) => {
                    let (ga, gb) = kernels::matmul_backward(val(a), val(b), &g);
                    acc(*a, ga, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Transpose(a) => {
                    let t = kernels::transpose(&g).expect("rank checked in forward");
                    acc(*a, t, &mut grads);
                }
                Add(a, b) => {
                    let (ga, gb) =
                        kernels::binary_backward(val(a), val(b), &g, |_, _| 1.0, |_, _| 1.0);
                    acc(*a, ga, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Sub(a, b) => {
                    let (ga, gb) =
                        kernels::binary_backward(val(a), val(b), &g, |_, _| 1.0, |_, _| -1.0);
                    acc(*a, ga, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Mul(a, b) => {
                    let (ga, gb) =
                        kernels::binary_backward(val(a), val(b), &g, |_, y| y, |x, _| x);
                    acc(*a, ga, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Div(a, b) => {
                    let (ga, gb) = kernels::binary_backward(
                        val(a),
                        val(b),
                        &g,
                        |_, y| 1.0 / y,
                        |x, y| -x / (y * y),
                    );
                    acc(*a, ga, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Scale(a, c) => acc(*a, g.map(|v| v * c), &mut grads),
                DivScalar(a, c) => acc(*a, g.map(|v| v / c), &mut grads),
                AddScalar(a, _) => acc(*a, g, &mut grads),
                Tanh(a) => acc(*a, kernels::zip(&g, y, |g, y| g * (1.0 - y * y)), &mut grads),
                Sigmoid(a) => acc(*a, kernels::zip(&g, y, |g, y| g * y * (1.0 - y)), &mut grads),
                Relu(a) => acc(
                    *a,
                    kernels::zip(&g, val(a), |g, x| if x > 0.0 { g } else { 0.0 }),
                    &mut grads,
                ),
                Exp(a) => acc(*a, kernels::zip(&g, y, |g, y| g * y), &mut grads),
                Square(a) => acc(*a, kernels::zip(&g, val(a), |g, x| 2.0 * g * x), &mut grads),
                Softmax { input, axis } => {
                    acc(*input, kernels::softmax_backward(y, &g, *axis), &mut grads)
                }
                Sum { input, axis } => {
                    acc(*input, kernels::expand(&g, val(input).shape(), *axis), &mut grads)
                }
                Mean { input, axis } => {
                    let x = val(input);
                    let count = match axis {
                        Some(ax) => x.shape()[*ax],
                        None => x.len(),
                    } as f64;
                    let t = kernels::expand(&g, x.shape(), *axis).map(|v| v / count);
                    acc(*input, t, &mut grads)
                }
                Reshape { input, .. } => {
                    let shape = val(input).shape().to_vec();
                    acc(*input, Tensor::from_parts(shape, g.into_data()), &mut grads)
                }
                Slice { input, axis, start, end } => acc(
                    *input,
                    kernels::slice_backward(val(input).shape(), &g, *axis, *start, *end),
                    &mut grads,
                ),
                Gather { input, indices } => acc(
                    *input,
                    kernels::gather_backward(val(input).shape(), &g, indices),
                    &mut grads,
                ),
                SqDist { input, centers } => {
                    let (gx, gc) = kernels::sqdist_backward(val(input), val(centers), &g);
                    acc(*input, gx, &mut grads);
                    acc(*centers, gc, &mut grads);
                }
            }
        }
        Ok((loss, Gradients::new(param_grads)))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
