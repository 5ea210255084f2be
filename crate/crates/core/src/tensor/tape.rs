use super::DiffTensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Transpose { x: Var },
    Conv2d { x: Var, k: Var, stride: usize, padding: usize },
    Add { a: Var, b: Var },
    Hadamard { a: Var, b: Var },
    ScalarMul { x: Var, s: f64 },
    Relu { x: Var },
    Gelu { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var, axis: usize },
    ScaleChannels { x: Var, s: Var },
    AddChannelBias { x: Var, b: Var },
    AddRowBias { x: Var, b: Var },
    AvgPool { x: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    Dropout { x: Var, mask: Vec<f64> },
    Reshape { x: Var },
    Stack { parts: Vec<Var> },
    Concat { parts: Vec<Var> },
    SelectRow { x: Var, row: usize },
    SumRows { x: Var },
    Sum { x: Var },
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) tensor: DiffTensor,
    pub(crate) op: Op,
}

/// Records operations in execution order for a single reverse pass.
///
/// A tape is single-writer. Run independent forward/backward passes on
/// separate tapes.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf, keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, mut tensor: DiffTensor) -> Var {
        tensor.zero_grad();
        self.push_node(tensor, Op::Leaf)
    }

    pub fn constant(&mut self, tensor: DiffTensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn variable(&mut self, tensor: DiffTensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn tensor(&self, v: Var) -> &DiffTensor {
        &self.nodes[v.0].tensor
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.value()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad()
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.tensor.zero_grad();
        }
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        let requires_grad = op_inputs(&op).iter().any(|v| self.requires_grad(*v));
        self.push_node(DiffTensor::from_parts(shape, value, requires_grad), op)
    }

    fn push_node(&mut self, tensor: DiffTensor, op: Op) -> Var {
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    /// Seeds `d root / d root = 1` and propagates gradients to every node that
    /// requires them. Gradients accumulate, so call [`Tape::zero_grad`] before
    /// a second pass over the same tape.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let n = self.tensor(root).numel();
        if n != 1 {
            return Err(Error::shape("backward", "scalar root", format!("{n} elements")));
        }
        if !self.requires_grad(root) {
            return Ok(());
        }
        self.nodes[root.0].tensor.grad_mut()[0] += 1.0;
        for i in (0..=root.0).rev() {
            let (prev, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.tensor.requires_grad() || matches!(node.op, Op::Leaf) {
                continue;
            }
            backward_node(&node.op, &node.tensor, prev);
        }
        Ok(())
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    use Op::*;
    match op {
        Leaf => vec![],
        MatMul { a, b } | Add { a, b } | Hadamard { a, b } => vec![*a, *b],
        Conv2d { x, k, .. } => vec![*x, *k],
        ScaleChannels { x, s } => vec![*x, *s],
        AddChannelBias { x, b } | AddRowBias { x, b } => vec![*x, *b],
        Transpose { x }
        | ScalarMul { x, .. }
        | Relu { x }
        | Gelu { x }
        | Sigmoid { x }
        | Softmax { x, .. }
        | AvgPool { x }
        | MaxPool { x, .. }
        | Dropout { x, .. }
        | Reshape { x }
        | SelectRow { x, .. }
        | SumRows { x }
        | Sum { x } => vec![*x],
        CrossEntropy { logits, .. } => vec![*logits],
        Stack { parts } | Concat { parts } => parts.clone(),
    }
}

/// Read access to an earlier node's value.
pub(crate) fn val(prev: &[Node], v: Var) -> &[f64] {
    prev[v.0].tensor.value()
}

pub(crate) fn shape_of(prev: &[Node], v: Var) -> &[usize] {
    prev[v.0].tensor.shape()
}

/// Adds `contrib` into the gradient of `v` if it participates in the pass.
pub(crate) fn accumulate(prev: &mut [Node], v: Var, contrib: &[f64]) {
    let t = &mut prev[v.0].tensor;
    if !t.requires_grad() {
        return;
    }
    for (g, c) in t.grad_mut().iter_mut().zip(contrib) {
        *g += c;
    }
}

pub(crate) fn wants_grad(prev: &[Node], v: Var) -> bool {
    prev[v.0].tensor.requires_grad()
}

fn backward_node(op: &Op, out: &DiffTensor, prev: &mut [Node]) {
    use super::{conv, elementwise, linalg, loss, pool, structural};
    let g = out.grad();
    match op {
        Op::Leaf => {}
        Op::MatMul { a, b } => linalg::matmul_backward(prev, *a, *b, g),
        Op::Transpose { x } => linalg::transpose_backward(prev, *x, g),
        Op::Conv2d {
            x,
            k,
            stride,
            padding,
        } => conv::conv2d_backward(prev, *x, *k, *stride, *padding, out.shape(), g),
        Op::Add { a, b } => {
            accumulate(prev, *a, g);
            accumulate(prev, *b, g);
        }
        Op::Hadamard { a, b } => elementwise::hadamard_backward(prev, *a, *b, g),
        Op::ScalarMul { x, s } => {
            let c: Vec<f64> = g.iter().map(|gi| gi * s).collect();
            accumulate(prev, *x, &c);
        }
        Op::Relu { x } => elementwise::relu_backward(prev, *x, g),
        Op::Gelu { x } => elementwise::gelu_backward(prev, *x, g),
        Op::Sigmoid { x } => elementwise::sigmoid_backward(prev, *x, out.value(), g),
        Op::Softmax { x, axis } => {
            elementwise::softmax_backward(prev, *x, *axis, out.shape(), out.value(), g)
        }
        Op::ScaleChannels { x, s } => structural::scale_channels_backward(prev, *x, *s, g),
        Op::AddChannelBias { x, b } => structural::add_channel_bias_backward(prev, *x, *b, g),
        Op::AddRowBias { x, b } => structural::add_row_bias_backward(prev, *x, *b, g),
        Op::AvgPool { x } => pool::avg_pool_backward(prev, *x, g),
        Op::MaxPool { x, argmax } => pool::max_pool_backward(prev, *x, argmax, g),
        Op::Dropout { x, mask } => {
            let c: Vec<f64> = g.iter().zip(mask).map(|(gi, m)| gi * m).collect();
            accumulate(prev, *x, &c);
        }
        Op::Reshape { x } => accumulate(prev, *x, g),
        Op::Stack { parts } | Op::Concat { parts } => structural::concat_backward(prev, parts, g),
        Op::SelectRow { x, row } => structural::select_row_backward(prev, *x, *row, g),
        Op::SumRows { x } => structural::sum_rows_backward(prev, *x, g),
        Op::Sum { x } => {
            let n = prev[x.0].tensor.numel();
            accumulate(prev, *x, &vec![g[0]; n]);
        }
        Op::CrossEntropy {
            logits,
            target,
            probs,
        } => loss::cross_entropy_backward(prev, *logits, *target, probs, g[0]),
    }
}
