//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is the tape: every operation appends a node holding its output
//! value and enough saved state to run its backward rule. Node ids are handed
//! out in creation order, so the node list is already topologically sorted and
//! a single reverse sweep accumulates every gradient.
//!
//! ```
//! use lsnet_core::autodiff::Graph;
//! use lsnet_core::tensor::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::full([1, 1, 2, 2], 3.0));
//! let y = g.sum(x);
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0; 4]);
//! ```

mod attention;
mod conv;
mod elementwise;
mod matmul;
mod norm;
mod region;
mod softmax;

pub use attention::{attention_backward_kernel, attention_forward_kernel, validate_routing};
pub use conv::{conv2d_forward, ConvSpec};
pub use norm::{BatchNormState, BnMode};
pub use region::{topk_lastdim, Grid};

use crate::error::{Error, Result};
use crate::tensor::{IndexTensor, Real, Shape, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    BatchNorm { x: Var, gamma: Var, beta: Var, saved: norm::BnSaved<T> },
    Gelu { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Sum { x: Var },
    L1 { pred: Var, target: Var },
    Softmax { x: Var },
    BatchedMatmul { a: Var, b: Var },
    Transpose { x: Var },
    Reshape { x: Var },
    RegionMean { x: Var, grid: Grid },
    Gather { x: Var, index: Vec<usize> },
    ConcatBatch { parts: Vec<Var> },
    ToBatch { x: Var, groups: usize, grid: Grid },
    FromBatch { x: Var, groups: usize, grid: Grid },
    Crop { x: Var, top: usize, left: usize },
    Attention { q: Var, k: Var, v: Var, routing: IndexTensor, lse: Vec<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Gelu { .. } => "gelu",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::L1 { .. } => "l1_loss",
            Op::Softmax { .. } => "softmax",
            Op::BatchedMatmul { .. } => "batched_matmul",
            Op::Transpose { .. } => "transpose",
            Op::Reshape { .. } => "reshape",
            Op::RegionMean { .. } => "region_mean",
            Op::Gather { .. } => "gather_regions",
            Op::ConcatBatch { .. } => "concat_batch",
            Op::ToBatch { .. } => "to_batch",
            Op::FromBatch { .. } => "from_batch",
            Op::Crop { .. } => "crop",
            Op::Attention { .. } => "fine_attention",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    label: Option<String>,
}

/// The tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true, None)
    }

    /// Trainable leaf carrying a name used in diagnostics.
    pub fn param_named(&mut self, value: Tensor<T>, name: impl Into<String>) -> Var {
        self.leaf(value, true, Some(name.into()))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false, None)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool, label: Option<String>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, label });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, label: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Attach a diagnostic name to any node.
    pub fn set_label(&mut self, v: Var, label: impl Into<String>) {
        self.nodes[v.0].label = Some(label.into());
    }

    /// Human-readable description of a node: its label, or op name and id.
    pub fn describe(&self, v: Var) -> String {
        let node = &self.nodes[v.0];
        match &node.label {
            Some(l) => l.clone(),
            None => format!("{}#{}", node.op.name(), v.0),
        }
    }

    /// Debug sweep: first node (in creation order) holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<Var> {
        self.nodes.iter().position(|n| !n.value.is_finite()).map(Var)
    }

    /// Reverse sweep from a scalar `loss`, returning the gradient of every
    /// reachable leaf that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::invalid("backward", format!("unknown node {}", loss.0)))?;
        if node.value.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must hold one element, got shape {:?}", node.value.shape()),
            ));
        }
        if !node.requires_grad {
            return Err(Error::invalid("backward", "loss does not depend on any trainable leaf"));
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(node.value.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[id].take() else { continue };
            for (input, contribution) in self.backward_node(Var(id), &upstream)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, out: Var, dy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[out.0];
        let y = &node.value;
        let want = |v: &Var| self.nodes[v.0].requires_grad;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, w, b, spec } => conv::backward(self.value(*x), self.value(*w), dy, *spec, want(x), want(w), b.filter(|b| want(b)).is_some())
                .into_iter()
                .zip([Some(*x), Some(*w), *b])
                .filter_map(|(g, v)| Some((v?, g?)))
                .collect(),
            Op::BatchNorm { x, gamma, beta, saved } => {
                let (dx, dgamma, dbeta) = norm::backward(self.value(*gamma), saved, dy);
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Gelu { x } => vec![(*x, elementwise::gelu_backward(self.value(*x), dy))],
            Op::Add { a, b } => vec![(*a, dy.clone()), (*b, dy.clone())],
            Op::Sub { a, b } => vec![(*a, dy.clone()), (*b, dy.map(|v| -v))],
            Op::Scale { x, factor } => vec![(*x, dy.map(|v| v * *factor))],
            Op::Sum { x } => vec![(*x, Tensor::full(self.shape(*x), dy.data()[0]))],
            Op::L1 { pred, target } => {
                let g = elementwise::l1_backward(self.value(*pred), self.value(*target), dy.data()[0]);
                let neg = g.map(|v| -v);
                vec![(*pred, g), (*target, neg)]
            }
            Op::Softmax { x } => vec![(*x, softmax::backward(y, dy))],
            Op::BatchedMatmul { a, b } => {
                let (da, db) = matmul::backward(self.value(*a), self.value(*b), dy);
                vec![(*a, da), (*b, db)]
            }
            Op::Transpose { x } => vec![(*x, matmul::transpose_last(dy))],
            Op::Reshape { x } => vec![(*x, dy.clone().reshape(self.shape(*x))?)],
            Op::RegionMean { x, grid } => vec![(*x, region::region_mean_backward(self.shape(*x), *grid, dy))],
            Op::Gather { x, index } => vec![(*x, region::gather_backward(self.shape(*x), index, dy))],
            Op::ConcatBatch { parts } => {
                let shapes: Vec<Shape> = parts.iter().map(|p| self.shape(*p)).collect();
                parts.iter().copied().zip(region::split_batch(dy, &shapes)).collect()
            }
            Op::ToBatch { x, groups, grid } => vec![(*x, region::from_batch_kernel(dy, *groups, *grid))],
            Op::FromBatch { x, groups, grid } => vec![(*x, region::to_batch_kernel(dy, *groups, *grid))],
            Op::Crop { x, top, left } => vec![(*x, region::crop_backward(self.shape(*x), *top, *left, dy))],
            Op::Attention { q, k, v, routing, lse } => {
                let (dq, dk, dv) = attention::attention_backward_kernel(self.value(*q), self.value(*k), self.value(*v), y, routing, lse, dy);
                vec![(*q, dq), (*k, dk), (*v, dv)]
            }
        })
    }
}

/// Gradients produced by [`Graph::backward`]; populated for leaves only.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
