//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order. Each node owns its
//! output value plus whatever the backward rule needs; [`Graph::backward`]
//! walks the nodes once in reverse, so the tape is topologically ordered by
//! construction. Gradients fanning into one node are summed in node order,
//! which keeps repeated runs bitwise identical.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::ops::conv::ConvSpec;
use crate::ops::{activation, conv, elementwise, linear, loss, norm, pool, shuffle};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    Reshape {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Prelu {
        x: Var,
        alpha: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    Upsample {
        x: Var,
    },
    Shuffle {
        x: Var,
        groups: usize,
    },
    Softmax {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<Option<usize>>,
        valid: usize,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::Concat { parts } => parts.clone(),
            Op::SliceChannels { x, .. }
            | Op::Reshape { x }
            | Op::Sum { x }
            | Op::GlobalAvgPool { x }
            | Op::Upsample { x }
            | Op::Shuffle { x, .. }
            | Op::Softmax { x } => vec![*x],
            Op::Conv2d { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Prelu { x, alpha } => vec![*x, *alpha],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

/// The tape. One graph per forward pass; not meant to be shared across
/// concurrent backward calls.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
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

    /// Smallest `|x|` fed to any recorded PReLU, i.e. how close the current
    /// point is to a kink. `None` when the tape holds no PReLU.
    pub(crate) fn prelu_kink_distance(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Prelu { x, .. } => Some(self.nodes[x.0].value.data().iter().fold(T::infinity(), |m, v| m.min(v.abs()))),
                _ => None,
            })
            .reduce(|a, b| a.min(b))
    }

    /// Records an op output. Nodes with no differentiable input collapse to
    /// constants so their saved buffers are dropped right away.
    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        debug_assert!(value.is_finite(), "non-finite values produced by an operator");
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.shape() != [1] {
            bail!(Contract, "backward needs a scalar [1] loss, got shape {:?}", loss_value.shape());
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::scalar(T::one()));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(grad_out) = grads[i].take() else {
                continue;
            };
            for (input, g) in self.input_grads(Var(i), &grad_out) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn input_grads(&self, out: Var, grad_out: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[out.0];
        let need = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add { a, b } => elementwise::add_backward(self, *a, *b, grad_out),
            Op::Mul { a, b } => elementwise::mul_backward(self, *a, *b, grad_out),
            Op::Concat { parts } => elementwise::concat_backward(self, parts, grad_out),
            Op::SliceChannels { x, start } => {
                vec![(*x, elementwise::slice_backward(self.value(*x), *start, grad_out))]
            }
            Op::Reshape { x } => {
                let g = Tensor::from_parts(self.shape(*x).to_vec(), grad_out.data().to_vec());
                vec![(*x, g)]
            }
            Op::Sum { x } => {
                let g = Tensor::full(self.shape(*x), grad_out.data()[0]).expect("valid shape");
                vec![(*x, g)]
            }
            Op::Conv2d { x, w, b, spec } => {
                let mut out = Vec::new();
                let xv = self.value(*x);
                let wv = self.value(*w);
                if need(*x) {
                    out.push((*x, conv::conv2d_backward_input(xv.shape(), wv, grad_out, spec)));
                }
                if need(*w) {
                    out.push((*w, conv::conv2d_backward_weight(xv, wv.shape(), grad_out, spec)));
                }
                if let Some(b) = b {
                    if need(*b) {
                        out.push((*b, conv::conv2d_backward_bias(grad_out)));
                    }
                }
                out
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => norm::batch_norm_backward(
                self,
                (*x, *gamma, *beta),
                xhat,
                inv_std,
                *batch_stats,
                grad_out,
            ),
            Op::Prelu { x, alpha } => activation::prelu_backward(self, *x, *alpha, grad_out),
            Op::GlobalAvgPool { x } => vec![(*x, pool::gap_backward(self.shape(*x), grad_out))],
            Op::Upsample { x } => {
                vec![(*x, pool::bilinear_backward(self.shape(*x), grad_out))]
            }
            Op::Shuffle { x, groups } => {
                vec![(*x, shuffle::channel_shuffle_backward(grad_out, *groups))]
            }
            Op::Softmax { x } => {
                vec![(*x, activation::softmax_backward(&node.value, grad_out))]
            }
            Op::Linear { x, w, b } => linear::linear_backward(self, *x, *w, *b, grad_out),
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                valid,
            } => vec![(
                *logits,
                loss::cross_entropy_backward(self.shape(*logits), probs, targets, *valid, grad_out),
            )],
        }
    }
}

/// Result of a backward sweep: the gradient of every reached leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, if the loss depends on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Gradient of a leaf, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, graph: &Graph<T>, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| graph.value(v).zeros_like())
    }
}
