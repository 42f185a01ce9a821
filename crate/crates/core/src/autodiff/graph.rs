use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

/// Whether stochastic and batch-statistic ops behave as in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    MatMul(NodeId, NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: (usize, usize),
        pad: (usize, usize),
    },
    MaxPool2d {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Norm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        kind: NormKind,
    },
    Relu(NodeId),
    Gelu(NodeId),
    Softmax(NodeId),
    Dropout {
        x: NodeId,
        mask: Vec<T>,
    },
    Reshape(NodeId),
    Permute {
        x: NodeId,
        perm: Vec<usize>,
    },
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Expand(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        scale: T,
    },
    Inverse(NodeId),
    SkewFromPacked(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum NormKind {
    /// Per-channel over N·H·W with batch statistics.
    BatchTrain,
    /// Per-channel affine with running statistics.
    BatchEval,
    /// Per-row over the last axis.
    Layer,
}

pub(crate) struct Node<T> {
    pub(crate) value: Arc<Tensor<T>>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    pub(crate) name: Option<String>,
}

/// Define-by-run tape. Every op appends a node; [`Graph::backward`] walks it in reverse.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    mode: Mode,
    pub(crate) rng: ChaCha8Rng,
    buffer_updates: Vec<(String, Tensor<T>)>,
}

impl<T: Element> Graph<T> {
    pub fn new(mode: Mode, seed: u64) -> Self {
        flush_subnormals();
        Self {
            nodes: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            buffer_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Leaf whose gradient is tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push_leaf(Arc::new(value), requires_grad, None)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    /// Named parameter leaf sharing storage with its owner.
    pub fn param(&mut self, name: &str, value: Arc<Tensor<T>>, trainable: bool) -> NodeId {
        self.push_leaf(value, trainable, Some(name.to_string()))
    }

    fn push_leaf(&mut self, value: Arc<Tensor<T>>, requires_grad: bool, name: Option<String>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            name,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
            name: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a running-statistics update produced by a training-mode forward.
    pub fn push_buffer_update(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.buffer_updates.push((name.into(), value));
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(String, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(loss_value.shape().to_vec(), T::one()));
        let mut leaves = HashMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                leaves.insert(NodeId(idx), (node.name.clone(), g));
                continue;
            }
            for (input, gi) in self.input_grads(NodeId(idx), &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&gi),
                    slot => *slot = Some(gi),
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T> {
    leaves: HashMap<NodeId, (Option<String>, Tensor<T>)>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.leaves.get(&id).map(|(_, g)| g)
    }

    /// Gradients of named parameter leaves. A name bound twice has its gradients summed.
    pub fn by_name(&self) -> HashMap<String, Tensor<T>> {
        let mut out: HashMap<String, Tensor<T>> = HashMap::new();
        let mut keyed: Vec<_> = self.leaves.iter().collect();
        keyed.sort_by_key(|(id, _)| **id);
        for (_, (name, g)) in keyed {
            if let Some(name) = name {
                match out.get_mut(name) {
                    Some(acc) => acc.add_assign(g),
                    None => {
                        out.insert(name.clone(), g.clone());
                    }
                }
            }
        }
        out
    }
}

/// Sets flush-to-zero and denormals-are-zero for the current thread.
///
/// Saturated softmax tails leave gradients in the subnormal range, where
/// x86 arithmetic runs an order of magnitude slower.
#[cfg(all(target_arch = "x86_64", target_feature = "sse"))]
#[allow(deprecated)]
fn flush_subnormals() {
    use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
    const FTZ_DAZ: u32 = 0x8040;
    // SAFETY: only the rounding-mode flags of MXCSR change; SSE is available on every x86_64 CPU.
    unsafe {
        let csr = _mm_getcsr();
        if csr & FTZ_DAZ != FTZ_DAZ {
            _mm_setcsr(csr | FTZ_DAZ);
        }
    }
}

#[cfg(not(all(target_arch = "x86_64", target_feature = "sse")))]
fn flush_subnormals() {}
