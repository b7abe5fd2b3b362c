use std::borrow::Cow;
use std::sync::atomic::{AtomicU32, Ordering};

use super::ops::Op;
use super::{check_finite, Shape, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    pub(crate) index: usize,
}

pub(crate) struct Node<'a> {
    pub shape: Shape,
    pub value: Cow<'a, [f32]>,
    pub requires_grad: bool,
    pub op: Op,
}

/// Wengert list for one forward/backward pass.
///
/// Leaves borrow their values from the caller's tensors for the lifetime of
/// the tape, so parameters are never copied. Nodes are appended in creation
/// order and `backward` walks them once in reverse.
pub struct Tape<'a> {
    id: u32,
    pub(crate) nodes: Vec<Node<'a>>,
    consumed: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    /// Binds a tensor; it receives a gradient iff `requires_grad` is set on it.
    pub fn leaf(&mut self, tensor: &'a Tensor) -> Var {
        self.push_node(
            tensor.shape.clone(),
            Cow::Borrowed(&tensor.data),
            tensor.requires_grad,
            Op::Leaf,
        )
    }

    /// Binds a tensor as a constant regardless of its `requires_grad` flag.
    pub fn constant(&mut self, tensor: &'a Tensor) -> Var {
        self.push_node(
            tensor.shape.clone(),
            Cow::Borrowed(&tensor.data),
            false,
            Op::Leaf,
        )
    }

    /// Moves an owned tensor onto the tape as a leaf.
    pub fn leaf_owned(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad;
        self.push_node(tensor.shape, Cow::Owned(tensor.data), requires_grad, Op::Leaf)
    }

    /// Tape-free copy of `x`: later ops see its values but no gradient flows back.
    pub fn detach(&mut self, x: Var) -> Var {
        let node = &self.nodes[self.check(x)];
        let (shape, data) = (node.shape.clone(), node.value.to_vec());
        self.push_node(shape, Cow::Owned(data), false, Op::Leaf)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, x: Var) -> &[f32] {
        &self.nodes[self.check(x)].value
    }

    pub fn shape(&self, x: Var) -> &Shape {
        &self.nodes[self.check(x)].shape
    }

    pub fn requires_grad(&self, x: Var) -> bool {
        self.nodes[self.check(x)].requires_grad
    }

    /// Whether `x` was produced by a recorded operation (as opposed to a leaf
    /// or a constant folded out of the graph).
    pub fn has_tape_node(&self, x: Var) -> bool {
        !matches!(self.nodes[self.check(x)].op, Op::Leaf)
    }

    /// Copies the value of `x` into a fresh gradient-free tensor.
    pub fn to_tensor(&self, x: Var) -> Tensor {
        let node = &self.nodes[self.check(x)];
        Tensor::from_parts(node.shape.clone(), node.value.to_vec())
    }

    /// Scalar value of a rank-0 (or single-element) variable.
    pub fn scalar(&self, x: Var) -> f32 {
        self.value(x)[0]
    }

    pub(crate) fn check(&self, x: Var) -> usize {
        assert_eq!(x.tape, self.id, "variable used on a tape that did not create it");
        x.index
    }

    pub(crate) fn push_node(
        &mut self,
        shape: Shape,
        value: Cow<'a, [f32]>,
        requires_grad: bool,
        op: Op,
    ) -> Var {
        debug_assert_eq!(shape.numel(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Records the result of an op. Constant-only inputs fold into a leaf so
    /// no saved activations are kept for them.
    pub(crate) fn record(
        &mut self,
        name: &str,
        shape: Shape,
        value: Vec<f32>,
        op: Op,
    ) -> Result<Var> {
        check_finite(name, &value)?;
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        Ok(self.push_node(shape, Cow::Owned(value), requires_grad, op))
    }

    /// Reverse sweep from a scalar loss. Returns ∂loss/∂leaf for every
    /// gradient-requiring leaf and clears the tape; a second call fails.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Autograd("backward called twice on the same tape"));
        }
        let root = self.check(loss);
        if self.nodes[root].shape.numel() != 1 {
            return Err(Error::Autograd("backward requires a scalar loss"));
        }
        if !self.nodes[root].requires_grad {
            return Err(Error::Autograd(
                "backward on a tensor that does not depend on any gradient leaf",
            ));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f32>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);
        let mut leaves = Vec::new();
        for idx in (0..=root).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                check_finite("backward", &upstream)?;
                leaves.push((idx, upstream));
                continue;
            }
            for (input, g) in node.op.backward(&self.nodes, idx, &upstream) {
                if !self.nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
            }
        }
        self.nodes.clear();

        let mut by_index = vec![None; root + 1];
        for (idx, g) in leaves {
            by_index[idx] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            by_index,
        })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u32,
    by_index: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    /// Gradient of `x`, or `None` if the loss does not depend on it.
    pub fn get(&self, x: Var) -> Option<&[f32]> {
        assert_eq!(x.tape, self.tape, "variable from a different tape");
        self.by_index.get(x.index).and_then(|g| g.as_deref())
    }

    /// Moves the gradient of `x` out, leaving `None` behind.
    pub fn take(&mut self, x: Var) -> Option<Vec<f32>> {
        assert_eq!(x.tape, self.tape, "variable from a different tape");
        self.by_index.get_mut(x.index).and_then(Option::take)
    }
}
