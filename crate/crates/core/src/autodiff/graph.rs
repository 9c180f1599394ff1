use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ops::Op;
use super::tensor::Tensor;

/// Handle to a node inside one [`Graph`]. Only meaningful for the graph that
/// issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<S> {
    pub(crate) value: Tensor<S>,
    pub(crate) grad: Option<Tensor<S>>,
    pub(crate) op: Op<S>,
    pub(crate) requires_grad: bool,
}

/// Append-only tape of tensor operations.
///
/// Parents always precede children, so reverse insertion order is a
/// topological order and `backward` visits nodes deterministically.
/// Gradients accumulate across `backward` calls until [`Graph::zero_grad`].
pub struct Graph<S> {
    pub(crate) nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor<S>) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: S) -> Result<Var> {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v`, `None` before any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Accumulated gradient of `v`, zeros if nothing reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<S> {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    /// Moves the accumulated gradient of `v` out, zeros if nothing reached it.
    pub fn take_grad(&mut self, v: Var) -> Tensor<S> {
        match self.nodes[v.0].grad.take() {
            Some(t) => t,
            None => Tensor::zeros(self.value(v).shape()),
        }
    }

    /// Moves the value of `v` out, leaving an empty placeholder. Meant for
    /// reclaiming bound parameters once the graph is no longer evaluated.
    pub fn take_value(&mut self, v: Var) -> Tensor<S> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(&[0]))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name().to_string(),
            });
        }
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse-mode pass from a one-element root. Adds `d root / d node` into
    /// the gradient buffer of every node that requires a gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if root_value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut pass: Vec<Option<Tensor<S>>> = (0..=root.0).map(|_| None).collect();
        pass[root.0] = Some(Tensor::ones(root_value.shape()));

        for i in (0..=root.0).rev() {
            let Some(g) = pass[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let contributions = self.nodes[i].op.backward(self, &self.nodes[i].value, &g)?;
            for (parent, delta) in contributions {
                match &mut pass[parent.0] {
                    Some(acc) => acc.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            }
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        for n in &self.nodes[..=root.0] {
            if let Some(g) = &n.grad {
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        op: format!("backward through {}", n.op.name()),
                    });
                }
            }
        }
        Ok(())
    }
}
