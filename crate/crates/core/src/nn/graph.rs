//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s together with a
//! backward closure. [`Graph::backward`] walks the tape in reverse and returns
//! the accumulated gradients. Graphs are cheap, single-use and not shared
//! between threads; the model weights they read are never mutated.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::Tensor;
use crate::scalar::Scalar;

/// Backward rule: receives the output gradient and which inputs need one.
pub type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    inputs: Vec<usize>,
    needs_grad: bool,
    backward: Option<BackwardFn<T>>,
}

pub struct Graph<T: Scalar = f64> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Graph`].
pub struct Var<'g, T: Scalar = f64> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value().shape())
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn needs_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].needs_grad
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.slots.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.slots.get_mut(var.id).and_then(Option::take)
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn leaf(&self, value: Tensor<T>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            inputs: Vec::new(),
            needs_grad,
            backward: None,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A constant: no gradient is propagated into it.
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// A differentiable leaf (weights, or inputs under gradient check).
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Records an operation.
    ///
    /// This is also the extension hook for user-defined operations: `backward`
    /// must return one entry per input, `None` where the input needs no
    /// gradient.
    pub fn op<'g>(
        &'g self,
        inputs: &[Var<'g, T>],
        value: Tensor<T>,
        backward: impl FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<'g, T> {
        let mut nodes = self.nodes.borrow_mut();
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let needs_grad = ids.iter().any(|&i| nodes[i].needs_grad);
        nodes.push(Node {
            value: Rc::new(value),
            inputs: ids,
            needs_grad,
            backward: needs_grad.then(|| Box::new(backward) as BackwardFn<T>),
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Back-propagates from a single-element `loss`.
    ///
    /// Backward closures are consumed, so each graph supports one pass.
    pub fn backward(&self, loss: Var<'_, T>) -> Gradients<T> {
        let mut nodes = self.nodes.borrow_mut();
        assert_eq!(nodes[loss.id].value.len(), 1, "backward needs a scalar loss");
        let mut slots: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        slots[loss.id] = Some(Tensor::filled(nodes[loss.id].value.shape(), T::one()));
        for id in (0..=loss.id).rev() {
            let Some(backward) = nodes[id].backward.take() else {
                continue;
            };
            let Some(grad) = slots[id].as_ref() else {
                continue;
            };
            let inputs = nodes[id].inputs.clone();
            let wants: Vec<bool> = inputs.iter().map(|&i| nodes[i].needs_grad).collect();
            let grads = backward(grad, &wants);
            debug_assert_eq!(grads.len(), inputs.len());
            // Intermediate gradients are no longer needed once propagated;
            // leaves keep theirs for the caller.
            if !nodes[id].inputs.is_empty() {
                slots[id] = None;
            }
            for (input, g) in inputs.into_iter().zip(grads) {
                let Some(g) = g else { continue };
                if !nodes[input].needs_grad {
                    continue;
                }
                match &mut slots[input] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Gradients { slots }
    }
}
