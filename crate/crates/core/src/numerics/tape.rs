//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation applied to a [`Var`] appends a node holding its value and,
//! when any input participates in differentiation, a closure mapping the
//! output gradient to input gradients. Nodes are appended in evaluation
//! order, so walking the tape backwards visits them in reverse topological
//! order.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{Float, Tensor};

/// Maps the gradient of a node's output to gradients of its parents.
/// The mask says which parents need a gradient; entries for the others may be `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Float> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// A single training graph. Build it and backpropagate through it on one thread.
pub struct Tape<T: Float = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; nothing on it is differentiable.
    pub fn no_grad() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(Rc::new(value), self.grad_enabled, Vec::new(), None)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(Rc::new(value), false, Vec::new(), None)
    }

    fn push_node(
        &self,
        value: Rc<Tensor<T>>,
        requires_grad: bool,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            requires_grad,
            parents,
            backward,
        });
        Var { tape: self, id }
    }

    /// Records an operation. `make_backward` is only invoked when some parent
    /// requires a gradient.
    pub(crate) fn record<'t>(
        &'t self,
        value: Tensor<T>,
        parents: &[Var<'t, T>],
        make_backward: impl FnOnce() -> BackwardFn<T>,
    ) -> Var<'t, T> {
        self.record_shared(Rc::new(value), parents, make_backward)
    }

    /// [`Tape::record`] for a value the backward closure also holds.
    pub(crate) fn record_shared<'t>(
        &'t self,
        value: Rc<Tensor<T>>,
        parents: &[Var<'t, T>],
        make_backward: impl FnOnce() -> BackwardFn<T>,
    ) -> Var<'t, T> {
        let requires_grad = self.grad_enabled && parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            let ids = parents.iter().map(|p| p.id).collect();
            self.push_node(value, true, ids, Some(make_backward()))
        } else {
            self.push_node(value, false, Vec::new(), None)
        }
    }

    /// Backpropagates from `output`, seeding its gradient with ones.
    pub fn backward(&self, output: Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[output.id].requires_grad {
            return Gradients { grads };
        }
        grads[output.id] = Some(Tensor::ones(nodes[output.id].value.shape()));
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let backward = match &node.backward {
                Some(b) => b,
                None => continue,
            };
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let mask: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&g, &mask);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&pid, pg), &needed) in node.parents.iter().zip(parent_grads).zip(&mask) {
                let pg = match (pg, needed) {
                    (Some(pg), true) => pg,
                    _ => continue,
                };
                debug_assert_eq!(pg.shape(), nodes[pid].value.shape(), "gradient shape");
                match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

/// Gradients produced by [`Tape::backward`]; populated for leaves.
pub struct Gradients<T: Float> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of its shape when it received none.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(var.value().shape()),
        }
    }
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Float = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<'t, T: Float> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Same value, cut off from differentiation.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.push_node(self.value(), false, Vec::new(), None)
    }
}

impl<T: Float> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}
