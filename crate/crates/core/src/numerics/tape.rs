use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use super::{NumericsError, Real, Tensor};

/// What a backward closure sees: the recorded input values, the forward
/// output, and the gradient flowing into that output.
pub struct BackwardArgs<'a, T: Real> {
    pub inputs: &'a [Rc<Tensor<T>>],
    /// Whether each input wants a gradient; ops may skip work for `false`.
    pub needs_grad: &'a [bool],
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
}

/// Vector-Jacobian product of one recorded op. Returns one entry per input;
/// `None` means "no contribution".
pub type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Real> {
    op: &'static str,
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    is_leaf: bool,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Define-by-run recording of tensor operations for reverse-mode
/// differentiation. Build a fresh tape per step and drop it afterwards.
pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> core::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: "leaf",
            value: Rc::new(value),
            requires_grad,
            is_leaf: true,
            inputs: Vec::new(),
            backward: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// Records the result of an op. Fails if `output` holds a non-finite
    /// value; the backward closure is dropped when no input needs a gradient.
    pub fn record(
        &self,
        op: &'static str,
        inputs: &[Var<'_, T>],
        output: Tensor<T>,
        backward: impl Fn(&BackwardArgs<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Result<Var<'_, T>, NumericsError> {
        if !output.all_finite() {
            return Err(NumericsError::NonFinite { op });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|v| {
            debug_assert!(core::ptr::eq(v.tape, self), "var from another tape");
            nodes[v.id].requires_grad
        });
        nodes.push(Node {
            op,
            value: Rc::new(output),
            requires_grad,
            is_leaf: false,
            inputs: inputs.iter().map(|v| v.id).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    pub fn value(&self, var: Var<'_, T>) -> Rc<Tensor<T>> {
        self.nodes.borrow()[var.id].value.clone()
    }

    /// Reverse sweep from a scalar root. Every leaf recorded with
    /// `requires_grad` gets a gradient of its own shape (zeros when the root
    /// does not depend on it).
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>, NumericsError> {
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.id].value.shape().to_vec();
        if nodes[root.id].value.len() != 1 {
            return Err(NumericsError::NonScalarRoot(root_shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::ones(&root_shape));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<Rc<Tensor<T>>> =
                node.inputs.iter().map(|&i| nodes[i].value.clone()).collect();
            let needs_grad: Vec<bool> =
                node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let contributions = backward(&BackwardArgs {
                inputs: &inputs,
                needs_grad: &needs_grad,
                output: &node.value,
                grad: &grad,
            });
            assert_eq!(
                contributions.len(),
                node.inputs.len(),
                "op {} returned wrong number of input gradients",
                node.op
            );
            for (&input, contribution) in node.inputs.iter().zip(contributions) {
                if input >= id {
                    return Err(NumericsError::Cycle { node: id, input });
                }
                let Some(g) = contribution else { continue };
                if !nodes[input].requires_grad {
                    continue;
                }
                if g.shape() != nodes[input].value.shape() {
                    return Err(NumericsError::ShapeMismatch {
                        op: node.op,
                        lhs: g.shape().to_vec(),
                        rhs: nodes[input].value.shape().to_vec(),
                    });
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }

        let mut leaf_grads = vec![None; nodes.len()];
        for (id, node) in nodes.iter().enumerate() {
            if node.is_leaf && node.requires_grad {
                leaf_grads[id] = Some(
                    grads[id]
                        .take()
                        .unwrap_or_else(|| Tensor::zeros(node.value.shape())),
                );
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

/// Gradients of the backward root with respect to each trainable leaf.
#[derive(Debug)]
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
}
