//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A `Tensor` is a shared handle to a node in an implicit computation graph.
//! Forward ops record a `GradFn` on their output only when some input
//! participates in gradient computation; `backward` walks the recorded graph
//! once, in reverse topological order, accumulating gradients additively into
//! each node. Graphs are rebuilt every iteration and dropped with the loss
//! handle. Single-threaded by design: a recorded graph must stay on one
//! thread, while plain value tensors are safe to share read-only.

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::ops::GradFn;

pub struct Tensor {
    pub(crate) node: Rc<RefCell<Node>>,
}

impl Clone for Tensor {
    /// Shallow clone: both handles refer to the same graph node.
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
    pub grad_fn: Option<GradFn>,
}

impl Tensor {
    /// A constant tensor. Fails unless `product(shape) == data.len()`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("dimension sizes must be positive"));
        }
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), data, false, None))
    }

    /// A trainable leaf: participates in gradient computation.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::new(shape, data)?;
        t.node.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::from_parts(vec![], vec![value], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; numel], false, None)
    }

    pub(crate) fn from_parts(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        grad_fn: Option<GradFn>,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite tensor entries"
        );
        Tensor {
            node: Rc::new(RefCell::new(Node {
                shape,
                data,
                grad: None,
                requires_grad,
                grad_fn,
            })),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.node.borrow().data.len()
    }

    /// Copy of the values, row-major.
    pub fn data(&self) -> Vec<f64> {
        self.node.borrow().data.clone()
    }

    /// Zero-copy read access to the values.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.node.borrow().data)
    }

    /// The single value of a scalar tensor. Panics on non-scalars.
    pub fn item(&self) -> f64 {
        let node = self.node.borrow();
        assert_eq!(node.data.len(), 1, "item() on non-scalar tensor");
        node.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.borrow().requires_grad
    }

    /// True when this tensor participates in gradient computation, either as
    /// a trainable leaf or as the output of ops over one.
    pub(crate) fn needs_grad(&self) -> bool {
        let node = self.node.borrow();
        node.requires_grad || node.grad_fn.is_some()
    }

    /// Accumulated gradient, if any backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.node.borrow_mut().grad = None;
    }

    /// Replace the values in place, preserving the shape. Reserved for the
    /// optimizer and EMA updates; everything else treats tensors as
    /// immutable after construction.
    pub(crate) fn set_data(&self, new: &[f64]) {
        let mut node = self.node.borrow_mut();
        assert_eq!(node.data.len(), new.len(), "set_data length mismatch");
        node.data.copy_from_slice(new);
    }

    /// Value-identical tensor that blocks gradient flow.
    pub fn detach(&self) -> Tensor {
        let node = self.node.borrow();
        Self::from_parts(node.shape.clone(), node.data.clone(), false, None)
    }

    /// Stable identity of the underlying node, for pointer-equality checks.
    pub fn node_id(&self) -> usize {
        Rc::as_ptr(&self.node) as usize
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[f64]) {
        let mut node = self.node.borrow_mut();
        let len = node.data.len();
        debug_assert_eq!(contribution.len(), len);
        let grad = node.grad.get_or_insert_with(|| vec![0.0; len]);
        for (g, c) in grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    /// Reverse pass from a scalar loss. Visits each recorded node exactly
    /// once, in reverse topological order, and accumulates `d loss / d node`
    /// into every node that needs a gradient. Detached tensors and constants
    /// are never visited, so they contribute zero upstream.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }

        // Iterative post-order DFS over grad_fn parents.
        let order = self.topo_order();
        self.accumulate_grad(&[1.0]);
        for tensor in order.iter().rev() {
            let (grad, grad_fn) = {
                let node = tensor.node.borrow();
                match (&node.grad, &node.grad_fn) {
                    (Some(g), Some(f)) => (g.clone(), f.clone_for_backward()),
                    _ => continue,
                }
            };
            grad_fn.backward(&grad);
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor> {
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        // Stack entries: (tensor, children_pushed).
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((tensor, expanded)) = stack.pop() {
            let id = tensor.node_id();
            if expanded {
                order.push(tensor);
                continue;
            }
            if !visited.insert(id) {
                continue;
            }
            let parents = {
                let node = tensor.node.borrow();
                node.grad_fn
                    .as_ref()
                    .map(|f| f.parents())
                    .unwrap_or_default()
            };
            stack.push((tensor, true));
            for p in parents {
                if p.needs_grad() && !visited.contains(&p.node_id()) {
                    stack.push((p, false));
                }
            }
        }
        order
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let node = self.node.borrow();
        f.debug_struct("Tensor")
            .field("shape", &node.shape)
            .field("requires_grad", &node.requires_grad)
            .field("data", &node.data)
            .finish()
    }
}
