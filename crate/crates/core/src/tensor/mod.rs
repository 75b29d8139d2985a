//! Dense f64 tensors with a dynamic reverse-mode tape.
//!
//! Every tensor produced by an operation on at least one gradient-tracking
//! input records its inputs and a backward rule. [`Tensor::backward`] walks
//! the recorded graph once in reverse topological order and accumulates
//! gradients into the leaves. Values are checked for finiteness after every
//! operation.

mod check;
mod conv;
mod io;
mod norm;
mod ops;

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

pub use check::fd_check;
pub use io::{read_tensor, write_tensor, TENSOR_MAGIC};

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid argument to {op}: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("malformed tensor data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape { op, detail: detail.into() }
}

pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Invalid { op, detail: detail.into() }
}

thread_local! {
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` without recording any operations on the tape.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Reset(bool);
    impl Drop for Reset {
        fn drop(&mut self) {
            NO_GRAD.with(|c| c.set(self.0));
        }
    }
    let _reset = Reset(NO_GRAD.with(|c| c.replace(true)));
    f()
}

fn recording() -> bool {
    !NO_GRAD.with(|c| c.get())
}

/// Inputs handed to a backward rule.
pub(crate) struct BackwardCtx<'a> {
    pub inputs: &'a [Tensor],
    pub out: &'a [f64],
    pub grad: &'a [f64],
}

/// Returns one optional gradient buffer per input, in input order.
pub(crate) type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    op: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// Reference-counted immutable tensor. Cloning is cheap and shares storage.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.0.shape);
        if let Some(node) = &self.0.node {
            d.field("op", &node.op);
        }
        if self.numel() <= 16 {
            d.field("data", &self.0.data);
        }
        d.field("requires_grad", &self.0.requires_grad).finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(invalid("tensor", format!("zero extent in shape {shape:?}")));
        }
        if numel_of(&shape) != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel_of(&shape), data.len()),
            ));
        }
        check_finite("tensor", &data)?;
        Ok(Tensor(Rc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node: None,
        })))
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, false)
    }

    /// Trainable leaf tensor.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::leaf(shape.to_vec(), vec![value; numel_of(shape)], false)
            .expect("full: shape must be non-empty with positive extents and value finite")
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::from_vec(&[1], vec![value])
    }

    /// Builds the output of an operation, recording it on the tape when any
    /// input tracks gradients.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Result<Self> {
        debug_assert_eq!(numel_of(&shape), data.len(), "{op}");
        check_finite(op, &data)?;
        let track = recording() && inputs.iter().any(|t| t.0.requires_grad);
        let node = track.then(|| Node { op, inputs, backward });
        Ok(Tensor(Rc::new(Inner {
            shape,
            data,
            requires_grad: track,
            grad: RefCell::new(None),
            node,
        })))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Copy of this tensor's values as an untracked constant.
    pub fn detach(&self) -> Tensor {
        Tensor(Rc::new(Inner {
            shape: self.0.shape.clone(),
            data: self.0.data.clone(),
            requires_grad: false,
            grad: RefCell::new(None),
            node: None,
        }))
    }

    /// New trainable leaf holding `data` with this tensor's shape.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Tensor> {
        Self::leaf(self.0.shape.clone(), data, self.0.requires_grad)
    }

    /// Accumulated gradient of a trainable leaf. Leaves that did not take
    /// part in the last backward pass report zeros; untracked tensors report
    /// `None`.
    pub fn grad(&self) -> Option<Vec<f64>> {
        if !self.0.requires_grad || self.0.node.is_some() {
            return None;
        }
        let g = self.0.grad.borrow();
        Some(g.clone().unwrap_or_else(|| vec![0.0; self.numel()]))
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    fn key(&self) -> *const Inner {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a scalar loss. Gradients add into leaf
    /// buffers, so call [`Tensor::zero_grad`] between independent passes.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalar(self.shape().to_vec()));
        }
        if !self.0.requires_grad {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Inner, Vec<f64>> = HashMap::new();
        pending.insert(self.key(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.key()) else {
                continue;
            };
            match &t.0.node {
                None => {
                    let mut slot = t.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(node) => {
                    let grads = (node.backward)(&BackwardCtx {
                        inputs: &node.inputs,
                        out: &t.0.data,
                        grad: &g,
                    });
                    debug_assert_eq!(grads.len(), node.inputs.len(), "{}", node.op);
                    for (input, gi) in node.inputs.iter().zip(grads) {
                        let Some(gi) = gi else { continue };
                        if !input.0.requires_grad {
                            continue;
                        }
                        debug_assert_eq!(gi.len(), input.numel(), "{}", node.op);
                        check_finite(node.op, &gi)?;
                        match pending.get_mut(&input.key()) {
                            Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(input.key(), gi);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Tracked tensors reachable from `self`, inputs before consumers.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashMap<*const Inner, ()> = HashMap::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if seen.insert(t.key(), ()).is_some() {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for input in &node.inputs {
                    if input.0.requires_grad && !seen.contains_key(&input.key()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Number of distinct recorded operations reachable from this tensor.
    pub fn graph_len(&self) -> usize {
        self.topo_order().iter().filter(|t| !t.is_leaf()).count()
    }
}
