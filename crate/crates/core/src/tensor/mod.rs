//! Dense `f64` tensors and a tape-based reverse-mode autodiff engine.
//!
//! Every operation is a method on [`Tape`] that appends a node and returns a
//! [`Var`] handle. Nodes only ever reference earlier nodes, so replaying the
//! tape from the end to the start is a valid reverse topological order and
//! visits every recorded operation once.
//!
//! ```
//! use csrrm::tensor::{DiffTensor, Tape};
//!
//! let mut tape = Tape::new();
//! let a = tape.variable(DiffTensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
//! let b = tape.constant(DiffTensor::new(&[2, 1], vec![3.0, 4.0]).unwrap());
//! let y = tape.matmul(a, b).unwrap();
//! let loss = tape.sum(y);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.value(y), &[11.0]);
//! assert_eq!(tape.grad(a), &[3.0, 4.0]);
//! ```

mod conv;
mod elementwise;
mod linalg;
mod loss;
mod pool;
mod structural;
mod tape;

pub use conv::conv2d_output_dim;
pub use loss::softmax_slice;
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// A dense row-major array with a gradient buffer of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffTensor {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl DiffTensor {
    pub fn new(shape: &[usize], value: Vec<f64>) -> Result<Self> {
        let n = numel(shape);
        if n != value.len() {
            return Err(Error::shape(
                "DiffTensor::new",
                format!("{n} values for shape {shape:?}"),
                format!("{} values", value.len()),
            ));
        }
        Ok(Self::from_parts(shape.to_vec(), value, false))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![0.0; numel(shape)], false)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::from_parts(shape.to_vec(), vec![v; numel(shape)], false)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(Vec::new(), vec![v], false)
    }

    pub(crate) fn from_parts(shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Self {
        debug_assert_eq!(numel(&shape), value.len());
        let grad = vec![0.0; value.len()];
        Self {
            shape,
            value,
            grad,
            requires_grad,
        }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut [f64] {
        &mut self.value
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn into_value(self) -> Vec<f64> {
        self.value
    }

    pub(crate) fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }
}
