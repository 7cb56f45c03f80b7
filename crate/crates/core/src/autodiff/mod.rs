//! Minimal dense-tensor reverse-mode differentiation with the optimizer the
//! cascade trains with.
//!
//! A [`Tape`] records one forward pass; [`Tape::backward`] walks it once and
//! returns gradients per recorded node. Parameters live outside the tape as
//! [`Tensor`]s and are bound in as borrowed leaves, so repeated forward
//! passes never copy weights.

mod optim;
mod tape;

pub use optim::{adam_step, clip_grad_norm, zero_grads, AdamState};
pub use tape::{Tape, TapeGrads, Var};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor with an optional gradient buffer.
#[derive(Debug, Clone)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    values: Vec<F>,
    grad: Option<Vec<F>>,
    requires_grad: bool,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![F::zero(); n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn from_values(shape: &[usize], values: Vec<F>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape.to_vec(),
                rhs: vec![values.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            values,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            shape: vec![],
            values: vec![v],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        if self.grad.is_none() {
            self.grad = Some(vec![F::zero(); self.values.len()]);
        }
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [F]> {
        self.grad.as_deref_mut()
    }

    pub fn accumulate_grad(&mut self, delta: &[F]) {
        debug_assert_eq!(delta.len(), self.values.len());
        let grad = self
            .grad
            .get_or_insert_with(|| vec![F::zero(); self.values.len()]);
        for (g, &d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(grad) = &mut self.grad {
            grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }
}
