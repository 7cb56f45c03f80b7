//! Adam with bias correction and global-norm gradient clipping.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-parameter first/second moment estimates and the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    step: u64,
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
}

impl<F: Scalar> AdamState<F> {
    /// Standard (0.9, 0.999, 1e-8) moments with the given learning rate.
    pub fn new(params: &[Tensor<F>], lr: f64) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
            step: 0,
            lr: crate::scalar::real(lr),
            beta1: crate::scalar::real(0.9),
            beta2: crate::scalar::real(0.999),
            epsilon: crate::scalar::real(1e-8),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Scale every gradient by `max_norm / g` when the global L2 norm `g`
/// exceeds `max_norm`; returns the applied scale.
pub fn clip_grad_norm<F: Scalar>(params: &mut [Tensor<F>], max_norm: F) -> F {
    let mut sq = F::zero();
    for p in params.iter() {
        if let Some(grad) = p.grad() {
            sq += grad.iter().map(|&g| g * g).sum::<F>();
        }
    }
    let norm = sq.sqrt();
    if norm <= max_norm || norm == F::zero() {
        return F::one();
    }
    let scale = max_norm / norm;
    for p in params.iter_mut() {
        if let Some(grad) = p.grad_mut() {
            grad.iter_mut().for_each(|g| *g = *g * scale);
        }
    }
    scale
}

/// One bias-corrected Adam update over every parameter with a gradient.
pub fn adam_step<F: Scalar>(params: &mut [Tensor<F>], state: &mut AdamState<F>) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = F::one() - state.beta1.powi(t);
    let bc2 = F::one() - state.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        if !p.requires_grad() {
            continue;
        }
        let Some(grad) = p.grad() else { continue };
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Graph("non-finite gradient in adam_step".into()));
        }
        let grad = grad.to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let values = p.values_mut();
        for j in 0..values.len() {
            m[j] = state.beta1 * m[j] + (F::one() - state.beta1) * grad[j];
            v[j] = state.beta2 * v[j] + (F::one() - state.beta2) * grad[j] * grad[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            values[j] = values[j] - state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Reset every gradient buffer to zero.
pub fn zero_grads<F: Scalar>(params: &mut [Tensor<F>]) {
    for p in params.iter_mut() {
        p.zero_grad();
    }
}
