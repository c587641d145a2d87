use alloc::vec;
use alloc::vec::Vec;

use super::Scalar;
use crate::{Error, Result};

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
    beta1_pow: T,
    beta2_pow: T,
}

impl<T: Scalar> Adam<T> {
    pub fn new(num_params: usize, learning_rate: T) -> Self {
        Self {
            learning_rate,
            beta1: T::from_f64(0.9).unwrap(),
            beta2: T::from_f64(0.999).unwrap(),
            epsilon: T::from_f64(1e-8).unwrap(),
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
            step: 0,
            beta1_pow: T::one(),
            beta2_pow: T::one(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Shape { expected: self.m.len(), found: params.len() });
        }
        if grads.len() != self.m.len() {
            return Err(Error::Shape { expected: self.m.len(), found: grads.len() });
        }
        self.step += 1;
        self.beta1_pow = self.beta1_pow * self.beta1;
        self.beta2_pow = self.beta2_pow * self.beta2;
        let bc1 = T::one() - self.beta1_pow;
        let bc2 = T::one() - self.beta2_pow;
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
