use alloc::vec::Vec;
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;

use crate::{Error, Result};

/// Sinusoidal timestep features: `sin(t ω_k)` then `cos(t ω_k)` with
/// geometrically spaced `ω_k = max_period^{-k/(E/2)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeEmbedding {
    dim: usize,
    max_period: f64,
}

impl TimeEmbedding {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 || !dim.is_multiple_of(2) {
            return Err(Error::Config("time embedding dimension must be even and at least 2"));
        }
        Ok(Self { dim, max_period: 10_000.0 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        let half = self.dim / 2;
        let log_period = self.max_period.ln();
        (0..half).map(move |k| (-log_period * k as f64 / half as f64).exp())
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let sin = self.frequencies().map(|w| (t * w).sin());
        let cos = self.frequencies().map(|w| (t * w).cos());
        sin.chain(cos).collect()
    }

    /// Writes the embedding into `out` converted to the network's scalar.
    pub fn embed_into<T: super::Scalar>(&self, t: f64, out: &mut [T]) {
        for (o, v) in out.iter_mut().zip(self.embed(t)) {
            *o = T::from_f64(v).unwrap();
        }
    }
}

pub fn time_embed(t: usize, steps: usize, dim: usize) -> Result<Vec<f64>> {
    if t > steps {
        return Err(Error::Config("timestep exceeds the schedule length"));
    }
    Ok(TimeEmbedding::new(dim)?.embed(t as f64))
}
