use alloc::vec::Vec;
use rand::Rng;

use crate::grid::{GridField, GridSpec};
use crate::tinynet::{Activation, Network, TimeEmbedding};
use crate::{Error, Result};

/// Noise predictor `ε_θ(x_t, t)` on encoded fields.
pub trait Denoiser {
    fn predict_noise(&self, x_t: &GridField, t: usize) -> Result<GridField>;
}

impl<F> Denoiser for F
where
    F: Fn(&GridField, usize) -> Result<GridField>,
{
    fn predict_noise(&self, x_t: &GridField, t: usize) -> Result<GridField> {
        self(x_t, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DenoiserConfig {
    /// Width of each SiLU hidden layer.
    pub hidden: usize,
    /// Number of hidden layers.
    pub depth: usize,
    /// Sinusoidal time-embedding size.
    pub embedding: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { hidden: 512, depth: 3, embedding: 32 }
    }
}

impl DenoiserConfig {
    pub fn layer_plan(&self, spec: &GridSpec) -> Vec<(usize, Activation)> {
        let mut plan: Vec<_> = (0..self.depth).map(|_| (self.hidden, Activation::Silu)).collect();
        plan.push((spec.field_len(), Activation::Identity));
        plan
    }

    pub fn input_dim(&self, spec: &GridSpec) -> usize {
        spec.field_len() + self.embedding
    }
}

/// MLP over the flattened field concatenated with a time embedding.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    net: Network<f32>,
    embedding: TimeEmbedding,
    spec: GridSpec,
    config: DenoiserConfig,
}

impl PartialEq for DenoiserNet {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.config == other.config
            && self.net.layers() == other.net.layers()
            && self.net.params() == other.net.params()
    }
}

impl DenoiserNet {
    pub fn new<R: Rng + ?Sized>(spec: GridSpec, config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        if config.hidden == 0 {
            return Err(Error::Config("denoiser width must be positive"));
        }
        let mut net = Network::new(config.input_dim(&spec), &config.layer_plan(&spec))?;
        net.init_fan_in(rng);
        Ok(Self { net, embedding: TimeEmbedding::new(config.embedding)?, spec, config })
    }

    /// Wraps an existing network, checking it has the expected layout.
    pub fn from_network(spec: GridSpec, config: DenoiserConfig, net: Network<f32>) -> Result<Self> {
        let expected = Network::<f32>::new(config.input_dim(&spec), &config.layer_plan(&spec))?;
        if expected.layers() != net.layers() {
            return Err(Error::Config("network layout does not match the denoiser configuration"));
        }
        Ok(Self { net, embedding: TimeEmbedding::new(config.embedding)?, spec, config })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn config(&self) -> DenoiserConfig {
        self.config
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<f32> {
        &mut self.net
    }

    /// Network input for an encoded field given as `f32`.
    pub fn input(&self, x_t: &[f32], t: usize) -> Vec<f32> {
        let mut input = Vec::with_capacity(self.net.input_dim());
        input.extend_from_slice(x_t);
        input.resize(self.net.input_dim(), 0.0);
        self.embedding.embed_into(t as f64, &mut input[x_t.len()..]);
        input
    }

    pub fn predict_flat(&self, x_t: &[f32], t: usize) -> Result<Vec<f32>> {
        if x_t.len() != self.spec.field_len() {
            return Err(Error::Shape { expected: self.spec.field_len(), found: x_t.len() });
        }
        self.net.forward(&self.input(x_t, t))
    }
}

impl Denoiser for DenoiserNet {
    fn predict_noise(&self, x_t: &GridField, t: usize) -> Result<GridField> {
        if x_t.spec() != &self.spec {
            return Err(Error::GridMismatch);
        }
        let x: Vec<f32> = x_t.as_slice().iter().map(|&v| v as f32).collect();
        let out = self.predict_flat(&x, t)?;
        GridField::from_vec(self.spec, out.into_iter().map(f64::from).collect())
    }
}
