use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;
use rand::Rng;

use super::Scalar;
use crate::{Error, Result};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Identity,
    Tanh,
    /// `z · σ(z)`.
    Silu,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Silu => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Silu),
            _ => None,
        }
    }

    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (T::one() + (-z).exp()),
        }
    }

    /// `da/dz` given the pre-activation `z` and activation `a`.
    #[inline]
    fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Tanh => T::one() - a * a,
            Activation::Silu => {
                let s = T::one() / (T::one() + (-z).exp());
                s * (T::one() + z * (T::one() - s))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerShape {
    /// Weights (`outputs × inputs`, row-major) followed by biases.
    pub fn num_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// A chain of dense layers `a_{l+1} = act_l(W_l a_l + b_l)`.
#[derive(Debug, Clone)]
pub struct Network<T> {
    layers: Vec<LayerShape>,
    params: Vec<T>,
    version: u64,
}

/// Intermediate values of one forward pass, consumed by
/// [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    version: u64,
    /// `inputs[l]` is the input of layer `l`; the last entry is the output.
    inputs: Vec<Vec<T>>,
    pre_activations: Vec<Vec<T>>,
}

impl<T> Tape<T> {
    pub fn output(&self) -> &[T] {
        self.inputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<T>,
    pub input: Vec<T>,
}

impl<T: Scalar> Network<T> {
    /// Zero-initialised network. `layers` lists `(width, activation)` pairs.
    pub fn new(input_dim: usize, layers: &[(usize, Activation)]) -> Result<Self> {
        if input_dim == 0 || layers.is_empty() || layers.iter().any(|(w, _)| *w == 0) {
            return Err(Error::Config("network layers must be non-empty with positive widths"));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut inputs = input_dim;
        for &(outputs, activation) in layers {
            shapes.push(LayerShape { inputs, outputs, activation });
            inputs = outputs;
        }
        let n = shapes.iter().map(LayerShape::num_params).sum();
        Ok(Self { layers: shapes, params: vec![T::zero(); n], version: fresh_version() })
    }

    /// Rebuilds a network from explicit shapes and a flat parameter vector.
    pub fn from_parts(layers: Vec<LayerShape>, params: Vec<T>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Config("consecutive layer widths do not chain"));
            }
        }
        let n: usize = layers.iter().map(LayerShape::num_params).sum();
        if params.len() != n {
            return Err(Error::Shape { expected: n, found: params.len() });
        }
        Ok(Self { layers, params, version: fresh_version() })
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init_fan_in<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut offset = 0;
        for layer in &self.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            let nw = layer.inputs * layer.outputs;
            for w in &mut self.params[offset..offset + nw] {
                *w = T::from_f64(rng.random_range(-bound..bound)).unwrap();
            }
            for b in &mut self.params[offset + nw..offset + layer.num_params()] {
                *b = T::zero();
            }
            offset += layer.num_params();
        }
        self.version = fresh_version();
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Mutable parameter access. Invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [T] {
        self.version = fresh_version();
        &mut self.params
    }

    /// `(weights, bias)` of layer `l`.
    pub fn layer_params(&self, l: usize) -> (&[T], &[T]) {
        let offset: usize = self.layers[..l].iter().map(LayerShape::num_params).sum();
        let shape = self.layers[l];
        let nw = shape.inputs * shape.outputs;
        (
            &self.params[offset..offset + nw],
            &self.params[offset + nw..offset + shape.num_params()],
        )
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), found: input.len() });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        let mut current = input.to_vec();
        let mut offset = 0;
        for layer in &self.layers {
            let (w, b) = self.split(offset, layer);
            let mut next = vec![T::zero(); layer.outputs];
            for (o, out) in next.iter_mut().enumerate() {
                let z = dot(&w[o * layer.inputs..(o + 1) * layer.inputs], &current) + b[o];
                *out = layer.activation.apply(z);
            }
            current = next;
            offset += layer.num_params();
        }
        Ok(current)
    }

    pub fn forward_tape(&self, input: &[T]) -> Result<Tape<T>> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        inputs.push(input.to_vec());
        let mut offset = 0;
        for layer in &self.layers {
            let (w, b) = self.split(offset, layer);
            let current = inputs.last().unwrap();
            let mut z = vec![T::zero(); layer.outputs];
            for (o, zo) in z.iter_mut().enumerate() {
                *zo = dot(&w[o * layer.inputs..(o + 1) * layer.inputs], current) + b[o];
            }
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre_activations.push(z);
            inputs.push(a);
            offset += layer.num_params();
        }
        Ok(Tape { version: self.version, inputs, pre_activations })
    }

    /// Gradients of `⟨cotangent, output⟩` with respect to parameters and input.
    pub fn backward(&self, tape: &Tape<T>, cotangent: &[T]) -> Result<Gradients<T>> {
        let mut params = vec![T::zero(); self.params.len()];
        let input = self.backward_into(tape, cotangent, &mut params)?;
        Ok(Gradients { params, input })
    }

    /// Like [`Network::backward`] but adds the parameter gradient into
    /// `param_grad`. Returns the input gradient.
    pub fn backward_into(&self, tape: &Tape<T>, cotangent: &[T], param_grad: &mut [T]) -> Result<Vec<T>> {
        if tape.version != self.version {
            return Err(Error::StaleTape);
        }
        if cotangent.len() != self.output_dim() {
            return Err(Error::Shape { expected: self.output_dim(), found: cotangent.len() });
        }
        if param_grad.len() != self.params.len() {
            return Err(Error::Shape { expected: self.params.len(), found: param_grad.len() });
        }
        let mut upstream = cotangent.to_vec();
        let mut end = self.params.len();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let start = end - layer.num_params();
            let nw = layer.inputs * layer.outputs;
            let w = &self.params[start..start + nw];
            let x = &tape.inputs[l];
            let z = &tape.pre_activations[l];
            let a = &tape.inputs[l + 1];
            let (gw, gb) = param_grad[start..end].split_at_mut(nw);
            let mut downstream = vec![T::zero(); layer.inputs];
            for o in 0..layer.outputs {
                let delta = upstream[o] * layer.activation.derivative(z[o], a[o]);
                if delta == T::zero() {
                    continue;
                }
                gb[o] += delta;
                let row = o * layer.inputs..(o + 1) * layer.inputs;
                axpy(delta, x, &mut gw[row.clone()]);
                axpy(delta, &w[row], &mut downstream);
            }
            upstream = downstream;
            end = start;
        }
        Ok(upstream)
    }

    fn split(&self, offset: usize, layer: &LayerShape) -> (&[T], &[T]) {
        let nw = layer.inputs * layer.outputs;
        (
            &self.params[offset..offset + nw],
            &self.params[offset + nw..offset + layer.num_params()],
        )
    }
}

/// Dot product with eight independent accumulators, summed in a fixed tree.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}
