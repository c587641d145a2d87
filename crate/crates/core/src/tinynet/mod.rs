//! Small dense networks with exact reverse-mode gradients.
//!
//! Only the fixed multilayer-perceptron shape used by the denoiser is
//! supported: a chain of dense layers, each followed by an elementwise
//! activation. Parameters live in one flat vector so optimizers and
//! serializers can treat them uniformly.

mod adam;
mod embed;
mod network;

pub use adam::Adam;
pub use embed::{time_embed, TimeEmbedding};
pub use network::{Activation, Gradients, LayerShape, Network, Tape};

use core::fmt::Debug;
use core::ops::AddAssign;
use num_traits::{Float, FromPrimitive};

/// Floating-point types the networks can be instantiated with.
pub trait Scalar: Float + FromPrimitive + AddAssign + Debug + Default + Send + Sync + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}
