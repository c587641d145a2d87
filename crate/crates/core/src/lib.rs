//! Manifold-guided Lyapunov control, allocation-only core.
//!
//! Everything in this crate is pure computation over `alloc` containers:
//!
//! * [`grid`]: regular state-space grids, three-channel fields `(f1, f2, V)`
//!   and the max-abs normalization codec.
//! * [`dynamics`]: control-affine 2-D systems, the `C Σ tanh(ψ_i x_i)`
//!   controller, benchmark plants and parameter Jacobians.
//! * [`lyapunov`]: generation of stable vector field / Lyapunov function
//!   training pairs.
//! * [`tinynet`]: dense networks with exact reverse-mode gradients, Adam and
//!   sinusoidal time embeddings.
//! * [`diffusion`]: cosine noise schedule, forward corruption, Tweedie
//!   estimate, deterministic DDIM and denoiser training.
//! * [`guidance`]: the reverse loop that steers controller parameters along
//!   the denoising trajectory.
//! * [`verify`]: Dormand–Prince and Euler–Maruyama rollouts, convergence
//!   reports and grid Lyapunov checks.
//!
//! IO, threading and the command-line tool live in the `mglc` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod diffusion;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod guidance;
pub mod lyapunov;
pub mod rng;
pub mod tinynet;
pub mod verify;

pub use error::{Error, Result};
