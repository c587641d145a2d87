//! Cosine-scheduled DDIM: forward corruption, Tweedie estimates, the
//! deterministic reverse step and denoiser training.

mod denoiser;
mod train;

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;

pub use denoiser::{Denoiser, DenoiserConfig, DenoiserNet};
pub use train::{
    denoising_loss, train_denoiser, BatchExecutor, Checkpoint, Serial, TrainConfig, TrainingMeta,
};

use crate::grid::GridField;
use crate::{Error, Result};

/// Lower/upper clamp applied to `ᾱ` wherever it divides.
pub const ALPHA_CLAMP: f64 = 1e-8;

/// Offset `s` of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ScheduleConfig {
    /// Diffusion length `T`.
    pub steps: usize,
    /// Number of DDIM reverse steps used at sampling time.
    pub sampling_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 200, sampling_steps: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        if config.steps < 2 {
            return Err(Error::Config("diffusion length must be at least 2"));
        }
        if config.sampling_steps == 0 || config.sampling_steps > config.steps {
            return Err(Error::Config("sampling steps must lie in 1..=T"));
        }
        let t_max = config.steps as f64;
        let s = COSINE_OFFSET;
        let base = ((s / (1.0 + s)) * FRAC_PI_2).cos().powi(2);
        let mut alpha_bar: Vec<f64> = (0..=config.steps)
            .map(|t| (((t as f64 / t_max + s) / (1.0 + s)) * FRAC_PI_2).cos().powi(2) / base)
            .collect();
        alpha_bar[0] = 1.0;
        alpha_bar[config.steps] = 0.0;
        Ok(Self { config, alpha_bar })
    }

    /// Cosine schedule of length `steps` with a single sampling step count of `steps`.
    pub fn cosine(steps: usize) -> Result<Self> {
        Self::new(ScheduleConfig { steps, sampling_steps: steps })
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn steps(&self) -> usize {
        self.config.steps
    }

    /// Unclamped `ᾱ_t`; exactly 1 at `t = 0` and 0 at `t = T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bar_clamped(&self, t: usize) -> f64 {
        self.alpha_bar[t].clamp(ALPHA_CLAMP, 1.0 - ALPHA_CLAMP)
    }

    /// Descending visit list `T = τ_K > … > τ_0 = 0` with `K = sampling_steps`;
    /// the reverse loop runs over consecutive pairs.
    pub fn ddim_timesteps(&self) -> Vec<usize> {
        ddim_timesteps(self.config.steps, self.config.sampling_steps)
    }
}

/// `count + 1` descending times from `steps` to 0, evenly strided. With
/// `count = 0` the list is just `[steps]` and no reverse step is taken.
pub fn ddim_timesteps(steps: usize, count: usize) -> Vec<usize> {
    if count == 0 {
        return alloc::vec![steps];
    }
    (0..=count).rev().map(|i| i * steps / count).collect()
}

fn check_same(a: &GridField, b: &GridField) -> Result<()> {
    if a.spec() != b.spec() {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

fn combine(a: &GridField, wa: f64, b: &GridField, wb: f64) -> Result<GridField> {
    check_same(a, b)?;
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| wa * x + wb * y).collect();
    GridField::from_vec(*a.spec(), data)
}

/// `x_t = √ᾱ_t x + √(1−ᾱ_t) ε` with the unclamped `ᾱ_t`.
pub fn forward_noise(x: &GridField, noise: &GridField, t: usize, schedule: &NoiseSchedule) -> Result<GridField> {
    let a = schedule.alpha_bar(t);
    combine(x, a.sqrt(), noise, (1.0 - a).sqrt())
}

/// `x_{0|t} = (x_t − √(1−ᾱ_t) ε̂) / √ᾱ_t` with clamped `ᾱ_t`.
pub fn tweedie(x_t: &GridField, noise: &GridField, t: usize, schedule: &NoiseSchedule) -> Result<GridField> {
    if schedule.alpha_bar(t) < ALPHA_CLAMP {
        log::warn!("ᾱ_{t} = {:e} is below the clamp; Tweedie estimate is amplified", schedule.alpha_bar(t));
    }
    let a = schedule.alpha_bar_clamped(t);
    let inv = 1.0 / a.sqrt();
    combine(x_t, inv, noise, -(1.0 - a).sqrt() * inv)
}

/// Deterministic DDIM update `x_{t'} = √ᾱ_{t'} x_{0|t} + √(1−ᾱ_{t'}) ε̂`.
/// Returns `(x_{t'}, x_{0|t})`.
pub fn ddim_step(
    x_t: &GridField,
    noise: &GridField,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<(GridField, GridField)> {
    if t_prev >= t {
        return Err(Error::Config("DDIM step must move to an earlier time"));
    }
    let x0 = tweedie(x_t, noise, t, schedule)?;
    let a = schedule.alpha_bar(t_prev);
    let next = combine(&x0, a.sqrt(), noise, (1.0 - a).sqrt())?;
    Ok((next, x0))
}
