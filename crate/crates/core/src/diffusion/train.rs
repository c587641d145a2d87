use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;
use rand::Rng;

use super::{DenoiserNet, NoiseSchedule};
use crate::grid::{GridSpec, NormCodec};
use crate::rng::{self, normal};
use crate::tinynet::Adam;
use crate::{Error, Result};

/// Runs per-sample gradient jobs and reduces them.
///
/// Implementations must give every job a zeroed buffer and sum buffers and
/// losses in index order, so that any implementation matches [`Serial`]
/// bit for bit.
pub trait BatchExecutor: Sync {
    fn accumulate(
        &self,
        count: usize,
        job: &(dyn Fn(usize, &mut [f32]) -> Result<f64> + Sync),
        grad: &mut [f32],
    ) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl BatchExecutor for Serial {
    fn accumulate(
        &self,
        count: usize,
        job: &(dyn Fn(usize, &mut [f32]) -> Result<f64> + Sync),
        grad: &mut [f32],
    ) -> Result<f64> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut scratch = vec![0.0f32; grad.len()];
        let mut loss = 0.0;
        for i in 0..count {
            scratch.iter_mut().for_each(|g| *g = 0.0);
            loss += job(i, &mut scratch)?;
            grad.iter_mut().zip(&scratch).for_each(|(g, s)| *g += *s);
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 32, learning_rate: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss_history: Vec<f64>,
}

impl TrainingMeta {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }
}

/// Everything needed to sample: weights, schedule, codec and grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub denoiser: DenoiserNet,
    pub schedule: NoiseSchedule,
    pub codec: NormCodec,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn new(denoiser: DenoiserNet, schedule: NoiseSchedule, codec: NormCodec) -> Self {
        Self { denoiser, schedule, codec, meta: TrainingMeta::default() }
    }

    pub fn grid(&self) -> &GridSpec {
        self.denoiser.spec()
    }
}

struct Sample {
    input: Vec<f32>,
    noise: Vec<f32>,
}

fn draw_sample<R: Rng + ?Sized>(
    denoiser: &DenoiserNet,
    data: &[Vec<f32>],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Sample {
    let x = &data[rng.random_range(0..data.len())];
    let t = rng.random_range(1..=schedule.steps());
    let a = schedule.alpha_bar(t);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let noise: Vec<f32> = (0..x.len()).map(|_| normal(rng) as f32).collect();
    let x_t: Vec<f32> = x.iter().zip(&noise).map(|(&x, &e)| (sa * x as f64 + sn * e as f64) as f32).collect();
    Sample { input: denoiser.input(&x_t, t), noise }
}

fn check_data(denoiser: &DenoiserNet, data: &[Vec<f32>]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let len = denoiser.spec().field_len();
    if let Some(bad) = data.iter().find(|d| d.len() != len) {
        return Err(Error::Shape { expected: len, found: bad.len() });
    }
    Ok(())
}

/// Minibatch training of `ε_θ` on encoded fields with Adam, continuing from
/// the checkpoint's step counter. Step `s` draws its batch from
/// `rng::stream(seed, s)`. An epoch is `⌈n / batch_size⌉` steps.
pub fn train_denoiser<E: BatchExecutor + ?Sized>(
    checkpoint: &mut Checkpoint,
    data: &[Vec<f32>],
    config: &TrainConfig,
    executor: &E,
) -> Result<()> {
    check_data(&checkpoint.denoiser, data)?;
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive"));
    }
    let steps_per_epoch = data.len().div_ceil(config.batch_size);
    let total = config.epochs * steps_per_epoch;
    let mut params = checkpoint.denoiser.network().params().to_vec();
    let mut grad = vec![0.0f32; params.len()];
    let mut adam = Adam::new(params.len(), config.learning_rate as f32);
    let batch = config.batch_size;
    let scale = 1.0 / (checkpoint.denoiser.spec().field_len() * batch) as f32;

    for _ in 0..total {
        let step = checkpoint.meta.steps;
        let mut rng = rng::stream(config.seed, step);
        let samples: Vec<Sample> =
            (0..batch).map(|_| draw_sample(&checkpoint.denoiser, data, &checkpoint.schedule, &mut rng)).collect();
        let net = checkpoint.denoiser.network();
        let job = |i: usize, g: &mut [f32]| -> Result<f64> {
            let s = &samples[i];
            let tape = net.forward_tape(&s.input)?;
            let mut loss = 0.0f64;
            let cot: Vec<f32> = tape
                .output()
                .iter()
                .zip(&s.noise)
                .map(|(o, e)| {
                    let d = o - e;
                    loss += (d as f64) * (d as f64);
                    2.0 * d * scale
                })
                .collect();
            net.backward_into(&tape, &cot, g)?;
            Ok(loss * scale as f64)
        };
        let loss = executor.accumulate(batch, &job, &mut grad)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step: step as usize });
        }
        adam.step(&mut params, &grad)?;
        checkpoint.denoiser.network_mut().params_mut().copy_from_slice(&params);
        checkpoint.meta.loss_history.push(loss);
        checkpoint.meta.steps += 1;
        if step.is_multiple_of(100) {
            log::debug!("step {step}: loss {loss:.5}");
        }
    }
    checkpoint.meta.seed = config.seed;
    checkpoint.meta.epochs += config.epochs;
    checkpoint.meta.batch_size = batch;
    checkpoint.meta.learning_rate = config.learning_rate;
    Ok(())
}

/// Mean squared noise-prediction error with `draws` noisings per record,
/// drawn from fixed streams so repeated calls compare like with like.
pub fn denoising_loss(
    denoiser: &DenoiserNet,
    data: &[Vec<f32>],
    schedule: &NoiseSchedule,
    seed: u64,
    draws: usize,
) -> Result<f64> {
    check_data(denoiser, data)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (r, x) in data.iter().enumerate() {
        let mut rng = rng::stream(seed, r as u64);
        let single = [x.clone()];
        for _ in 0..draws {
            let s = draw_sample(denoiser, &single, schedule, &mut rng);
            let out = denoiser.network().forward(&s.input)?;
            total += out.iter().zip(&s.noise).map(|(o, e)| ((o - e) as f64).powi(2)).sum::<f64>();
            count += out.len();
        }
    }
    Ok(total / count.max(1) as f64)
}
