//! End-to-end stages: dataset, training, synthesis with restart selection,
//! verification.

use std::time::Instant;

use mglc_core::diffusion::{
    denoising_loss, train_denoiser, Checkpoint, DenoiserConfig, DenoiserNet, NoiseSchedule, ScheduleConfig,
    TrainConfig,
};
use mglc_core::dynamics::{Benchmark, ControllerParams};
use mglc_core::grid::NormCodec;
use mglc_core::guidance::{select_best, synthesize, Score, SynthesisConfig, SynthesisTrace};
use mglc_core::lyapunov::Dataset;
use mglc_core::rng;
use mglc_core::verify::{ConvergenceReport, RolloutConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::parallel::{self, RayonExecutor};
use crate::{Error, Result};

/// Stream index reserved for weight initialisation; training steps use
/// indices counting up from zero.
const INIT_STREAM: u64 = u64::MAX;

/// Fields encoded with `codec` and rounded to the network's precision.
pub fn encode_records(ds: &Dataset, codec: &NormCodec) -> Vec<Vec<f32>> {
    ds.records.iter().map(|r| codec.encode(&r.field).as_slice().iter().map(|&v| v as f32).collect()).collect()
}

/// Fresh checkpoint on the dataset's grid and codec.
pub fn init_checkpoint(
    ds: &Dataset,
    schedule: ScheduleConfig,
    denoiser: DenoiserConfig,
    seed: u64,
) -> Result<Checkpoint> {
    let net = DenoiserNet::new(ds.config.grid, denoiser, &mut rng::stream(seed, INIT_STREAM))?;
    Ok(Checkpoint::new(net, NoiseSchedule::new(schedule)?, ds.codec))
}

/// Trains on `ds`, which must share the checkpoint's grid.
pub fn train(ck: &mut Checkpoint, ds: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if ds.config.grid != *ck.grid() {
        return Err(Error::Config("dataset grid differs from the checkpoint grid".into()));
    }
    let data = encode_records(ds, &ck.codec);
    train_denoiser(ck, &data, cfg, &RayonExecutor)?;
    Ok(())
}

/// Noise-prediction error over the dataset with fixed draws, for comparing
/// checkpoints.
pub fn evaluation_loss(ck: &Checkpoint, ds: &Dataset) -> Result<f64> {
    Ok(denoising_loss(&ck.denoiser, &encode_records(ds, &ck.codec), &ck.schedule, 0x5eed, 4)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub psi_init: [f64; 2],
    pub psi: [f64; 2],
    pub fraction: f64,
    pub margin: f64,
}

pub struct SynthesisOutcome {
    /// Restart index of the kept candidate.
    pub best: usize,
    pub restarts: Vec<RestartSummary>,
    pub trace: SynthesisTrace,
    pub report: ConvergenceReport,
    pub seconds: f64,
}

impl SynthesisOutcome {
    pub fn controller(&self) -> ControllerParams {
        self.trace.controller
    }
}

/// Verifies `p` on `system` with the configured rollouts.
pub fn verify(system: Benchmark, p: &ControllerParams, cfg: &RolloutConfig) -> Result<ConvergenceReport> {
    parallel::rollout_batch(|r| system.instantiate(r), p, cfg)
}

/// Runs `cfg.restarts` guided syntheses in parallel, verifies each and keeps
/// the best by convergence fraction, then margin.
pub fn synthesize_best(
    system: Benchmark,
    ck: &Checkpoint,
    cfg: &SynthesisConfig,
    verify_cfg: &RolloutConfig,
) -> Result<SynthesisOutcome> {
    if cfg.restarts == 0 {
        return Err(Error::Config("at least one restart is required".into()));
    }
    let start = Instant::now();
    // the noisy plant starts from its nominal parameters until resampled
    let plant = system.instantiate(rng::stream(cfg.seed, 0));
    let attempts: Vec<Result<(SynthesisTrace, ConvergenceReport)>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|k| {
            let trace = synthesize(&plant, ck, cfg, k)?;
            let report = verify(system, &trace.controller, verify_cfg)?;
            Ok((trace, report))
        })
        .collect();
    let mut runs = Vec::with_capacity(attempts.len());
    let mut first_error = None;
    for (k, a) in attempts.into_iter().enumerate() {
        match a {
            Ok(run) => runs.push(run),
            Err(e) => {
                log::warn!("restart {k} failed: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    if runs.is_empty() {
        return Err(first_error.expect("restarts is positive"));
    }
    let scores: Vec<Score> = runs.iter().map(|(_, r)| Score { fraction: r.fraction, margin: r.margin() }).collect();
    let best = select_best(&scores).expect("at least one restart succeeded");
    let restarts = runs
        .iter()
        .zip(&scores)
        .map(|((t, _), s)| RestartSummary {
            restart: t.restart,
            psi_init: t.psi_init,
            psi: t.controller.psi,
            fraction: s.fraction,
            margin: s.margin,
        })
        .collect();
    let (trace, report) = runs.into_iter().nth(best).expect("best is in range");
    Ok(SynthesisOutcome { best: trace.restart, restarts, trace, report, seconds: start.elapsed().as_secs_f64() })
}
