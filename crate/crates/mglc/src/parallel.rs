//! Rayon drivers for the embarrassingly parallel stages.
//!
//! Each unit of work owns its random stream and results are reduced in
//! index order, so outputs do not depend on the number of threads.

use mglc_core::diffusion::BatchExecutor;
use mglc_core::dynamics::{ControlSystem, ControllerParams};
use mglc_core::lyapunov::{generate_record, Dataset, DatasetConfig};
use mglc_core::rng::StreamRng;
use mglc_core::verify::{rollout_index, ConvergenceReport, RolloutConfig};
use rayon::prelude::*;

use crate::Result;

/// Runs `f` inside a pool capped at `threads` workers.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| crate::Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.grid.validate()?;
    let records = (0..config.len())
        .into_par_iter()
        .map(|i| generate_record(config, i))
        .collect::<mglc_core::Result<Vec<_>>>()?;
    Ok(Dataset::assemble(config.clone(), records)?)
}

pub fn rollout_batch<S, F>(make: F, p: &ControllerParams, cfg: &RolloutConfig) -> Result<ConvergenceReport>
where
    S: ControlSystem,
    F: Fn(StreamRng) -> S + Sync,
{
    cfg.validate()?;
    let outcomes = (0..cfg.count).into_par_iter().map(|i| rollout_index(&make, p, cfg, i)).collect();
    Ok(ConvergenceReport::from_outcomes(outcomes, cfg))
}

/// Per-sample gradients in parallel, summed in index order exactly like
/// [`mglc_core::diffusion::Serial`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RayonExecutor;

impl BatchExecutor for RayonExecutor {
    fn accumulate(
        &self,
        count: usize,
        job: &(dyn Fn(usize, &mut [f32]) -> mglc_core::Result<f64> + Sync),
        grad: &mut [f32],
    ) -> mglc_core::Result<f64> {
        let len = grad.len();
        let parts = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut g = vec![0.0f32; len];
                job(i, &mut g).map(|loss| (loss, g))
            })
            .collect::<mglc_core::Result<Vec<_>>>()?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += *b);
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mglc_core::diffusion::Serial;
    use mglc_core::dynamics::Benchmark;
    use mglc_core::grid::GridSpec;

    #[test]
    fn dataset_matches_serial_build() {
        let cfg = DatasetConfig { n1: 2, n2: 3, grid: GridSpec::square(4.0, 8), seed: 5, ..Default::default() };
        let par = with_threads(Some(3), || build_dataset(&cfg)).unwrap().unwrap();
        assert_eq!(par, mglc_core::lyapunov::build_dataset(&cfg).unwrap());
    }

    #[test]
    fn rollouts_match_serial() {
        let cfg = RolloutConfig { count: 12, t_end: 2.0, ..Default::default() };
        let b = Benchmark::NoisyPendulum;
        let p = b.reported_controller();
        let serial = mglc_core::verify::rollout_batch(|r| b.instantiate(r), &p, &cfg).unwrap();
        for threads in [1, 4] {
            let par = with_threads(Some(threads), || rollout_batch(|r| b.instantiate(r), &p, &cfg)).unwrap().unwrap();
            assert_eq!(par, serial);
        }
    }

    #[test]
    fn executor_matches_serial_bits() {
        let job = |i: usize, g: &mut [f32]| {
            for (k, v) in g.iter_mut().enumerate() {
                *v = ((i * 31 + k) as f32).sin() * 1e-3 + 1.0 / (i + 1) as f32;
            }
            Ok(i as f64 * 0.1)
        };
        let (mut a, mut b) = (vec![9.0f32; 17], vec![0.0f32; 17]);
        let la = Serial.accumulate(40, &job, &mut a).unwrap();
        let lb = with_threads(Some(4), || RayonExecutor.accumulate(40, &job, &mut b)).unwrap().unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        assert_eq!(a, b);
    }
}
