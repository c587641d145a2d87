//! Closed-loop rollouts from random initial conditions and grid checks of
//! Lyapunov conditions.

mod lyapunov_check;
mod ode;

use alloc::vec::Vec;
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;
use rand::Rng;

pub use lyapunov_check::{lyapunov_grid_check, GradientSource, LyapunovCheck};
pub use ode::{dopri5, euler, Rk45Config, Solution};

use crate::dynamics::{closed_loop, ControlSystem, ControllerParams, State};
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Method {
    /// Euler–Maruyama for stochastic systems, RK45 otherwise.
    #[default]
    Auto,
    Rk45,
    EulerMaruyama,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RolloutConfig {
    pub t_end: f64,
    /// `[[x1_min, x1_max], [x2_min, x2_max]]`.
    pub ic_box: [[f64; 2]; 2],
    pub count: usize,
    pub r_conv: f64,
    /// Trailing share of the horizon over which `‖x‖ < r_conv` must hold.
    pub final_fraction: f64,
    /// Uniformly spaced report times, including both ends.
    pub samples: usize,
    pub method: Method,
    pub rk45: Rk45Config,
    /// Euler–Maruyama step.
    pub dt: f64,
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            ic_box: [[-2.0, 2.0], [-2.0, 2.0]],
            count: 100,
            r_conv: 0.1,
            final_fraction: 0.1,
            samples: 1001,
            method: Method::Auto,
            rk45: Rk45Config::default(),
            dt: 2.5e-4,
            seed: 0,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config("horizon must be positive"));
        }
        if self.count == 0 {
            return Err(Error::Config("rollout count must be at least 1"));
        }
        if !(self.r_conv > 0.0) {
            return Err(Error::Config("convergence radius must be positive"));
        }
        if !(self.final_fraction > 0.0 && self.final_fraction <= 1.0) {
            return Err(Error::Config("final fraction must lie in (0, 1]"));
        }
        if self.samples < 2 {
            return Err(Error::Config("at least two report samples are needed"));
        }
        if self.ic_box.iter().any(|r| !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite()) {
            return Err(Error::Config("initial-condition box is malformed"));
        }
        if !(self.dt > 0.0 && self.dt <= self.t_end) {
            return Err(Error::Config("Euler step must lie in (0, horizon]"));
        }
        Ok(())
    }

    pub fn report_times(&self) -> Vec<f64> {
        let n = self.samples - 1;
        (0..=n).map(|k| self.t_end * k as f64 / n as f64).collect()
    }
}

/// Sampled closed-loop trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub controls: Vec<f64>,
}

/// Integrates the closed loop from `x0` with the configured method.
pub fn simulate<S: ControlSystem>(sys: &mut S, p: &ControllerParams, x0: State, cfg: &RolloutConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let stochastic = match cfg.method {
        Method::Auto => sys.is_stochastic(),
        Method::Rk45 => false,
        Method::EulerMaruyama => true,
    };
    let sol = if stochastic {
        em_integrate(sys, p, x0, cfg)?
    } else {
        rk45_integrate(&*sys, p, x0, cfg)?
    };
    let controls = sol.states.iter().map(|x| p.eval(*x)).collect();
    Ok(Trajectory { times: sol.times, states: sol.states, controls })
}

/// Dormand–Prince integration of the closed loop, reported at `cfg.report_times()`.
pub fn rk45_integrate<S: ControlSystem + ?Sized>(
    sys: &S,
    p: &ControllerParams,
    x0: State,
    cfg: &RolloutConfig,
) -> Result<Solution<2>> {
    dopri5(|_, x| closed_loop(sys, p, *x), 0.0, x0, &cfg.report_times(), &cfg.rk45)
}

/// Euler–Maruyama: one parameter redraw and one Euler update per step of
/// `cfg.dt`, recorded roughly `cfg.samples` times.
pub fn em_integrate<S: ControlSystem + ?Sized>(
    sys: &mut S,
    p: &ControllerParams,
    x0: State,
    cfg: &RolloutConfig,
) -> Result<Solution<2>> {
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let every = (steps / (cfg.samples - 1)).max(1);
    euler(
        |_, x| {
            sys.resample();
            closed_loop(&*sys, p, *x)
        },
        0.0,
        x0,
        cfg.dt,
        steps,
        every,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutcome {
    pub index: usize,
    pub x0: State,
    pub trajectory: Trajectory,
    pub final_norm: f64,
    /// Largest `‖x‖` over the trailing window.
    pub tail_max_norm: f64,
    pub converged: bool,
    /// Earliest report time after which `‖x‖ < r_conv` holds throughout.
    pub time_to_converge: Option<f64>,
    pub failure: Option<Error>,
}

impl TrajectoryOutcome {
    fn failed(index: usize, x0: State, error: Error) -> Self {
        Self {
            index,
            x0,
            trajectory: Trajectory::default(),
            final_norm: f64::INFINITY,
            tail_max_norm: f64::INFINITY,
            converged: false,
            time_to_converge: None,
            failure: Some(error),
        }
    }

    fn assess(index: usize, x0: State, trajectory: Trajectory, cfg: &RolloutConfig) -> Self {
        let norms: Vec<f64> = trajectory.states.iter().map(|x| x[0].hypot(x[1])).collect();
        let tail_start = cfg.t_end * (1.0 - cfg.final_fraction);
        let tail_max_norm = trajectory
            .times
            .iter()
            .zip(&norms)
            .filter(|(t, _)| **t >= tail_start - 1e-12)
            .map(|(_, n)| *n)
            .fold(0.0, f64::max);
        let converged = tail_max_norm < cfg.r_conv;
        let time_to_converge = converged.then(|| {
            let last_outside = norms.iter().rposition(|n| *n >= cfg.r_conv);
            match last_outside {
                Some(k) => trajectory.times[k + 1],
                None => 0.0,
            }
        });
        Self {
            index,
            x0,
            final_norm: norms.last().copied().unwrap_or(f64::INFINITY),
            tail_max_norm,
            converged,
            time_to_converge,
            failure: None,
            trajectory,
        }
    }
}

/// Rollout `index`: its initial condition and any parameter noise come
/// from `rng::stream(cfg.seed, index)`, so rollouts can run in any order.
pub fn rollout_index<S, F>(make: &F, p: &ControllerParams, cfg: &RolloutConfig, index: usize) -> TrajectoryOutcome
where
    S: ControlSystem,
    F: Fn(StreamRng) -> S + ?Sized,
{
    let mut rng = rng::stream(cfg.seed, index as u64);
    let x0 = [sample_range(&mut rng, cfg.ic_box[0]), sample_range(&mut rng, cfg.ic_box[1])];
    let mut sys = make(rng);
    match simulate(&mut sys, p, x0, cfg) {
        Ok(traj) => TrajectoryOutcome::assess(index, x0, traj, cfg),
        Err(e) => {
            log::debug!("rollout {index} from {x0:?} failed: {e}");
            TrajectoryOutcome::failed(index, x0, e)
        }
    }
}

fn sample_range<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub outcomes: Vec<TrajectoryOutcome>,
    pub converged: usize,
    pub fraction: f64,
    pub r_conv: f64,
}

impl ConvergenceReport {
    pub fn from_outcomes(outcomes: Vec<TrajectoryOutcome>, cfg: &RolloutConfig) -> Self {
        let converged = outcomes.iter().filter(|o| o.converged).count();
        let fraction = converged as f64 / outcomes.len().max(1) as f64;
        Self { outcomes, converged, fraction, r_conv: cfg.r_conv }
    }

    /// Worst-case slack `r_conv − max tail norm`; negative when some
    /// trajectory failed to converge.
    pub fn margin(&self) -> f64 {
        self.outcomes.iter().map(|o| self.r_conv - o.tail_max_norm).fold(f64::INFINITY, f64::min)
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.failure.is_some()).count()
    }
}

/// Serial batch of `cfg.count` rollouts.
pub fn rollout_batch<S, F>(make: F, p: &ControllerParams, cfg: &RolloutConfig) -> Result<ConvergenceReport>
where
    S: ControlSystem,
    F: Fn(StreamRng) -> S,
{
    cfg.validate()?;
    let outcomes = (0..cfg.count).map(|i| rollout_index(&make, p, cfg, i)).collect();
    Ok(ConvergenceReport::from_outcomes(outcomes, cfg))
}
