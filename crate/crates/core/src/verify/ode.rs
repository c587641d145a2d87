//! Dormand–Prince 5(4) with dense output, and fixed-step Euler.

use alloc::vec::Vec;
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;

use crate::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Rk45Config {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Rk45Config {
    fn default() -> Self {
        Self { rtol: 1e-6, atol: 1e-8, max_steps: 1_000_000 }
    }
}

/// States at requested output times plus step statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<const N: usize> {
    pub times: Vec<f64>,
    pub states: Vec<[f64; N]>,
    pub accepted: usize,
    pub rejected: usize,
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    core::array::from_fn(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

fn rms<const N: usize>(v: impl Fn(usize) -> f64) -> f64 {
    ((0..N).map(|i| v(i).powi(2)).sum::<f64>() / N as f64).sqrt()
}

fn initial_step<const N: usize, F>(f: &mut F, t0: f64, y0: &[f64; N], f0: &[f64; N], cfg: &Rk45Config) -> f64
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let sk: [f64; N] = core::array::from_fn(|i| cfg.atol + cfg.rtol * y0[i].abs());
    let d0 = rms::<N>(|i| y0[i] / sk[i]);
    let d1 = rms::<N>(|i| f0[i] / sk[i]);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1 = axpy(y0, h0, &[(1.0, f0)]);
    let f1 = f(t0 + h0, &y1);
    let d2 = rms::<N>(|i| (f1[i] - f0[i]) / sk[i]) / h0;
    let big = d1.max(d2);
    let h1 = if big <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / big).powf(0.2) };
    (100.0 * h0).min(h1)
}

/// Integrates `ẏ = f(t, y)` from `t0` to the last entry of `outputs`
/// (ascending, all `≥ t0`) with local error per step bounded by
/// `atol + rtol·|y|` in RMS norm. States at `outputs` come from the
/// fourth-order dense interpolant.
pub fn dopri5<const N: usize, F>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    outputs: &[f64],
    cfg: &Rk45Config,
) -> Result<Solution<N>>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "initial state", index: 0 });
    }
    if !(cfg.rtol > 0.0 && cfg.atol >= 0.0) {
        return Err(Error::Config("tolerances must be positive"));
    }
    if outputs.windows(2).any(|w| w[1] < w[0]) || outputs.first().is_some_and(|&t| t < t0) {
        return Err(Error::Config("output times must be ascending and not before t0"));
    }
    let mut sol = Solution { times: Vec::with_capacity(outputs.len()), states: Vec::with_capacity(outputs.len()), accepted: 0, rejected: 0 };
    let Some(&t_end) = outputs.last() else {
        return Ok(sol);
    };
    let mut next_out = 0;
    while next_out < outputs.len() && outputs[next_out] <= t0 {
        sol.times.push(outputs[next_out]);
        sol.states.push(y0);
        next_out += 1;
    }

    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut h = initial_step(&mut f, t, &y, &k1, cfg).min(t_end - t);
    let mut last_failed = false;
    while next_out < outputs.len() {
        if sol.accepted + sol.rejected >= cfg.max_steps {
            return Err(Error::Integration { t, reason: "step budget exhausted" });
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(Error::Integration { t, reason: "step size underflow" });
        }
        let h_step = h.min(t_end - t);
        let k2 = f(t + C2 * h_step, &axpy(&y, h_step, &[(A21, &k1)]));
        let k3 = f(t + C3 * h_step, &axpy(&y, h_step, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(t + C4 * h_step, &axpy(&y, h_step, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(t + C5 * h_step, &axpy(&y, h_step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
        let k6 = f(
            t + h_step,
            &axpy(&y, h_step, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
        );
        let y_new = axpy(&y, h_step, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = f(t + h_step, &y_new);

        let err = rms::<N>(|i| {
            let e = h_step * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            e / (cfg.atol + cfg.rtol * y[i].abs().max(y_new[i].abs()))
        });
        if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            sol.rejected += 1;
            h = h_step * 0.1;
            last_failed = true;
            continue;
        }
        let mut factor = 0.9 * err.max(1e-10).powf(-0.2);
        if err <= 1.0 {
            let t_new = t + h_step;
            while next_out < outputs.len() && outputs[next_out] <= t_new {
                let theta = (outputs[next_out] - t) / h_step;
                let theta1 = 1.0 - theta;
                let state = core::array::from_fn(|i| {
                    let r2 = y_new[i] - y[i];
                    let r3 = h_step * k1[i] - r2;
                    let r4 = r2 - h_step * k7[i] - r3;
                    let r5 = h_step
                        * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                    y[i] + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)))
                });
                sol.times.push(outputs[next_out]);
                sol.states.push(if outputs[next_out] == t_new { y_new } else { state });
                next_out += 1;
            }
            sol.accepted += 1;
            t = t_new;
            y = y_new;
            k1 = k7;
            if last_failed {
                factor = factor.min(1.0);
            }
            last_failed = false;
            h = h_step * factor.clamp(0.2, 10.0);
        } else {
            sol.rejected += 1;
            last_failed = true;
            h = h_step * factor.clamp(0.2, 1.0);
        }
    }
    Ok(sol)
}

/// Fixed-step explicit Euler with exactly one evaluation of `f` per step.
/// Records every `record_every`-th state (and always the last).
pub fn euler<const N: usize, F>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    dt: f64,
    steps: usize,
    record_every: usize,
) -> Result<Solution<N>>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config("time step must be positive"));
    }
    let every = record_every.max(1);
    let mut sol = Solution { times: Vec::new(), states: Vec::new(), accepted: steps, rejected: 0 };
    let mut y = y0;
    sol.times.push(t0);
    sol.states.push(y);
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let d = f(t, &y);
        y = core::array::from_fn(|i| y[i] + dt * d[i]);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k });
        }
        if (k + 1) % every == 0 || k + 1 == steps {
            sol.times.push(t0 + (k + 1) as f64 * dt);
            sol.states.push(y);
        }
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn exponential_decay() {
        let sol = dopri5(|_, y: &[f64; 1]| [-y[0]], 0.0, [1.0], &[1.0], &Rk45Config::default()).unwrap();
        assert!((sol.states[0][0] - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn dense_output_tracks_the_solution() {
        let times = linspace(0.0, 3.0, 301);
        let cfg = Rk45Config { rtol: 1e-9, atol: 1e-12, ..Default::default() };
        let sol = dopri5(|_, y: &[f64; 1]| [-y[0]], 0.0, [1.0], &times, &cfg).unwrap();
        assert_eq!(sol.times, times);
        for (t, y) in sol.times.iter().zip(&sol.states) {
            assert!((y[0] - (-t).exp()).abs() < 1e-8, "t={t}");
        }
        // far fewer steps than output points
        assert!(sol.accepted < 100);
    }

    #[test]
    fn constant_field_is_constant() {
        let sol = dopri5(|_, _: &[f64; 2]| [0.0, 0.0], 0.0, [0.3, -2.0], &linspace(0.0, 5.0, 11), &Rk45Config::default())
            .unwrap();
        assert!(sol.states.iter().all(|s| *s == [0.3, -2.0]));
    }

    #[test]
    fn harmonic_oscillator_energy() {
        let period = 2.0 * core::f64::consts::PI;
        let cfg = Rk45Config { rtol: 1e-8, atol: 1e-10, ..Default::default() };
        let times = linspace(0.0, 10.0 * period, 1001);
        let sol = dopri5(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [1.0, 0.0], &times, &cfg).unwrap();
        let drift = sol.states.iter().map(|y| (0.5 * (y[0] * y[0] + y[1] * y[1]) - 0.5).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-5, "{drift}");
    }

    #[test]
    fn time_dependent_field() {
        // ẏ = cos t, y(0) = 0
        let times = linspace(0.0, 4.0, 9);
        let cfg = Rk45Config { rtol: 1e-10, atol: 1e-12, ..Default::default() };
        let sol = dopri5(|t, _: &[f64; 1]| [t.cos()], 0.0, [0.0], &times, &cfg).unwrap();
        for (t, y) in times.iter().zip(&sol.states) {
            assert!((y[0] - t.sin()).abs() < 1e-8, "t={t}: {}", (y[0] - t.sin()).abs());
        }
    }

    #[test]
    fn blow_up_reports_integration_error() {
        // ẏ = y², y(0) = 1 explodes at t = 1
        let err = dopri5(|_, y: &[f64; 1]| [y[0] * y[0]], 0.0, [1.0], &[2.0], &Rk45Config::default()).unwrap_err();
        let Error::Integration { t, .. } = err else { panic!("{err:?}") };
        assert!((t - 1.0).abs() < 1e-2, "{t}");
    }

    #[test]
    fn rejects_bad_arguments() {
        let f = |_: f64, y: &[f64; 1]| [-y[0]];
        assert!(dopri5(f, 0.0, [f64::NAN], &[1.0], &Rk45Config::default()).is_err());
        assert!(dopri5(f, 0.0, [1.0], &[1.0, 0.5], &Rk45Config::default()).is_err());
        assert!(euler(f, 0.0, [1.0], 0.0, 10, 1).is_err());
    }

    #[test]
    fn euler_matches_hand_iteration() {
        let mut calls = 0;
        let sol = euler(
            |_, y: &[f64; 1]| {
                calls += 1;
                [-2.0 * y[0]]
            },
            0.0,
            [1.0],
            0.1,
            5,
            1,
        )
        .unwrap();
        assert_eq!(calls, 5);
        assert_eq!(sol.states.len(), 6);
        let mut y = 1.0;
        for s in &sol.states[1..] {
            y += 0.1 * (-2.0 * y);
            assert_eq!(s[0], y);
        }
        let sparse = euler(|_, y: &[f64; 1]| [-2.0 * y[0]], 0.0, [1.0], 0.1, 5, 2).unwrap();
        assert_eq!(sparse.times.len(), 4);
        assert_eq!(sparse.states.last(), sol.states.last());
    }

    #[test]
    fn euler_reports_divergence() {
        let err = euler(|_, y: &[f64; 1]| [y[0] * y[0]], 0.0, [1.0], 0.5, 100, 1).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }
}
