//! Manifold-guided controller synthesis.
//!
//! The reverse diffusion is run on the closed-loop field itself: at every
//! step the f channels of `x_t` are overwritten by `f(X, u^ψ(X))`, the
//! denoiser's Tweedie estimate `x_{0|t}` gives a target, and ψ moves so that
//! the field follows the DDIM update toward it. The third channel is a free
//! Lyapunov candidate evolved by plain DDIM.

use alloc::vec::Vec;
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;

use crate::diffusion::{ddim_timesteps, tweedie, Checkpoint, Denoiser, NoiseSchedule};
use crate::dynamics::{eval_field_on_grid, field_param_jacobian, ControlSystem, ControllerParams, DEFAULT_GAIN};
use crate::grid::{GridField, GridSpec, NormCodec, LYAPUNOV_CHANNEL};
use crate::rng::{self, normal};
use crate::{Error, Result};

/// Smallest `|1 − √(1−ᾱ_{t'})/√(1−ᾱ_t)|` for which a ψ update is taken.
pub const DEGENERATE_EPS: f64 = 1e-8;

/// Step size `c_t` and target coefficient `a_t` of the guidance loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceCoeffs {
    pub c: f64,
    pub a: f64,
}

/// `c_t = 1 − √(1−ᾱ_{t'})/√(1−ᾱ_t)` and
/// `a_t = (√ᾱ_{t'} − √(1−ᾱ_{t'}) √ᾱ_t/√(1−ᾱ_t)) / c_t`, or `None` when `c_t`
/// is too small to divide by.
pub fn guidance_coeffs(alpha_t: f64, alpha_prev: f64) -> Option<GuidanceCoeffs> {
    let ratio = (1.0 - alpha_prev).sqrt() / (1.0 - alpha_t).sqrt();
    let c = 1.0 - ratio;
    if !(c.abs() >= DEGENERATE_EPS) {
        return None;
    }
    let a = (alpha_prev.sqrt() - ratio * alpha_t.sqrt()) / c;
    a.is_finite().then_some(GuidanceCoeffs { c, a })
}

/// [`guidance_coeffs`] on the clamped schedule values.
pub fn guidance_coeffs_at(schedule: &NoiseSchedule, t: usize, t_prev: usize) -> Option<GuidanceCoeffs> {
    guidance_coeffs(schedule.alpha_bar_clamped(t), schedule.alpha_bar_clamped(t_prev))
}

/// Residual `f(X, u^ψ) − a x_{0|t}` on the two field channels, channel-major.
fn residual<S: ControlSystem + ?Sized>(
    sys: &S,
    p: &ControllerParams,
    x0: &GridField,
    a: f64,
) -> Result<Vec<f64>> {
    let spec = x0.spec();
    let f = eval_field_on_grid(sys, p, spec)?;
    let n = spec.len();
    let target = &x0.as_slice()[..2 * n];
    if let Some(index) = target.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "Tweedie estimate", index });
    }
    Ok(f.as_slice()[..2 * n].iter().zip(target).map(|(f, x)| f - a * x).collect())
}

/// `L_t = ‖f(X, u^ψ) − a x_{0|t}‖²` over the f channels; `x_{0|t}` in raw units.
pub fn loss_lt<S: ControlSystem + ?Sized>(sys: &S, p: &ControllerParams, x0: &GridField, a: f64) -> Result<f64> {
    Ok(residual(sys, p, x0, a)?.iter().map(|r| r * r).sum())
}

/// `∇_ψ L_t = 2 Σ_g Σ_c r_{g,c} ∂f_c/∂ψ (x_g)`, holding `x_{0|t}` fixed.
pub fn grad_psi_lt<S: ControlSystem + ?Sized>(
    sys: &S,
    p: &ControllerParams,
    x0: &GridField,
    a: f64,
) -> Result<[f64; 2]> {
    let r = residual(sys, p, x0, a)?;
    let jac = field_param_jacobian(sys, p, x0.spec())?;
    let n = jac.len();
    let mut g = [0.0; 2];
    for (k, row) in jac.iter().enumerate() {
        for c in 0..2 {
            let rc = r[c * n + k];
            g[0] += 2.0 * rc * row[c][0];
            g[1] += 2.0 * rc * row[c][1];
        }
    }
    Ok(g)
}

/// How ψ follows the guidance loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields))]
pub enum ParamUpdate {
    /// `ψ ← ψ − c_t ∇_ψ L_t`.
    #[default]
    Gradient,
    /// `ψ ← ψ − c_t (JᵀJ + λI)⁻¹ Jᵀ r_t`: the least-squares ψ move that
    /// makes the field follow the DDIM update `−c_t r_t`, with `λ` equal to
    /// `damping` times the mean diagonal of `JᵀJ`.
    GaussNewton { damping: f64 },
}

fn param_step<S: ControlSystem + ?Sized>(
    sys: &S,
    p: &ControllerParams,
    x0: &GridField,
    coeffs: GuidanceCoeffs,
    update: ParamUpdate,
) -> Result<[f64; 2]> {
    match update {
        ParamUpdate::Gradient => {
            let g = grad_psi_lt(sys, p, x0, coeffs.a)?;
            Ok([-coeffs.c * g[0], -coeffs.c * g[1]])
        }
        ParamUpdate::GaussNewton { damping } => {
            let r = residual(sys, p, x0, coeffs.a)?;
            let jac = field_param_jacobian(sys, p, x0.spec())?;
            let n = jac.len();
            let mut jtj = [[0.0; 2]; 2];
            let mut jtr = [0.0; 2];
            for (k, row) in jac.iter().enumerate() {
                for c in 0..2 {
                    let (j0, j1, rc) = (row[c][0], row[c][1], r[c * n + k]);
                    jtj[0][0] += j0 * j0;
                    jtj[0][1] += j0 * j1;
                    jtj[1][1] += j1 * j1;
                    jtr[0] += j0 * rc;
                    jtr[1] += j1 * rc;
                }
            }
            let lambda = damping * 0.5 * (jtj[0][0] + jtj[1][1]) + f64::MIN_POSITIVE;
            let (m00, m01, m11) = (jtj[0][0] + lambda, jtj[0][1], jtj[1][1] + lambda);
            let det = m00 * m11 - m01 * m01;
            if !(det > 0.0 && det.is_finite()) {
                return Ok([0.0, 0.0]);
            }
            let solve = [(m11 * jtr[0] - m01 * jtr[1]) / det, (m00 * jtr[1] - m01 * jtr[0]) / det];
            Ok([-coeffs.c * solve[0], -coeffs.c * solve[1]])
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SynthesisConfig {
    pub gain: f64,
    /// Reverse steps; `None` uses the schedule's sampling step count.
    pub steps: Option<usize>,
    pub update: ParamUpdate,
    pub seed: u64,
    /// Independent prior draws, the best of which is kept after verification.
    pub restarts: usize,
    /// Clip the encoded Tweedie estimate to `[-clip, clip]` (the codec maps
    /// the training data into `[-1, 1]`); `None` disables clipping and is
    /// serialized as `false`.
    #[cfg_attr(feature = "serde", serde(with = "clip_repr"))]
    pub clip: Option<f64>,
}

#[cfg(feature = "serde")]
mod clip_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Off(bool),
        Bound(f64),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => Repr::Bound(*b),
            None => Repr::Off(false),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Bound(b) => Ok(Some(b)),
            Repr::Off(false) => Ok(None),
            Repr::Off(true) => Err(serde::de::Error::custom("clip = true needs a numeric bound")),
        }
    }
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { gain: DEFAULT_GAIN, steps: None, update: ParamUpdate::default(), seed: 0, restarts: 4, clip: Some(1.0) }
    }
}

/// One reverse step `t → t_prev`. `psi` is the value entering the step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub t_prev: usize,
    pub psi: [f64; 2],
    /// `L_t` at `psi`; `None` when the coefficients were degenerate.
    pub loss: Option<f64>,
    pub coeffs: Option<GuidanceCoeffs>,
    /// Encoded `x_t` fed to the denoiser.
    pub x_t: GridField,
    /// Encoded Tweedie estimate.
    pub x0: GridField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisTrace {
    pub system: alloc::string::String,
    pub restart: usize,
    pub psi_init: [f64; 2],
    pub controller: ControllerParams,
    pub steps: Vec<StepRecord>,
    /// `f(X, u^{ψ_0})` with the evolved candidate in the V channel, raw units.
    pub final_field: GridField,
    pub codec: NormCodec,
}

/// Noise consistent with `x_t` and a clean estimate: `(x_t − √ᾱ_t x0)/√(1−ᾱ_t)`.
fn implied_noise(x_t: &GridField, x0: &GridField, t: usize, schedule: &NoiseSchedule) -> Result<GridField> {
    let a = schedule.alpha_bar_clamped(t);
    let (sa, inv) = (a.sqrt(), 1.0 / (1.0 - a).sqrt());
    let data = x_t.as_slice().iter().zip(x0.as_slice()).map(|(x, x0)| (x - sa * x0) * inv).collect();
    GridField::from_vec(*x_t.spec(), data)
}

/// Runs the guided reverse loop for restart `restart`, whose prior draw
/// `ψ_T ~ N(0, I)` comes from `rng::stream(cfg.seed, restart)`.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_with<S, D>(
    sys: &S,
    denoiser: &D,
    schedule: &NoiseSchedule,
    codec: &NormCodec,
    spec: &GridSpec,
    cfg: &SynthesisConfig,
    restart: usize,
) -> Result<SynthesisTrace>
where
    S: ControlSystem + ?Sized,
    D: Denoiser + ?Sized,
{
    spec.validate()?;
    let mut rng = rng::stream(cfg.seed, restart as u64);
    let psi_init = [normal(&mut rng), normal(&mut rng)];
    let mut p = ControllerParams::new(psi_init, cfg.gain);
    let n = spec.len();
    let mut v = GridField::zeros(*spec);
    rng::fill_normal(&mut rng, v.channel_mut(LYAPUNOV_CHANNEL));

    let count = cfg.steps.unwrap_or(schedule.config().sampling_steps);
    if count > schedule.steps() {
        return Err(Error::Config("more reverse steps than diffusion steps"));
    }
    let times = ddim_timesteps(schedule.steps(), count);
    let mut steps = Vec::with_capacity(count);
    for w in times.windows(2) {
        let (t, t_prev) = (w[0], w[1]);
        let mut x_t = codec.encode(&eval_field_on_grid(sys, &p, spec)?);
        x_t.channel_mut(LYAPUNOV_CHANNEL).copy_from_slice(v.channel(LYAPUNOV_CHANNEL));
        let eps = denoiser.predict_noise(&x_t, t)?;
        if eps.spec() != spec {
            return Err(Error::GridMismatch);
        }
        let mut x0 = tweedie(&x_t, &eps, t, schedule)?;
        let eps = match cfg.clip {
            Some(bound) => {
                x0.as_mut_slice().iter_mut().for_each(|v| *v = v.clamp(-bound, bound));
                implied_noise(&x_t, &x0, t, schedule)?
            }
            None => eps,
        };
        let x0_raw = codec.decode(&x0);
        let coeffs = guidance_coeffs_at(schedule, t, t_prev);
        let loss = match coeffs {
            Some(c) => Some(loss_lt(sys, &p, &x0_raw, c.a)?),
            None => None,
        };
        let psi = p.psi;
        if let Some(c) = coeffs {
            let d = param_step(sys, &p, &x0_raw, c, cfg.update)?;
            p.psi = [p.psi[0] + d[0], p.psi[1] + d[1]];
            if !p.is_finite() {
                return Err(Error::NonFinite { context: "controller parameters", index: steps.len() });
            }
        }
        // DDIM on the candidate channel
        let (sa, sn) = (schedule.alpha_bar(t_prev).sqrt(), (1.0 - schedule.alpha_bar(t_prev)).sqrt());
        let vc = v.channel_mut(LYAPUNOV_CHANNEL);
        let (x0v, ev) = (x0.channel(LYAPUNOV_CHANNEL), eps.channel(LYAPUNOV_CHANNEL));
        for k in 0..n {
            vc[k] = sa * x0v[k] + sn * ev[k];
        }
        steps.push(StepRecord { t, t_prev, psi, loss, coeffs, x_t, x0 });
    }

    let mut final_field = eval_field_on_grid(sys, &p, spec)?;
    let v_raw = codec.decode(&v);
    final_field.channel_mut(LYAPUNOV_CHANNEL).copy_from_slice(v_raw.channel(LYAPUNOV_CHANNEL));
    Ok(SynthesisTrace {
        system: sys.name().into(),
        restart,
        psi_init,
        controller: p,
        steps,
        final_field,
        codec: *codec,
    })
}

/// [`synthesize_with`] using a trained checkpoint.
pub fn synthesize<S: ControlSystem + ?Sized>(
    sys: &S,
    checkpoint: &Checkpoint,
    cfg: &SynthesisConfig,
    restart: usize,
) -> Result<SynthesisTrace> {
    synthesize_with(sys, &checkpoint.denoiser, &checkpoint.schedule, &checkpoint.codec, checkpoint.grid(), cfg, restart)
}

/// Verification summary used to rank restarts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub fraction: f64,
    pub margin: f64,
}

/// Index of the best candidate: highest convergence fraction, then largest
/// margin, then lowest index.
pub fn select_best(scores: &[Score]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let o = scores[b];
                s.fraction > o.fraction || (s.fraction == o.fraction && s.margin > o.margin)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}
