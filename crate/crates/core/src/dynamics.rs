//! Control-affine planar systems and the saturated tanh controller.
//!
//! The controller is `u(x) = C · Σ_i tanh(ψ_i x_i)`. Every benchmark plant
//! supplies its input Jacobian `∂f/∂u` analytically, which together with
//! `∂u/∂ψ` gives the field's parameter Jacobian used by the guidance step.

use alloc::vec::Vec;
use core::str::FromStr;
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;
use rand::Rng;

use crate::grid::{GridField, GridSpec};
use crate::rng::StreamRng;
use crate::{Error, Result};

pub type State = [f64; 2];

/// Gain used by every reported controller.
pub const DEFAULT_GAIN: f64 = 20.0;

/// Planar system `ẋ = f(x, u)` with scalar input.
pub trait ControlSystem {
    fn name(&self) -> &str;

    fn eval(&self, x: State, u: f64) -> State;

    /// `∂f/∂u` at `(x, u)`.
    fn input_jacobian(&self, x: State, u: f64) -> State;

    /// Starts a new evaluation epoch. Systems with randomized parameters
    /// redraw them here; the integrators call it once per step.
    fn resample(&mut self) {}

    /// Whether [`ControlSystem::resample`] changes the dynamics.
    fn is_stochastic(&self) -> bool {
        false
    }
}

impl<S: ControlSystem + ?Sized> ControlSystem for &mut S {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn eval(&self, x: State, u: f64) -> State {
        (**self).eval(x, u)
    }
    fn input_jacobian(&self, x: State, u: f64) -> State {
        (**self).input_jacobian(x, u)
    }
    fn resample(&mut self) {
        (**self).resample()
    }
    fn is_stochastic(&self) -> bool {
        (**self).is_stochastic()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ControllerParams {
    pub psi: [f64; 2],
    pub gain: f64,
}

impl ControllerParams {
    pub const fn new(psi: [f64; 2], gain: f64) -> Self {
        Self { psi, gain }
    }

    /// The zero controller.
    pub const fn zero() -> Self {
        Self { psi: [0.0, 0.0], gain: 0.0 }
    }

    #[inline]
    pub fn eval(&self, x: State) -> f64 {
        self.gain * ((self.psi[0] * x[0]).tanh() + (self.psi[1] * x[1]).tanh())
    }

    /// `∂u/∂ψ_i = C · x_i · sech²(ψ_i x_i)`.
    #[inline]
    pub fn param_grad(&self, x: State) -> [f64; 2] {
        let d = |i: usize| {
            let th = (self.psi[i] * x[i]).tanh();
            self.gain * x[i] * (1.0 - th * th)
        };
        [d(0), d(1)]
    }

    pub fn is_finite(&self) -> bool {
        self.psi.iter().all(|p| p.is_finite()) && self.gain.is_finite()
    }
}

pub fn controller_eval(p: &ControllerParams, x: State) -> f64 {
    p.eval(x)
}

pub fn controller_param_grad(p: &ControllerParams, x: State) -> [f64; 2] {
    p.param_grad(x)
}

/// Closed-loop right-hand side `f(x, u(x))`.
#[inline]
pub fn closed_loop<S: ControlSystem + ?Sized>(sys: &S, p: &ControllerParams, x: State) -> State {
    sys.eval(x, p.eval(x))
}

/// Samples the closed-loop field on the grid into channels 0 and 1 of `out`,
/// leaving channel 2 untouched.
pub fn write_field_on_grid<S: ControlSystem + ?Sized>(
    sys: &S,
    p: &ControllerParams,
    out: &mut GridField,
) -> Result<()> {
    let spec = *out.spec();
    let n = spec.len();
    let data = out.as_mut_slice();
    for g in 0..n {
        let x = spec.point_at(g);
        let f = closed_loop(sys, p, x);
        if !(f[0].is_finite() && f[1].is_finite()) {
            return Err(Error::Evaluation { point: x });
        }
        data[g] = f[0];
        data[n + g] = f[1];
    }
    Ok(())
}

/// Closed-loop field on a fresh grid, `V` channel zero.
pub fn eval_field_on_grid<S: ControlSystem + ?Sized>(
    sys: &S,
    p: &ControllerParams,
    spec: &GridSpec,
) -> Result<GridField> {
    spec.validate()?;
    let mut field = GridField::zeros(*spec);
    write_field_on_grid(sys, p, &mut field)?;
    Ok(field)
}

/// Entry `[g][c][i] = ∂f_c/∂u (x_g, u(x_g)) · ∂u/∂ψ_i (x_g)`.
pub fn field_param_jacobian<S: ControlSystem + ?Sized>(
    sys: &S,
    p: &ControllerParams,
    spec: &GridSpec,
) -> Result<Vec<[[f64; 2]; 2]>> {
    spec.validate()?;
    (0..spec.len())
        .map(|g| {
            let x = spec.point_at(g);
            let u = p.eval(x);
            let dfdu = sys.input_jacobian(x, u);
            let dudpsi = p.param_grad(x);
            let row = [
                [dfdu[0] * dudpsi[0], dfdu[0] * dudpsi[1]],
                [dfdu[1] * dudpsi[0], dfdu[1] * dudpsi[1]],
            ];
            if row.iter().flatten().all(|v| v.is_finite()) {
                Ok(row)
            } else {
                Err(Error::Evaluation { point: x })
            }
        })
        .collect()
}

/// Inverted pendulum `θ̈ = (m g l sin θ + u − 0.1 θ̇) / (m l²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pendulum {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub friction: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self { mass: 0.15, length: 0.5, gravity: 9.81, friction: 0.1 }
    }
}

impl Pendulum {
    /// Dynamics with `m + z1`, `l + z2` and input `(1 + z3) u`.
    #[inline]
    pub fn eval_perturbed(&self, x: State, u: f64, z: [f64; 3]) -> State {
        let m = self.mass + z[0];
        let l = self.length + z[1];
        let u = (1.0 + z[2]) * u;
        [
            x[1],
            (m * self.gravity * l * x[0].sin() + u - self.friction * x[1]) / (m * l * l),
        ]
    }

    #[inline]
    pub fn input_jacobian_perturbed(&self, z: [f64; 3]) -> State {
        let m = self.mass + z[0];
        let l = self.length + z[1];
        [0.0, (1.0 + z[2]) / (m * l * l)]
    }
}

impl ControlSystem for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }
    fn eval(&self, x: State, u: f64) -> State {
        self.eval_perturbed(x, u, [0.0; 3])
    }
    fn input_jacobian(&self, _x: State, _u: f64) -> State {
        self.input_jacobian_perturbed([0.0; 3])
    }
}

/// Damped Duffing oscillator; the open loop has stable equilibria at
/// `(±0.5, 0)` and a saddle at the origin.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Duffing;

impl ControlSystem for Duffing {
    fn name(&self) -> &str {
        "duffing"
    }
    fn eval(&self, x: State, u: f64) -> State {
        [x[1], -0.5 * x[1] - x[0] * (4.0 * x[0] * x[0] - 1.0) + 0.5 * u]
    }
    fn input_jacobian(&self, _x: State, _u: f64) -> State {
        [0.0, 0.5]
    }
}

/// Van der Pol variant with an unstable origin surrounded by a limit cycle.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VanDerPol;

impl ControlSystem for VanDerPol {
    fn name(&self) -> &str {
        "vanderpol"
    }
    fn eval(&self, x: State, u: f64) -> State {
        [2.0 * x[1], -0.8 * x[0] + 2.0 * x[1] - 10.0 * x[0] * x[0] * x[1] + u]
    }
    fn input_jacobian(&self, _x: State, _u: f64) -> State {
        [0.0, 1.0]
    }
}

/// Source of the three parameter perturbations `(z1, z2, z3)`.
pub trait ParamNoise {
    fn draw(&mut self) -> [f64; 3];
}

impl<F: FnMut() -> [f64; 3]> ParamNoise for F {
    fn draw(&mut self) -> [f64; 3] {
        self()
    }
}

/// Perturbations pinned at zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoNoise;

impl ParamNoise for NoNoise {
    fn draw(&mut self) -> [f64; 3] {
        [0.0; 3]
    }
}

/// Independent `U(-w, w)` perturbations.
#[derive(Debug, Clone)]
pub struct UniformParamNoise<R> {
    rng: R,
    half_width: f64,
}

impl<R: Rng> UniformParamNoise<R> {
    pub const DEFAULT_HALF_WIDTH: f64 = 0.05;

    pub fn new(rng: R) -> Self {
        Self { rng, half_width: Self::DEFAULT_HALF_WIDTH }
    }

    pub fn with_half_width(rng: R, half_width: f64) -> Self {
        Self { rng, half_width }
    }
}

impl<R: Rng> ParamNoise for UniformParamNoise<R> {
    fn draw(&mut self) -> [f64; 3] {
        let w = self.half_width;
        [
            self.rng.random_range(-w..w),
            self.rng.random_range(-w..w),
            self.rng.random_range(-w..w),
        ]
    }
}

/// Pendulum whose mass, length and input gain are redrawn every epoch.
/// The perturbation starts at zero until the first [`ControlSystem::resample`].
#[derive(Debug, Clone)]
pub struct NoisyPendulum<N> {
    pub nominal: Pendulum,
    noise: N,
    z: [f64; 3],
}

impl<N: ParamNoise> NoisyPendulum<N> {
    pub fn new(noise: N) -> Self {
        Self { nominal: Pendulum::default(), noise, z: [0.0; 3] }
    }

    pub fn perturbation(&self) -> [f64; 3] {
        self.z
    }
}

impl<N: ParamNoise> ControlSystem for NoisyPendulum<N> {
    fn name(&self) -> &str {
        "noisy-pendulum"
    }
    fn eval(&self, x: State, u: f64) -> State {
        self.nominal.eval_perturbed(x, u, self.z)
    }
    fn input_jacobian(&self, _x: State, _u: f64) -> State {
        self.nominal.input_jacobian_perturbed(self.z)
    }
    fn resample(&mut self) {
        self.z = self.noise.draw();
    }
    fn is_stochastic(&self) -> bool {
        true
    }
}

pub fn pendulum() -> Pendulum {
    Pendulum::default()
}

pub fn duffing() -> Duffing {
    Duffing
}

pub fn vanderpol() -> VanDerPol {
    VanDerPol
}

pub fn noisy_pendulum<N: ParamNoise>(noise: N) -> NoisyPendulum<N> {
    NoisyPendulum::new(noise)
}

/// The benchmark plants, selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Benchmark {
    Pendulum,
    Duffing,
    #[cfg_attr(feature = "serde", serde(rename = "vanderpol"))]
    VanDerPol,
    NoisyPendulum,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::Pendulum,
        Benchmark::Duffing,
        Benchmark::VanDerPol,
        Benchmark::NoisyPendulum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Pendulum => "pendulum",
            Benchmark::Duffing => "duffing",
            Benchmark::VanDerPol => "vanderpol",
            Benchmark::NoisyPendulum => "noisy-pendulum",
        }
    }

    /// Whether rollouts need the fixed-step randomized integrator.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Benchmark::NoisyPendulum)
    }

    /// Builds the plant. `noise_rng` drives the perturbations of the noisy
    /// pendulum and is ignored otherwise.
    pub fn instantiate(self, noise_rng: StreamRng) -> BenchmarkSystem {
        match self {
            Benchmark::Pendulum => BenchmarkSystem::Pendulum(Pendulum::default()),
            Benchmark::Duffing => BenchmarkSystem::Duffing(Duffing),
            Benchmark::VanDerPol => BenchmarkSystem::VanDerPol(VanDerPol),
            Benchmark::NoisyPendulum => {
                BenchmarkSystem::NoisyPendulum(NoisyPendulum::new(UniformParamNoise::new(noise_rng)))
            }
        }
    }

    /// Controller reported for this plant with gain 20.
    pub fn reported_controller(self) -> ControllerParams {
        let psi = match self {
            Benchmark::Pendulum => [-4.16928, -3.14848],
            Benchmark::Duffing => [-3.89859, -4.46941],
            Benchmark::VanDerPol => [-5.05384, -3.25052],
            Benchmark::NoisyPendulum => [-4.01703, -3.63485],
        };
        ControllerParams::new(psi, DEFAULT_GAIN)
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(Benchmark::Pendulum),
            "duffing" => Ok(Benchmark::Duffing),
            "vanderpol" | "van-der-pol" => Ok(Benchmark::VanDerPol),
            "noisy-pendulum" => Ok(Benchmark::NoisyPendulum),
            _ => Err(Error::Config(
                "unknown system; expected pendulum, duffing, vanderpol or noisy-pendulum",
            )),
        }
    }
}

impl core::fmt::Display for Benchmark {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// A concrete benchmark plant.
#[derive(Debug, Clone)]
pub enum BenchmarkSystem {
    Pendulum(Pendulum),
    Duffing(Duffing),
    VanDerPol(VanDerPol),
    NoisyPendulum(NoisyPendulum<UniformParamNoise<StreamRng>>),
}

impl ControlSystem for BenchmarkSystem {
    fn name(&self) -> &str {
        match self {
            BenchmarkSystem::Pendulum(s) => s.name(),
            BenchmarkSystem::Duffing(s) => s.name(),
            BenchmarkSystem::VanDerPol(s) => s.name(),
            BenchmarkSystem::NoisyPendulum(s) => s.name(),
        }
    }
    fn eval(&self, x: State, u: f64) -> State {
        match self {
            BenchmarkSystem::Pendulum(s) => s.eval(x, u),
            BenchmarkSystem::Duffing(s) => s.eval(x, u),
            BenchmarkSystem::VanDerPol(s) => s.eval(x, u),
            BenchmarkSystem::NoisyPendulum(s) => s.eval(x, u),
        }
    }
    fn input_jacobian(&self, x: State, u: f64) -> State {
        match self {
            BenchmarkSystem::Pendulum(s) => s.input_jacobian(x, u),
            BenchmarkSystem::Duffing(s) => s.input_jacobian(x, u),
            BenchmarkSystem::VanDerPol(s) => s.input_jacobian(x, u),
            BenchmarkSystem::NoisyPendulum(s) => s.input_jacobian(x, u),
        }
    }
    fn resample(&mut self) {
        if let BenchmarkSystem::NoisyPendulum(s) = self {
            s.resample()
        }
    }
    fn is_stochastic(&self) -> bool {
        matches!(self, BenchmarkSystem::NoisyPendulum(_))
    }
}
