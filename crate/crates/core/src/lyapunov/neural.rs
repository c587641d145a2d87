//! Tanh-network Lyapunov candidates and their grid certificate.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;
use rand::Rng;

use crate::dynamics::State;
use crate::grid::GridSpec;
use crate::rng::normal;
use crate::tinynet::Adam;
use crate::{Error, Result};

/// `V(x) = β·tanh(W x + b) − β·tanh(b)`, so `V(0) = 0` by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovNet {
    pub w: Vec<[f64; 2]>,
    pub b: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LyapunovNet {
    pub fn zeros(hidden: usize) -> Self {
        Self { w: vec![[0.0; 2]; hidden], b: vec![0.0; hidden], beta: vec![0.0; hidden] }
    }

    pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(hidden);
        for k in 0..hidden {
            net.w[k] = [normal(rng), normal(rng)];
            net.b[k] = normal(rng);
            // curvature at the origin is −2β tanh(b) sech²(b) (w·x)², so β opposes b
            net.beta[k] = -net.b[k].signum() * normal(rng).abs();
        }
        net
    }

    pub fn hidden(&self) -> usize {
        self.b.len()
    }

    pub fn value(&self, x: State) -> f64 {
        let mut v = 0.0;
        for k in 0..self.hidden() {
            let z = self.w[k][0] * x[0] + self.w[k][1] * x[1] + self.b[k];
            v += self.beta[k] * (z.tanh() - self.b[k].tanh());
        }
        v
    }

    pub fn gradient(&self, x: State) -> [f64; 2] {
        let mut g = [0.0; 2];
        for k in 0..self.hidden() {
            let t = (self.w[k][0] * x[0] + self.w[k][1] * x[1] + self.b[k]).tanh();
            let s = self.beta[k] * (1.0 - t * t);
            g[0] += s * self.w[k][0];
            g[1] += s * self.w[k][1];
        }
        g
    }

    pub fn lie_derivative(&self, x: State, f: State) -> f64 {
        let g = self.gradient(x);
        g[0] * f[0] + g[1] * f[1]
    }

    pub fn num_params(&self) -> usize {
        4 * self.hidden()
    }

    /// Flat layout: `W` row-major, then `b`, then `β`.
    pub fn to_params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        p.extend(self.w.iter().flatten());
        p.extend(&self.b);
        p.extend(&self.beta);
        p
    }

    pub fn from_params(hidden: usize, params: &[f64]) -> Result<Self> {
        if params.len() != 4 * hidden {
            return Err(Error::Shape { expected: 4 * hidden, found: params.len() });
        }
        let (w, rest) = params.split_at(2 * hidden);
        let (b, beta) = rest.split_at(hidden);
        Ok(Self {
            w: w.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
            b: b.to_vec(),
            beta: beta.to_vec(),
        })
    }

    /// Mean squared-hinge loss `relu(V̇ + ‖x‖²)² + relu(−V)²` and its gradient
    /// in the flat parameter layout.
    pub fn loss_and_grad(&self, points: &[State], fields: &[State], grad: &mut [f64]) -> f64 {
        let h = self.hidden();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (gw, rest) = grad.split_at_mut(2 * h);
        let (gb, gbeta) = rest.split_at_mut(h);
        let tb: Vec<f64> = self.b.iter().map(|b| b.tanh()).collect();
        let mut tz = vec![0.0; h];
        let mut loss = 0.0;
        for (x, f) in points.iter().zip(fields) {
            let mut v = 0.0;
            let mut vdot = 0.0;
            for k in 0..h {
                let t = (self.w[k][0] * x[0] + self.w[k][1] * x[1] + self.b[k]).tanh();
                tz[k] = t;
                v += self.beta[k] * (t - tb[k]);
                vdot += self.beta[k] * (1.0 - t * t) * (self.w[k][0] * f[0] + self.w[k][1] * f[1]);
            }
            let decay = (vdot + x[0] * x[0] + x[1] * x[1]).max(0.0);
            let neg = (-v).max(0.0);
            loss += decay * decay + neg * neg;
            if decay == 0.0 && neg == 0.0 {
                continue;
            }
            let dd = 2.0 * decay;
            let dv = -2.0 * neg;
            for k in 0..h {
                let t = tz[k];
                let s = 1.0 - t * t;
                let wf = self.w[k][0] * f[0] + self.w[k][1] * f[1];
                let ds = -2.0 * t * s;
                let beta = self.beta[k];
                gbeta[k] += dd * s * wf + dv * (t - tb[k]);
                let common = dd * beta * wf * ds + dv * beta * s;
                gw[2 * k] += dd * beta * s * f[0] + common * x[0];
                gw[2 * k + 1] += dd * beta * s * f[1] + common * x[1];
                gb[k] += common - dv * beta * (1.0 - tb[k] * tb[k]);
            }
        }
        let n = points.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        loss / n
    }
}

/// Counts from checking `V > 0` and `V̇ < 0` on grid points outside a ball.
const CHECK_EVERY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Certificate {
    pub checked: usize,
    pub positive: usize,
    pub decreasing: usize,
    pub both: usize,
}

impl Certificate {
    pub fn fraction(&self) -> f64 {
        if self.checked == 0 {
            return 1.0;
        }
        self.both as f64 / self.checked as f64
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.fraction() >= threshold
    }
}

/// Evaluates `check(x) -> (V, V̇)` on every grid point with `‖x‖ > exclusion_radius`.
pub fn certify<F>(spec: &GridSpec, exclusion_radius: f64, mut check: F) -> Certificate
where
    F: FnMut(State) -> (f64, f64),
{
    certify_indexed(spec, exclusion_radius, |_, x| check(x))
}

/// As [`certify`], also passing the row-major grid index.
pub(crate) fn certify_indexed<F>(spec: &GridSpec, exclusion_radius: f64, mut check: F) -> Certificate
where
    F: FnMut(usize, State) -> (f64, f64),
{
    let mut cert = Certificate::default();
    for g in 0..spec.len() {
        let x = spec.point_at(g);
        if x[0].hypot(x[1]) <= exclusion_radius {
            continue;
        }
        let (v, vdot) = check(g, x);
        cert.checked += 1;
        let pos = v > 0.0;
        let dec = vdot < 0.0;
        cert.positive += pos as usize;
        cert.decreasing += dec as usize;
        cert.both += (pos && dec) as usize;
    }
    cert
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LyapunovTrainConfig {
    pub hidden: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exclusion_radius: f64,
    pub pass_fraction: f64,
}

impl Default for LyapunovTrainConfig {
    fn default() -> Self {
        Self { hidden: 20, iterations: 2000, learning_rate: 1e-2, exclusion_radius: 0.2, pass_fraction: 0.99 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LyapunovFit {
    Accepted { net: LyapunovNet, certificate: Certificate },
    Rejected { certificate: Certificate },
}

impl LyapunovFit {
    pub fn certificate(&self) -> Certificate {
        match self {
            Self::Accepted { certificate, .. } | Self::Rejected { certificate } => *certificate,
        }
    }

    pub fn net(self) -> Option<LyapunovNet> {
        match self {
            Self::Accepted { net, .. } => Some(net),
            Self::Rejected { .. } => None,
        }
    }
}

/// Fits a tanh Lyapunov candidate to `f` on the grid points with Adam, then
/// gates it on the certificate. Training stops early once the certificate
/// passes.
pub fn train_neural_lyapunov<F, R>(
    f: F,
    spec: &GridSpec,
    config: &LyapunovTrainConfig,
    rng: &mut R,
) -> Result<LyapunovFit>
where
    F: Fn(State) -> State,
    R: Rng + ?Sized,
{
    spec.validate()?;
    let g = spec.resolution;
    let mut points = Vec::with_capacity(g * g);
    for i in 0..g {
        for j in 0..g {
            points.push(spec.point(i, j));
        }
    }
    let fields: Vec<State> = points.iter().map(|&x| f(x)).collect();
    if fields.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "vector field on grid", index: 0 });
    }

    let check = |net: &LyapunovNet| {
        certify_indexed(spec, config.exclusion_radius, |g, x| (net.value(x), net.lie_derivative(x, fields[g])))
    };

    let hidden = config.hidden;
    let mut net = LyapunovNet::init(hidden, rng);
    let mut params = net.to_params();
    let mut grad = vec![0.0; params.len()];
    let mut adam = Adam::new(params.len(), config.learning_rate);
    for step in 0..config.iterations {
        let loss = net.loss_and_grad(&points, &fields, &mut grad);
        if !loss.is_finite() {
            return Err(Error::NonFinite { context: "lyapunov loss", index: step });
        }
        if loss == 0.0 {
            break;
        }
        if step % CHECK_EVERY == CHECK_EVERY - 1 && check(&net).passes(config.pass_fraction) {
            break;
        }
        adam.step(&mut params, &grad)?;
        net = LyapunovNet::from_params(hidden, &params)?;
    }

    let certificate = check(&net);
    Ok(if certificate.passes(config.pass_fraction) {
        LyapunovFit::Accepted { net, certificate }
    } else {
        LyapunovFit::Rejected { certificate }
    })
}
