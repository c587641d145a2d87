//! The two families of stable planar fields used as training data.

use alloc::vec::Vec;
#[allow(unused_imports)] // inherent float methods shadow these when std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dynamics::State;
use crate::rng::normal;
use crate::{Error, Result};

pub type Mat2 = [[f64; 2]; 2];

/// Hidden width of the tanh perturbation in family 1.
pub const PERTURBATION_WIDTH: usize = 20;

/// Draw limit for Hurwitz rejection sampling.
pub const HURWITZ_MAX_DRAWS: usize = 10_000;

/// 2×2 criterion: both eigenvalues in the open left half-plane.
pub fn is_hurwitz(a: &Mat2) -> bool {
    let trace = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    trace < 0.0 && det > 0.0
}

/// Entries i.i.d. `N(0, 1)`, rejected until Hurwitz.
pub fn sample_hurwitz<R: Rng + ?Sized>(rng: &mut R) -> Result<Mat2> {
    for _ in 0..HURWITZ_MAX_DRAWS {
        let a = [[normal(rng), normal(rng)], [normal(rng), normal(rng)]];
        if is_hurwitz(&a) {
            return Ok(a);
        }
    }
    Err(Error::HurwitzSampling { draws: HURWITZ_MAX_DRAWS })
}

/// `f(x) = A x + β_f tanh(W_f x)` with `β_f ∈ ℝ^{2×20}`, `W_f ∈ ℝ^{20×2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Family1Spec {
    pub a: Mat2,
    pub w_f: [[f64; 2]; PERTURBATION_WIDTH],
    pub beta_f: [[f64; PERTURBATION_WIDTH]; 2],
}

impl Family1Spec {
    /// Number of `f64` values in the flat encoding.
    pub const VALUES: usize = 4 + 4 * PERTURBATION_WIDTH;

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Result<Self> {
        let a = sample_hurwitz(rng)?;
        let mut w_f = [[0.0; 2]; PERTURBATION_WIDTH];
        for row in &mut w_f {
            *row = [normal(rng), normal(rng)];
        }
        let small = Normal::new(0.0, 0.2).unwrap();
        let mut beta_f = [[0.0; PERTURBATION_WIDTH]; 2];
        for row in &mut beta_f {
            for v in row.iter_mut() {
                *v = small.sample(rng);
            }
        }
        Ok(Self { a, w_f, beta_f })
    }

    #[inline]
    pub fn eval(&self, x: State) -> State {
        let mut out = [
            self.a[0][0] * x[0] + self.a[0][1] * x[1],
            self.a[1][0] * x[0] + self.a[1][1] * x[1],
        ];
        for k in 0..PERTURBATION_WIDTH {
            let h = (self.w_f[k][0] * x[0] + self.w_f[k][1] * x[1]).tanh();
            out[0] += self.beta_f[0][k] * h;
            out[1] += self.beta_f[1][k] * h;
        }
        out
    }

    /// `A` row-major, then `W_f` row-major, then `β_f` row-major.
    pub fn to_values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::VALUES);
        v.extend(self.a.iter().flatten());
        v.extend(self.w_f.iter().flatten());
        v.extend(self.beta_f.iter().flatten());
        v
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.len() != Self::VALUES {
            return Err(Error::Shape { expected: Self::VALUES, found: values.len() });
        }
        let mut spec = Self {
            a: [[values[0], values[1]], [values[2], values[3]]],
            w_f: [[0.0; 2]; PERTURBATION_WIDTH],
            beta_f: [[0.0; PERTURBATION_WIDTH]; 2],
        };
        let w = &values[4..4 + 2 * PERTURBATION_WIDTH];
        for (k, row) in spec.w_f.iter_mut().enumerate() {
            *row = [w[2 * k], w[2 * k + 1]];
        }
        let b = &values[4 + 2 * PERTURBATION_WIDTH..];
        for (c, row) in spec.beta_f.iter_mut().enumerate() {
            row.copy_from_slice(&b[c * PERTURBATION_WIDTH..(c + 1) * PERTURBATION_WIDTH]);
        }
        Ok(spec)
    }
}

pub fn gen_family1<R: Rng + ?Sized>(rng: &mut R) -> Result<Family1Spec> {
    Family1Spec::sample(rng)
}

/// Second-order system `ẋ1 = x2`, `ẋ2 = −c1 x1 − c2 tanh x1 − c3 x2 − c4 tanh x2`
/// with energy `V = c1/2 x1² + c2 log cosh x1 + x2²/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Family2Spec {
    pub c: [f64; 4],
}

impl Family2Spec {
    pub const VALUES: usize = 4;
    pub const COEFFICIENT_MAX: f64 = 5.0;

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut c = [0.0; 4];
        for v in &mut c {
            *v = rng.random_range(0.0..Self::COEFFICIENT_MAX);
        }
        Self { c }
    }

    #[inline]
    pub fn eval(&self, x: State) -> State {
        let [c1, c2, c3, c4] = self.c;
        [x[1], -c1 * x[0] - c2 * x[0].tanh() - c3 * x[1] - c4 * x[1].tanh()]
    }

    pub fn lyapunov(&self, x: State) -> f64 {
        0.5 * self.c[0] * x[0] * x[0] + self.c[1] * log_cosh(x[0]) + 0.5 * x[1] * x[1]
    }

    pub fn lyapunov_gradient(&self, x: State) -> [f64; 2] {
        [self.c[0] * x[0] + self.c[1] * x[0].tanh(), x[1]]
    }

    /// Closed form of `∇V · f`: `−x2 (c3 x2 + c4 tanh x2)`.
    pub fn lie_derivative(&self, x: State) -> f64 {
        -x[1] * (self.c[2] * x[1] + self.c[3] * x[1].tanh())
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        let c: [f64; 4] = values
            .try_into()
            .map_err(|_| Error::Shape { expected: Self::VALUES, found: values.len() })?;
        Ok(Self { c })
    }
}

/// `log cosh` without overflow for large arguments.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - core::f64::consts::LN_2
}

pub fn gen_family2<R: Rng + ?Sized>(rng: &mut R) -> Family2Spec {
    Family2Spec::sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Eigenvalues of a real 2×2 matrix via the quadratic formula, returned as
    /// the largest real part.
    fn max_real_eigenvalue(a: &Mat2) -> f64 {
        let tr = a[0][0] + a[1][1];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let disc = tr * tr - 4.0 * det;
        if disc >= 0.0 {
            (tr + disc.sqrt()) / 2.0
        } else {
            tr / 2.0
        }
    }

    #[test]
    fn hurwitz_criterion() {
        assert!(is_hurwitz(&[[-1.0, 0.0], [0.0, -2.0]]));
        assert!(!is_hurwitz(&[[1.0, 0.0], [0.0, -2.0]]));
        assert!(!is_hurwitz(&[[0.0, 1.0], [-1.0, 0.0]]));
    }

    #[test]
    fn sampled_matrices_have_stable_eigenvalues() {
        let mut r = rng::stream(21, 0);
        for _ in 0..1000 {
            let a = sample_hurwitz(&mut r).unwrap();
            assert!(max_real_eigenvalue(&a) < 0.0, "{a:?}");
        }
    }

    #[test]
    fn family1_matches_matrix_oracle() {
        let mut r = rng::stream(22, 0);
        for _ in 0..20 {
            let spec = gen_family1(&mut r).unwrap();
            assert_eq!(spec.eval([0.0, 0.0]), [0.0, 0.0]);
            let x = [rand::Rng::random_range(&mut r, -4.0..4.0), rand::Rng::random_range(&mut r, -4.0..4.0)];
            // independent path: explicit hidden vector then matrix products
            let hidden: Vec<f64> = spec
                .w_f
                .iter()
                .map(|w| libm_tanh(w[0] * x[0] + w[1] * x[1]))
                .collect();
            for c in 0..2 {
                let lin = spec.a[c][0] * x[0] + spec.a[c][1] * x[1];
                let pert: f64 = spec.beta_f[c].iter().zip(&hidden).map(|(b, h)| b * h).sum();
                assert!((spec.eval(x)[c] - (lin + pert)).abs() < 1e-12);
            }
            let round = Family1Spec::from_values(&spec.to_values()).unwrap();
            assert_eq!(round, spec);
        }
    }

    fn libm_tanh(x: f64) -> f64 {
        let e = (2.0 * x).exp();
        (e - 1.0) / (e + 1.0)
    }

    #[test]
    fn family1_without_perturbation_is_linear() {
        let mut spec = gen_family1(&mut rng::stream(23, 0)).unwrap();
        spec.beta_f = [[0.0; PERTURBATION_WIDTH]; 2];
        let x = [1.25, -0.5];
        let a = spec.a;
        assert_eq!(
            spec.eval(x),
            [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
        );
    }

    #[test]
    fn family2_hand_values() {
        let spec = Family2Spec { c: [2.0, 0.0, 1.0, 0.0] };
        let x = [1.0, 1.0];
        assert!((spec.lyapunov(x) - 1.5).abs() < 1e-15);
        assert!((spec.lie_derivative(x) - -1.0).abs() < 1e-15);
        let g = spec.lyapunov_gradient(x);
        let f = spec.eval(x);
        assert!((g[0] * f[0] + g[1] * f[1] - -1.0).abs() < 1e-15);
    }

    #[test]
    fn family2_lie_derivative_identity() {
        let mut r = rng::stream(24, 0);
        for _ in 0..20 {
            let spec = gen_family2(&mut r);
            assert!(spec.c.iter().all(|c| (0.0..=5.0).contains(c)));
            assert_eq!(spec.lie_derivative([0.7, 0.0]), 0.0);
            for _ in 0..500 {
                let x = [rand::Rng::random_range(&mut r, -4.0..4.0), rand::Rng::random_range(&mut r, -4.0..4.0)];
                let g = spec.lyapunov_gradient(x);
                let f = spec.eval(x);
                let vdot = g[0] * f[0] + g[1] * f[1];
                let closed = spec.lie_derivative(x);
                assert!((vdot - closed).abs() < 1e-9);
                assert!(closed <= -spec.c[2] * x[1] * x[1] + 1e-12);
            }
        }
    }

    #[test]
    fn log_cosh_is_stable() {
        for x in [0.0f64, 0.3, -2.0, 15.0, -800.0] {
            let direct = if x.abs() < 20.0 { x.cosh().ln() } else { x.abs() - core::f64::consts::LN_2 };
            assert!((log_cosh(x) - direct).abs() < 1e-12, "{x}");
        }
    }
}
