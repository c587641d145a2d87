use crate::dynamics::State;
use crate::grid::{GridField, LYAPUNOV_CHANNEL};
use crate::lyapunov::Certificate;

/// How `∇V` is obtained at grid points.
#[derive(Clone, Copy)]
pub enum GradientSource<'a> {
    /// Central differences of the sampled channel, one-sided on the border.
    CentralDifference,
    /// An exact gradient, for candidates known in closed form.
    Analytic(&'a dyn Fn(State) -> [f64; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovCheck {
    pub certificate: Certificate,
    /// Point with the smallest `V` and that value.
    pub worst_value: Option<(State, f64)>,
    /// Point with the largest `V̇` and that value.
    pub worst_decrease: Option<(State, f64)>,
}

impl LyapunovCheck {
    pub fn positive_fraction(&self) -> f64 {
        fraction(self.certificate.positive, self.certificate.checked)
    }

    pub fn decreasing_fraction(&self) -> f64 {
        fraction(self.certificate.decreasing, self.certificate.checked)
    }
}

fn fraction(n: usize, d: usize) -> f64 {
    if d == 0 {
        1.0
    } else {
        n as f64 / d as f64
    }
}

/// Checks `V > 0` and `∇V·f < 0` at grid points with `‖x‖ > exclusion_radius`,
/// reading `V` from the field's Lyapunov channel.
pub fn lyapunov_grid_check<F>(
    v_field: &GridField,
    field: F,
    exclusion_radius: f64,
    gradient: GradientSource<'_>,
) -> LyapunovCheck
where
    F: Fn(State) -> State,
{
    let spec = *v_field.spec();
    let g = spec.resolution;
    let v = v_field.channel(LYAPUNOV_CHANNEL);
    let at = |i: usize, j: usize| v[i * g + j];
    let fd_gradient = |i: usize, j: usize| -> [f64; 2] {
        let (jl, jr) = (j.saturating_sub(1), (j + 1).min(g - 1));
        let (il, ir) = (i.saturating_sub(1), (i + 1).min(g - 1));
        [
            (at(i, jr) - at(i, jl)) / ((jr - jl) as f64 * spec.dx()),
            (at(ir, j) - at(il, j)) / ((ir - il) as f64 * spec.dy()),
        ]
    };

    let mut cert = Certificate::default();
    let mut worst_value: Option<(State, f64)> = None;
    let mut worst_decrease: Option<(State, f64)> = None;
    for i in 0..g {
        for j in 0..g {
            let x = spec.point(i, j);
            if x[0].hypot(x[1]) <= exclusion_radius {
                continue;
            }
            let grad = match gradient {
                GradientSource::CentralDifference => fd_gradient(i, j),
                GradientSource::Analytic(f) => f(x),
            };
            let f = field(x);
            let vdot = grad[0] * f[0] + grad[1] * f[1];
            let value = at(i, j);
            cert.checked += 1;
            cert.positive += (value > 0.0) as usize;
            cert.decreasing += (vdot < 0.0) as usize;
            cert.both += (value > 0.0 && vdot < 0.0) as usize;
            if worst_value.is_none_or(|(_, w)| value < w) {
                worst_value = Some((x, value));
            }
            if worst_decrease.is_none_or(|(_, w)| vdot > w) {
                worst_decrease = Some((x, vdot));
            }
        }
    }
    LyapunovCheck { certificate: cert, worst_value, worst_decrease }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{closed_loop, Benchmark};
    use crate::grid::{GridSpec, LYAPUNOV_CHANNEL};
    use crate::lyapunov::{build_dataset, DatasetConfig};

    fn quadratic(spec: GridSpec) -> GridField {
        let mut field = GridField::zeros(spec);
        for k in 0..spec.len() {
            let x = spec.point_at(k);
            field.channel_mut(LYAPUNOV_CHANNEL)[k] = 0.5 * (x[0] * x[0] + x[1] * x[1]);
        }
        field
    }

    #[test]
    fn canonical_pair_passes() {
        let v = quadratic(GridSpec::square(2.0, 16));
        let check = lyapunov_grid_check(&v, |x| [-x[0], -x[1]], 0.2, GradientSource::CentralDifference);
        assert_eq!(check.positive_fraction(), 1.0);
        assert_eq!(check.decreasing_fraction(), 1.0);
        assert!(check.worst_decrease.unwrap().1 < 0.0);
    }

    #[test]
    fn sign_flip_fails_everywhere() {
        let v = quadratic(GridSpec::square(2.0, 16));
        let check = lyapunov_grid_check(&v, |x| x, 0.2, GradientSource::CentralDifference);
        assert_eq!(check.decreasing_fraction(), 0.0);
        assert_eq!(check.positive_fraction(), 1.0);
    }

    #[test]
    fn central_differences_are_exact_for_quadratics_inside() {
        // on the border the one-sided difference is off by h/2, but signs survive
        let v = quadratic(GridSpec::square(2.0, 8));
        let exact = |x: State| [x[0], x[1]];
        let fd = lyapunov_grid_check(&v, |x| [-x[0], -x[1]], 0.0, GradientSource::CentralDifference);
        let an = lyapunov_grid_check(&v, |x| [-x[0], -x[1]], 0.0, GradientSource::Analytic(&exact));
        assert_eq!(fd.certificate, an.certificate);
    }

    #[test]
    fn second_order_records_pass_with_exact_gradients() {
        let cfg = DatasetConfig { n1: 0, n2: 8, grid: GridSpec::square(4.0, 16), seed: 3, ..Default::default() };
        for r in build_dataset(&cfg).unwrap().records {
            let grad = |x: State| r.spec.lyapunov_gradient(x);
            let check = lyapunov_grid_check(&r.field, |x| r.spec.vector_field(x), 0.2, GradientSource::Analytic(&grad));
            assert_eq!(check.positive_fraction(), 1.0);
            assert_eq!(check.decreasing_fraction(), 1.0);
        }
    }

    #[test]
    fn closed_loop_energy_for_pendulum() {
        // V = ½‖x‖² is not a Lyapunov function for the controlled pendulum
        // everywhere, but V > 0 holds by construction
        let sys = Benchmark::Pendulum.instantiate(crate::rng::stream(0, 0));
        let p = Benchmark::Pendulum.reported_controller();
        let v = quadratic(GridSpec::square(2.0, 16));
        let check = lyapunov_grid_check(&v, |x| closed_loop(&sys, &p, x), 0.2, GradientSource::CentralDifference);
        assert_eq!(check.positive_fraction(), 1.0);
        assert!(check.decreasing_fraction() < 1.0);
    }
}
