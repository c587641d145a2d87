//! Training pairs of stable vector fields and Lyapunov functions.
//!
//! Family 1 draws a Hurwitz-linear field with a small tanh perturbation and
//! fits a tanh-network Lyapunov function to it, keeping only candidates that
//! pass a grid certificate. Family 2 is a damped second-order system with a
//! closed-form energy function.

mod families;
mod neural;

use alloc::vec::Vec;

pub use families::{
    gen_family1, gen_family2, is_hurwitz, log_cosh, sample_hurwitz, Family1Spec, Family2Spec, Mat2,
    HURWITZ_MAX_DRAWS, PERTURBATION_WIDTH,
};
pub use neural::{certify, train_neural_lyapunov, Certificate, LyapunovFit, LyapunovNet, LyapunovTrainConfig};

use crate::dynamics::State;
use crate::grid::{GridField, GridSpec, NormCodec, LYAPUNOV_CHANNEL};
use crate::rng;
use crate::{Error, Result};

/// Candidates tried per family-1 record before giving up; zero acceptances
/// in this window means the acceptance rate is below 1%.
pub const ACCEPTANCE_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Perturbed,
    SecondOrder,
}

impl Family {
    pub fn tag(self) -> u8 {
        match self {
            Self::Perturbed => 1,
            Self::SecondOrder => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Self::Perturbed),
            2 => Some(Self::SecondOrder),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordSpec {
    Perturbed { system: Family1Spec, lyapunov: LyapunovNet },
    SecondOrder(Family2Spec),
}

impl RecordSpec {
    pub fn family(&self) -> Family {
        match self {
            Self::Perturbed { .. } => Family::Perturbed,
            Self::SecondOrder(_) => Family::SecondOrder,
        }
    }

    pub fn vector_field(&self, x: State) -> State {
        match self {
            Self::Perturbed { system, .. } => system.eval(x),
            Self::SecondOrder(s) => s.eval(x),
        }
    }

    /// Unshifted Lyapunov value.
    pub fn lyapunov(&self, x: State) -> f64 {
        match self {
            Self::Perturbed { lyapunov, .. } => lyapunov.value(x),
            Self::SecondOrder(s) => s.lyapunov(x),
        }
    }

    pub fn lyapunov_gradient(&self, x: State) -> [f64; 2] {
        match self {
            Self::Perturbed { lyapunov, .. } => lyapunov.gradient(x),
            Self::SecondOrder(s) => s.lyapunov_gradient(x),
        }
    }

    pub fn lie_derivative(&self, x: State) -> f64 {
        let g = self.lyapunov_gradient(x);
        let f = self.vector_field(x);
        g[0] * f[0] + g[1] * f[1]
    }

    /// Number of `f64` spec values for a family, given the Lyapunov width.
    pub fn value_count(family: Family, hidden: usize) -> usize {
        match family {
            Family::Perturbed => Family1Spec::VALUES + 4 * hidden,
            Family::SecondOrder => Family2Spec::VALUES,
        }
    }

    pub fn to_values(&self) -> Vec<f64> {
        match self {
            Self::Perturbed { system, lyapunov } => {
                let mut v = system.to_values();
                v.extend(lyapunov.to_params());
                v
            }
            Self::SecondOrder(s) => s.c.to_vec(),
        }
    }

    pub fn from_values(family: Family, hidden: usize, values: &[f64]) -> Result<Self> {
        let expected = Self::value_count(family, hidden);
        if values.len() != expected {
            return Err(Error::Shape { expected, found: values.len() });
        }
        Ok(match family {
            Family::Perturbed => {
                let (sys, net) = values.split_at(Family1Spec::VALUES);
                Self::Perturbed {
                    system: Family1Spec::from_values(sys)?,
                    lyapunov: LyapunovNet::from_params(hidden, net)?,
                }
            }
            Family::SecondOrder => Self::SecondOrder(Family2Spec::from_values(values)?),
        })
    }

    /// Samples `(f1, f2, V)` on the grid, shifts `V` so its grid minimum is
    /// nonnegative and rounds every channel to `f32`.
    pub fn sample_field(&self, spec: &GridSpec) -> Result<GridField> {
        let mut field = GridField::zeros(*spec);
        let g = spec.resolution;
        let n = g * g;
        let data = field.as_mut_slice();
        for i in 0..g {
            for j in 0..g {
                let x = spec.point(i, j);
                let f = self.vector_field(x);
                let k = i * g + j;
                data[k] = f[0];
                data[n + k] = f[1];
                data[2 * n + k] = self.lyapunov(x);
            }
        }
        let v = field.channel_mut(LYAPUNOV_CHANNEL);
        let low = v.iter().copied().fold(f64::INFINITY, f64::min);
        if low < 0.0 {
            v.iter_mut().for_each(|x| *x -= low);
        }
        field.quantize_f32();
        if let Some(index) = field.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "dataset record", index });
        }
        Ok(field)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub spec: RecordSpec,
    pub field: GridField,
    /// Master seed and record index; the record's stream is `rng::stream(seed, index)`.
    pub seed: u64,
    pub index: u64,
    /// Family-1 candidates drawn before one was certified (1 for family 2).
    pub attempts: usize,
}

impl DatasetRecord {
    pub fn family(&self) -> Family {
        self.spec.family()
    }

    /// Analytic certificate: `V > 0` and `∇V·f < 0` off the exclusion ball.
    pub fn certificate(&self, exclusion_radius: f64) -> Certificate {
        certify(self.field.spec(), exclusion_radius, |x| (self.spec.lyapunov(x), self.spec.lie_derivative(x)))
    }

    /// Largest deviation over the grid between `∇V·f` and the closed form
    /// `−x2 (c3 x2 + c4 tanh x2)`, together with the largest excess over the
    /// bound `−c3 x2²`. `None` for family 1.
    pub fn second_order_residuals(&self) -> Option<(f64, f64)> {
        let RecordSpec::SecondOrder(s) = &self.spec else {
            return None;
        };
        let spec = self.field.spec();
        let mut identity = 0.0f64;
        let mut bound = f64::NEG_INFINITY;
        for g in 0..spec.len() {
            let x = spec.point_at(g);
            let vdot = self.spec.lie_derivative(x);
            identity = identity.max((vdot - s.lie_derivative(x)).abs());
            bound = bound.max(vdot + s.c[2] * x[1] * x[1]);
        }
        Some((identity, bound))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DatasetConfig {
    pub n1: usize,
    pub n2: usize,
    pub grid: GridSpec,
    pub seed: u64,
    pub lyapunov: LyapunovTrainConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n1: 1000, n2: 1000, grid: GridSpec::default(), seed: 0, lyapunov: LyapunovTrainConfig::default() }
    }
}

impl DatasetConfig {
    pub fn len(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds record `index`; indices below `n1` are family 1, the rest family 2.
/// Depends only on `(config, index)`, so records can be built in any order.
pub fn generate_record(config: &DatasetConfig, index: usize) -> Result<DatasetRecord> {
    config.grid.validate()?;
    let mut rng = rng::stream(config.seed, index as u64);
    let (spec, attempts) = if index < config.n1 {
        let mut found = None;
        for attempt in 1..=ACCEPTANCE_WINDOW {
            let system = gen_family1(&mut rng)?;
            let fit = train_neural_lyapunov(|x| system.eval(x), &config.grid, &config.lyapunov, &mut rng)?;
            if let Some(lyapunov) = fit.net() {
                found = Some((RecordSpec::Perturbed { system, lyapunov }, attempt));
                break;
            }
            log::debug!("record {index}: candidate {attempt} rejected");
        }
        found.ok_or(Error::AcceptanceRate { accepted: 0, attempted: ACCEPTANCE_WINDOW })?
    } else {
        (RecordSpec::SecondOrder(gen_family2(&mut rng)), 1)
    };
    let field = spec.sample_field(&config.grid)?;
    Ok(DatasetRecord { spec, field, seed: config.seed, index: index as u64, attempts })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub records: Vec<DatasetRecord>,
    pub codec: NormCodec,
}

impl Dataset {
    /// Fits the codec over already generated records (in index order).
    pub fn assemble(config: DatasetConfig, records: Vec<DatasetRecord>) -> Result<Self> {
        if records.len() != config.len() {
            return Err(Error::Shape { expected: config.len(), found: records.len() });
        }
        let codec = NormCodec::fit(records.iter().map(|r| &r.field))?;
        Ok(Self { config, records, codec })
    }

    /// Fraction of family-1 candidates that were certified.
    pub fn acceptance_rate(&self) -> Option<f64> {
        let tried: usize = self.records.iter().filter(|r| r.family() == Family::Perturbed).map(|r| r.attempts).sum();
        (tried > 0).then(|| self.config.n1 as f64 / tried as f64)
    }
}

/// Serial dataset build.
pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    let records = (0..config.len()).map(|i| generate_record(config, i)).collect::<Result<Vec<_>>>()?;
    Dataset::assemble(config.clone(), records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n1: usize, n2: usize, seed: u64) -> DatasetConfig {
        DatasetConfig { n1, n2, grid: GridSpec::square(4.0, 16), seed, ..Default::default() }
    }

    #[test]
    fn family_tags_round_trip() {
        for f in [Family::Perturbed, Family::SecondOrder] {
            assert_eq!(Family::from_tag(f.tag()), Some(f));
        }
        assert_eq!(Family::from_tag(0), None);
    }

    #[test]
    fn second_order_records_satisfy_identity() {
        let ds = build_dataset(&small(0, 10, 4)).unwrap();
        assert_eq!(ds.records.len(), 10);
        for r in &ds.records {
            let (identity, bound) = r.second_order_residuals().unwrap();
            assert!(identity <= 1e-9, "{identity}");
            assert!(bound <= 1e-9, "{bound}");
            assert!(r.field.channel(LYAPUNOV_CHANNEL).iter().all(|v| *v >= 0.0));
            assert_eq!(r.spec.lyapunov([0.0, 0.0]), 0.0);
        }
    }

    #[test]
    fn perturbed_records_carry_certificates() {
        let cfg = small(3, 0, 5);
        let ds = build_dataset(&cfg).unwrap();
        for r in &ds.records {
            assert_eq!(r.family(), Family::Perturbed);
            assert!(r.certificate(cfg.lyapunov.exclusion_radius).passes(0.99));
            let v = r.field.channel(LYAPUNOV_CHANNEL);
            assert!(v.iter().all(|x| *x >= 0.0));
        }
        assert!(ds.acceptance_rate().unwrap() > 0.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small(2, 3, 6);
        let a = build_dataset(&cfg).unwrap();
        let b = build_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        // out-of-order generation yields the same record
        assert_eq!(generate_record(&cfg, 4).unwrap(), a.records[4]);
    }

    #[test]
    fn spec_values_round_trip() {
        let ds = build_dataset(&small(1, 1, 7)).unwrap();
        for r in &ds.records {
            let values = r.spec.to_values();
            assert_eq!(values.len(), RecordSpec::value_count(r.family(), 20));
            assert_eq!(RecordSpec::from_values(r.family(), 20, &values).unwrap(), r.spec);
            assert_eq!(r.spec.sample_field(r.field.spec()).unwrap(), r.field);
        }
    }

    #[test]
    fn fields_are_f32_exact() {
        let ds = build_dataset(&small(0, 2, 8)).unwrap();
        for r in &ds.records {
            assert!(r.field.as_slice().iter().all(|v| (*v as f32) as f64 == *v));
        }
    }
}
