use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration value violates its documented constraint.
    Config(&'static str),
    /// Two containers that must agree in length do not.
    Shape { expected: usize, found: usize },
    /// Fields defined on different grids were combined.
    GridMismatch,
    /// A non-finite value showed up where only finite values are allowed.
    NonFinite { context: &'static str, index: usize },
    /// The dynamics produced a non-finite value at a grid point.
    Evaluation { point: [f64; 2] },
    /// Codec fitting saw no records.
    EmptyDataset,
    /// Codec fitting found a channel that is identically zero.
    ZeroChannel(usize),
    /// Hurwitz rejection sampling ran out of draws.
    HurwitzSampling { draws: usize },
    /// Family-1 candidates were rejected too often.
    AcceptanceRate { accepted: usize, attempted: usize },
    /// A training loop produced a non-finite loss.
    Divergence { step: usize },
    /// A recorded forward pass no longer matches the network parameters.
    StaleTape,
    /// The adaptive integrator could not make progress.
    Integration { t: f64, reason: &'static str },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Shape { expected, found } => {
                write!(f, "shape mismatch: expected {expected} values, found {found}")
            }
            Error::GridMismatch => f.write_str("fields are defined on different grids"),
            Error::NonFinite { context, index } => {
                write!(f, "non-finite value in {context} at index {index}")
            }
            Error::Evaluation { point } => write!(
                f,
                "dynamics evaluated to a non-finite value at ({}, {})",
                point[0], point[1]
            ),
            Error::EmptyDataset => f.write_str("cannot fit a codec on an empty collection"),
            Error::ZeroChannel(c) => write!(f, "channel {c} is identically zero"),
            Error::HurwitzSampling { draws } => {
                write!(f, "no Hurwitz matrix found in {draws} draws")
            }
            Error::AcceptanceRate { accepted, attempted } => write!(
                f,
                "family-1 acceptance rate too low: {accepted} of {attempted} candidates certified"
            ),
            Error::Divergence { step } => write!(f, "loss became non-finite at step {step}"),
            Error::StaleTape => {
                f.write_str("tape was recorded against different network parameters")
            }
            Error::Integration { t, reason } => write!(f, "integration failed at t = {t}: {reason}"),
        }
    }
}

impl core::error::Error for Error {}
