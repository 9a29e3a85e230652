use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("matrix is not symmetric: |m[{row}][{col}] - m[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sample size {n} exceeds population size {population}")]
    SampleTooLarge { n: usize, population: usize },

    #[error("no respondents in the sample")]
    NoRespondents,

    #[error("response probability {phi} of unit {unit} is degenerate (must lie in (0, 1))")]
    DegenerateResponseProbability { unit: usize, phi: f64 },

    #[error("flight phase: no usable step length at step {step} (degenerate direction)")]
    DegenerateDirection { step: usize },

    #[error("flight phase did not terminate within {limit} steps")]
    FlightStalled { limit: usize },

    #[error("rejective sampling: no sample of size {n} after {attempts} attempts")]
    RejectiveStalled { n: usize, attempts: usize },
}
