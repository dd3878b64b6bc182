use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("fields live on different domains")]
    DomainMismatch,

    #[error("grid shape mismatch: expected {expected} samples, got {got}")]
    GridShape { expected: usize, got: usize },

    #[error("matrix is not symmetric (max defect {defect:e})")]
    NotSymmetric { defect: f64 },

    #[error("negative occupation {value} at index {index}")]
    NegativeOccupation { index: usize, value: f64 },

    #[error("argument {value} outside the domain of {what}")]
    OutOfDomain { what: &'static str, value: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("potential is negative on the grid (min {min:e})")]
    NegativePotential { min: f64 },

    #[error("occupation constraint unattainable: {0}")]
    ConstraintUnattainable(String),

    #[error("Gram-Schmidt lost rank at orbital {index}")]
    RankLoss { index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
