use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("field length {got} does not match lattice size {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("value {value} at site {site} outside [{lo}, {hi}]")]
    OutOfRange {
        site: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("absorbing state: total event rate is zero")]
    Absorbing,

    #[error("time step {dt:e} fell below the floor {floor:e}")]
    StepTooSmall { dt: f64, floor: f64 },

    #[error("state space of 4^{sites} states exceeds the budget of {budget} sites")]
    StateSpaceTooLarge { sites: usize, budget: usize },

    #[error("reference measure has zero weight at state {0}")]
    ZeroReference(usize),

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
