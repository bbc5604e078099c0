use thiserror::Error;

/// Errors raised by the model, integrator, certificate and oracle layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("time {t} lies outside the open window ({a}, {b})")]
    TimeOutOfWindow { t: f64, a: f64, b: f64 },

    #[error("time {t} lies outside the trajectory range [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("invalid time window: {0}")]
    InvalidWindow(String),

    #[error("invalid coefficient matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("integration end {t_end} precedes initial time {t0}; only forward integration is supported")]
    BackwardIntegration { t0: f64, t_end: f64 },

    #[error("step limit of {max_steps} exceeded at t = {t}")]
    StepLimitExceeded { max_steps: usize, t: f64 },

    #[error("adaptive step {h:e} fell below the minimum step at t = {t}")]
    StepUnderflow { t: f64, h: f64 },

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("reports were generated from different systems")]
    MixedSystems,
}

pub type Result<T> = std::result::Result<T, Error>;
