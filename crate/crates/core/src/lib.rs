//! Numerical toolkit for linear cooperative systems `x' = A(t) x`.
//!
//! * [`model`]: time-varying coefficient matrices, orthant classification
//!   and the Metzler (cooperativity) predicate.
//! * [`integrator`]: forward Runge–Kutta solves with dense output and an
//!   augmented channel carrying `∫ trace A`.
//! * [`certificates`]: the coordinate-product certificate
//!   `ξ(t) ≥ ξ(t₀) exp(∫ trace A)` and direct checks of orthant invariance.
//! * [`oracles`]: matrix exponential, small-time sign probes and the
//!   strongly cooperative ε-approximation.
//! * [`generator`]: seeded generation of systems and initial states.
//! * [`cli`]: scenario files, reports and the `coop-odes` command line.

pub mod certificates;
pub mod cli;
pub mod error;
pub mod generator;
pub mod integrator;
pub mod model;
pub mod oracles;
mod serde_float;

pub use error::{Error, Result};
