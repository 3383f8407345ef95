//! Numerical toolkit for difference equations with infinite delay.
//!
//! The crate builds the weighted history space in which delay equations
//! become first-order systems, steps linear and semilinear flows, constructs
//! exponential-dichotomy projections with Green-operator bounds, certifies
//! the summability condition `K(1) q < 1`, and - when certified - computes
//! the conjugacy between the linear and semilinear flows along linear orbits
//! by Picard iteration, with every reported residual accompanied by an
//! explicit error budget (Picard, operator-sum tail, window truncation).
//!
//! The `harness` module and the `delin` binary drive these pieces from a
//! TOML configuration: `simulate`, `certify`, `conjugate`, `verify`, and
//! `sweep` subcommands emit machine-readable JSON reports plus CSV tables.

pub mod conjugacy;
pub mod delay_system;
pub mod dichotomy;
pub mod error;
pub mod evolution;
pub mod harness;
pub mod phase_space;
pub mod sampling;

pub use error::{Error, Result};
