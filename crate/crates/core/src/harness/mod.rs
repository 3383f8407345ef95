//! Configuration-driven front end: TOML experiment definitions in, JSON
//! reports and CSV tables out.
//!
//! Exit-code contract of the CLI built on top of this module:
//! 0 = all checks passed, 2 = a hypothesis or verdict failed,
//! 1 = usage or configuration error.

pub mod config;
pub mod report;
pub mod run;

pub use config::{Config, SweepParameter};
pub use report::{Report, Verdict};
pub use run::{cmd_certify, cmd_conjugate, cmd_simulate, cmd_sweep, cmd_verify, RunOptions};
