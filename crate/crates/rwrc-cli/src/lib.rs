//! Config-driven experiment runner for `rwrc`.
//!
//! A run takes one [`ExperimentConfig`], writes a pretty-printed JSON result and
//! zero or more CSV tables beside it. Every file carries the config hash and
//! crate versions; identical configs produce identical bytes.

pub mod config;
pub mod error;
pub mod run;
pub mod slopes;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{CliError, CliResult};
pub use run::{execute, run, Outcome, Table, Written};
pub use slopes::{compare_slopes, SlopeError, SlopePoint, SlopeReport};
