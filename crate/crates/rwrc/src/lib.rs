//! Numerical laboratory for random walks among random conductances.
//!
//! The crate samples conductance fields on finite boxes, simulates the
//! continuous-time walk and its local times, computes Dirichlet eigenvalues and
//! semigroups, minimises the p-energy variational problems that govern the
//! large deviations of the local times, and runs spectral homogenisation
//! experiments for uniformly elliptic environments.

pub mod conductance;
pub mod error;
pub mod homogenise;
pub mod lattice;
pub mod quadrature;
pub mod rng;
pub mod scaling;
pub mod spectrum;
pub mod stats;
pub mod varprob;
pub mod walker;

pub use error::{Error, Result};

/// Crate version, embedded in experiment outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
