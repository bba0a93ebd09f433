//! Classical emulation of nonclassical optical states by signed mixtures of
//! coherent-state probes.
//!
//! [`decompose`] finds the signed coefficients, [`sampler`] turns them into a
//! Monte Carlo estimator, [`noon`] builds two-mode NOON representations and
//! [`experiments`] runs the witness, Hong-Ou-Mandel, phase-scan and Bell studies.

pub mod cli;
pub mod decompose;
pub mod error;
pub mod experiments;
pub mod fock;
mod lp;
pub mod noon;
pub mod optim;
pub mod sampler;

pub use error::{Error, Result};

/// Library version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
