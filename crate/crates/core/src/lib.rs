//! Active-subspace sensitivity analysis with region-wise stability diagnostics.
//!
//! The crate estimates the active subspace of a scalar quantity of interest
//! from sampled gradients, ranks parameters by activity scores, and measures
//! how far subspaces computed on local sub-boxes drift from the one computed
//! over the whole admissible box. Morris screening and Sobol' indices are
//! provided as comparators, together with the two downstream experiments
//! (subset-restricted calibration and reduced-dimension surrogates).

pub mod activesub;
pub mod calibration;
pub mod error;
pub mod gradients;
pub mod gsa;
pub mod linalg;
pub mod models;
pub mod ranking;
pub mod sampling;
pub mod stability;
pub mod surrogate;

pub use error::{Error, Result};
