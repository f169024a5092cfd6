//! Numerical laboratory for coarse-grained stochastic homogenization of
//! divergence-form elliptic equations on triadic lattices.

pub mod cli;
pub mod coarsegrain;
pub mod ergodic;
pub mod error;
pub mod fields;
pub mod homexp;
pub mod linalg;
pub mod norms;
pub mod solver;
pub mod stats;
pub mod triadic;

pub use error::{HomError, Result};
