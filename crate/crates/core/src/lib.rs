//! Entropy-stable, positivity-preserving DG discretizations of the Euler
//! equations with knapsack-limited subcell blending.

pub mod error;
pub mod euler;
pub mod experiments;
pub mod knapsack;
pub mod mesh;
pub mod operators;
pub mod rhs;
pub mod timestep;

pub use error::{Error, Result};
