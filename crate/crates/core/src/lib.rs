//! Certification and simulation toolkit for 3-dimensional strongly
//! 2-cooperative systems.
//!
//! The pipeline checks that a vector field on a box has a Jacobian sign
//! structure making it strongly 2-cooperative, that its unique equilibrium
//! is an unstable saddle with `det J(e) < 0`, and then builds an
//! equilibrium-free invariant set from which every solution converges to a
//! periodic orbit. The `sim` module integrates trajectories and detects the
//! orbits numerically.

pub mod certify;
pub mod error;
pub mod expr;
pub mod mat3;
pub mod models;
pub mod parallel;
pub mod signpat;
pub mod signvar;
pub mod sim;

pub use error::{Error, Result};
