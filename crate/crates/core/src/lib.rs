//! Numerical toolkit for weighted square-function and wave-envelope estimates
//! attached to the truncated parabola, built on a periodic torus model.

pub mod decomp;
pub mod envelope;
pub mod error;
pub mod families;
pub mod geometry;
pub mod measures;
pub mod profiles;
pub mod schrodinger;
pub mod torus;

pub use error::{Error, Result};
