//! Numerical laboratory for cutoff of the geodesic flow and Brownian motion
//! on compact hyperbolic manifolds.

pub mod error;
pub mod harness;
pub mod hypgeom;
pub mod multiplier;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod spectral;
pub mod surface;

pub use error::{Error, Result};
