//! Contraction of convex hypersurfaces by nonhomogeneous curvature speeds `Φ(F)`.
//!
//! The crate evaluates symmetric speed functions and scalar profiles, checks
//! their structural conditions, evolves axisymmetric convex hypersurfaces by
//! their support function, monitors the pinching quantities preserved by the
//! flow, and rescales the solution against the shrinking sphere.

pub mod curvature;
pub mod flow;
pub mod error;
pub mod geometry;
pub mod io;
pub mod monitors;
pub mod oracle;
pub mod quadrature;
pub mod speed;

pub use error::{Error, Result};
