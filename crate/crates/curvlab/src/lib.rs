//! Numerical laboratory for the curvature energy norm of non-Euclidean
//! elastic bodies.
//!
//! The crate computes the norm of a Riemann curvature tensor as the square
//! root of the minimum of a linearized pure-traction elastic energy on the
//! unit ball, and verifies the quartic scaling law of the nonlinear
//! incompatible elastic energy on shrinking balls and tubes by direct
//! minimization.
//!
//! Module map:
//!
//! * [`curvature`] — curvature tensors, their symmetry algebra, the induced
//!   quadratic strain field and the Saint-Venant recovery identity.
//! * [`geometry`] — metric models on balls in normal coordinates, ball
//!   moments and the identity-map energy coefficient.
//! * [`norm`] — the curvature norm via exact polynomial least squares.
//! * [`quadrature`] — Gauss rules on balls and tubes.
//! * [`energy`] — the nonlinear elastic energy and its minimization.
//! * [`scaling`] — batch scaling experiments, exponent fits and reports.

pub mod curvature;
pub mod energy;
pub mod geometry;
pub mod norm;
pub mod poly;
pub mod quadrature;
pub mod scaling;

mod error;
mod optim;

pub use error::{Error, Result};
