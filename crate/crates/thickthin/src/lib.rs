//! Thick-thin measures on constant-curvature surfaces.
//!
//! The crate discretizes a measured Riemann surface on a conformal
//! cylinder grid, checks the gradient and cylinder inequalities, normalizes
//! genus-0 inputs by a Möbius map, finds long necks and assembles a maximal
//! decomposition into thin annuli and stable thick pieces, then audits it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod axioms;
pub mod decomposer;
pub mod error;
pub mod field;
pub mod geometry;
pub mod quadrature;
pub mod spherenorm;
pub mod surface;
pub mod tolerances;
pub mod topology;
pub mod verifier;

pub use error::{Error, Result};
