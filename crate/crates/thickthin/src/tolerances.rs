//! Numerical tolerances shared across modules.

/// Absolute acceptance threshold for adaptive quadrature.
pub const QUAD_ABS: f64 = 1e-12;
/// Relative acceptance threshold for adaptive quadrature.
pub const QUAD_REL: f64 = 1e-10;
/// Maximum interval bisection depth before quadrature gives up.
pub const QUAD_MAX_DEPTH: u32 = 24;

/// Relative slack on every inequality margin (axioms, decay bounds).
pub const MARGIN_REL: f64 = 0.02;

/// Oracle agreement for closed-form paths.
pub const ORACLE_CLOSED_REL: f64 = 1e-8;
/// Oracle agreement for quadrature paths.
pub const ORACLE_QUAD_REL: f64 = 1e-5;

/// Safety factor in L0 = (1 + EPS_L) max{...}.
pub const EPS_L: f64 = 0.01;

/// Ceiling on the reported K0 for normalization cases 2 and 3.
pub const K0_CEILING: f64 = 1e3;

/// Relative tolerance on the thick + thin mass partition.
pub const MASS_PARTITION_REL: f64 = 0.01;

/// Tolerance on mass identities of generated densities.
pub const GENERATOR_MASS_REL: f64 = 0.01;

/// Geometric ratio of radius sweeps.
pub const SWEEP_RATIO: f64 = 1.05;
