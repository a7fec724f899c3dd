use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("infinite modulus: inner radius is zero")]
    InfiniteModulus,
    #[error("quadrature did not reach tolerance on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },
    #[error("refinement requested: {0}")]
    Refinement(String),
    #[error("region is not connected")]
    Disconnected,
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("annulus of modulus {modulus} is too short for a window trimmed by {trim} at each end")]
    Window { modulus: f64, trim: f64 },
    #[error("degenerate trim: modulus {modulus} does not exceed {trim}")]
    DegenerateTrim { modulus: f64, trim: f64 },
    #[error("sphere normalization failed: {0}")]
    Normalization(String),
    #[error("construction audit failed: {0}")]
    Audit(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
