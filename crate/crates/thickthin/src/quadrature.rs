//! Adaptive one-dimensional quadrature.
//!
//! Tanh-sinh rules from the `quadrature` crate, bisected until the error
//! estimate falls below `max(QUAD_ABS, QUAD_REL * |I|)`.

use crate::tolerances::{QUAD_ABS, QUAD_MAX_DEPTH, QUAD_REL};
use crate::{Error, Result};

/// Integrate `f` over `[a, b]` to the crate tolerances.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("non-finite bounds [{a}, {b}]")));
    }
    if a > b {
        return integrate(f, b, a).map(|v| -v);
    }
    bisect(&f, a, b, QUAD_MAX_DEPTH)
}

fn bisect<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, depth: u32) -> Result<f64> {
    let out = quadrature::integrate(f, a, b, QUAD_ABS);
    let tol = QUAD_ABS.max(QUAD_REL * out.integral.abs());
    if out.error_estimate <= tol && out.integral.is_finite() {
        return Ok(out.integral);
    }
    if depth == 0 {
        return Err(Error::Quadrature { a, b });
    }
    let m = 0.5 * (a + b);
    Ok(bisect(f, a, m, depth - 1)? + bisect(f, m, b, depth - 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| 3.0 * x * x, 0.0, 2.0).unwrap();
        assert!((v - 8.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_bounds_flip_sign() {
        let v = integrate(f64::cos, 1.0, 0.0).unwrap();
        assert!((v + 1f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn sharp_peak() {
        let v = integrate(|x| 1.0 / (1.0 + 1e4 * x * x), -1.0, 1.0).unwrap();
        assert!((v - 0.02 * 100f64.atan()).abs() < 1e-12);
    }
}
