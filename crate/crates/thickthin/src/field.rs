//! Closed-form density fields.
//!
//! Densities are with respect to the area form of the surface model: the
//! round unit sphere, the unit-area flat torus, or the hyperbolic collar.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::geometry::{collar_rho, sphere_angle, MetricModel, Point};

/// Rational map `P / Q` with coefficients in ascending degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalMap {
    pub num: Vec<Complex64>,
    pub den: Vec<Complex64>,
}

impl RationalMap {
    pub fn new(num: Vec<Complex64>, den: Vec<Complex64>) -> Self {
        RationalMap { num, den }
    }

    pub fn identity() -> Self {
        RationalMap::new(vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)], vec![Complex64::new(1.0, 0.0)])
    }

    /// `z + eps / z`.
    pub fn bubble(eps: f64) -> Self {
        RationalMap::new(
            vec![Complex64::new(eps, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
            vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
        )
    }

    /// `z / (1 + eta z^2) + eps / z`: bubbles of scale `eps` at `0` and `eta` at infinity.
    pub fn two_bubble(eps: f64, eta: f64) -> Self {
        RationalMap::new(
            vec![Complex64::new(eps, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0 + eps * eta, 0.0)],
            vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(eta, 0.0)],
        )
    }

    /// `(z - i) / (eps (z + i))`: concentrates at `z = i`.
    pub fn upper_bubble(eps: f64) -> Self {
        RationalMap::new(
            vec![Complex64::new(0.0, -1.0), Complex64::new(1.0, 0.0)],
            vec![Complex64::new(0.0, eps), Complex64::new(eps, 0.0)],
        )
    }

    /// `z^k`.
    pub fn power(k: usize) -> Self {
        let mut num = vec![Complex64::new(0.0, 0.0); k + 1];
        num[k] = Complex64::new(1.0, 0.0);
        RationalMap::new(num, vec![Complex64::new(1.0, 0.0)])
    }

    /// `z / s`.
    pub fn scaling(s: f64) -> Self {
        RationalMap::new(vec![Complex64::new(0.0, 0.0), Complex64::new(1.0 / s, 0.0)], vec![Complex64::new(1.0, 0.0)])
    }

    fn trimmed_degree(c: &[Complex64]) -> usize {
        c.iter().rposition(|v| v.norm() != 0.0).unwrap_or(0)
    }

    /// Topological degree `max(deg P, deg Q)` (assumes no common factor).
    pub fn degree(&self) -> usize {
        Self::trimmed_degree(&self.num).max(Self::trimmed_degree(&self.den))
    }

    fn eval(c: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
        let mut p = Complex64::new(0.0, 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for a in c.iter().rev() {
            dp = dp * z + p;
            p = p * z + a;
        }
        (p, dp)
    }

    fn reversed(&self) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = self.degree();
        let pad = |c: &[Complex64]| {
            let mut v = vec![Complex64::new(0.0, 0.0); n + 1];
            for (i, a) in c.iter().enumerate().take(n + 1) {
                v[n - i] = *a;
            }
            v
        };
        (pad(&self.num), pad(&self.den))
    }

    /// Fubini-Study pullback density `|u'|^2 (1+|z|^2)^2 / (1+|u|^2)^2`.
    pub fn fs_density(&self, p: &Point) -> f64 {
        let (num, den, x) = if p.s <= 0.0 {
            let x = if p.s == f64::NEG_INFINITY { Complex64::new(0.0, 0.0) } else { p.stereographic() };
            (self.num.clone(), self.den.clone(), x)
        } else {
            let (n, d) = self.reversed();
            let x = if p.s == f64::INFINITY {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::from_polar((-p.s).exp(), -p.theta)
            };
            (n, d, x)
        };
        let (n, dn) = Self::eval(&num, x);
        let (d, dd) = Self::eval(&den, x);
        let x2 = 1.0 + x.norm_sqr();
        if n.norm() <= d.norm() {
            let f = n / d;
            let df = (dn * d - n * dd) / (d * d);
            let v = df.norm_sqr() * x2 * x2 / (1.0 + f.norm_sqr()).powi(2);
            if v.is_finite() { v } else { 0.0 }
        } else {
            let g = d / n;
            let dg = (dd * n - d * dn) / (n * n);
            let v = dg.norm_sqr() * x2 * x2 / (1.0 + g.norm_sqr()).powi(2);
            if v.is_finite() { v } else { 0.0 }
        }
    }
}

/// Rotation followed by the scaling `z -> z / scale` of the sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereMobius {
    /// Rotation matrix (rows) moving the chosen centre to the pole `z = 0`.
    pub rotation: [[f64; 3]; 3],
    pub scale: f64,
}

impl SphereMobius {
    pub fn identity() -> Self {
        SphereMobius { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], scale: 1.0 }
    }

    /// Rotation taking `p` to the pole `z = 0` along the great circle through both.
    pub fn aligning(p: &Point, scale: f64) -> Self {
        let v = p.unit_vector();
        let e = [0.0, 0.0, 1.0];
        let axis = [v[1] * e[2] - v[2] * e[1], v[2] * e[0] - v[0] * e[2], v[0] * e[1] - v[1] * e[0]];
        let sin_a = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let cos_a = v[2];
        if sin_a < 1e-300 {
            let mut m = SphereMobius::identity();
            if cos_a < 0.0 {
                // half turn about the x-axis keeps the real great circle
                m.rotation = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
            }
            m.scale = scale;
            return m;
        }
        let k = [axis[0] / sin_a, axis[1] / sin_a, axis[2] / sin_a];
        let c = cos_a;
        let s = sin_a;
        let t = 1.0 - c;
        let rotation = [
            [t * k[0] * k[0] + c, t * k[0] * k[1] - s * k[2], t * k[0] * k[2] + s * k[1]],
            [t * k[0] * k[1] + s * k[2], t * k[1] * k[1] + c, t * k[1] * k[2] - s * k[0]],
            [t * k[0] * k[2] - s * k[1], t * k[1] * k[2] + s * k[0], t * k[2] * k[2] + c],
        ];
        SphereMobius { rotation, scale }
    }

    fn apply_rotation(&self, v: &[f64; 3], transpose: bool) -> [f64; 3] {
        let m = &self.rotation;
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..3).map(|j| if transpose { m[j][i] * v[j] } else { m[i][j] * v[j] }).sum();
        }
        out
    }

    /// Image of an old point under `psi`.
    pub fn forward(&self, p: &Point) -> Point {
        let q = point_from_unit_vector(&self.apply_rotation(&p.unit_vector(), false));
        Point { s: q.s - self.scale.ln(), theta: q.theta }
    }

    /// Preimage of a new point under `psi`.
    pub fn inverse(&self, p: &Point) -> Point {
        let q = Point { s: p.s + self.scale.ln(), theta: p.theta };
        point_from_unit_vector(&self.apply_rotation(&q.unit_vector(), true))
    }

    /// `||d psi||` at the old point `x`: `s / (cos^2(rho/2) s^2 + sin^2(rho/2))`.
    pub fn conformal_factor(&self, x: &Point) -> f64 {
        let rotated = point_from_unit_vector(&self.apply_rotation(&x.unit_vector(), false));
        conformal_factor_at(self.scale, rotated.s)
    }
}

/// `||d psi||` at a point with stereographic log-radius `s` about the centre.
pub fn conformal_factor_at(scale: f64, s: f64) -> f64 {
    // tan(rho/2) = e^s; factor = scale (1 + t^2) / (scale^2 + t^2)
    if s <= 0.0 {
        let t2 = (2.0 * s).exp();
        scale * (1.0 + t2) / (scale * scale + t2)
    } else {
        let u2 = (-2.0 * s).exp();
        scale * (u2 + 1.0) / (scale * scale * u2 + 1.0)
    }
}

/// Sphere point of a unit vector with accurate log-radius near both poles.
pub fn point_from_unit_vector(v: &[f64; 3]) -> Point {
    let r = v[0].hypot(v[1]);
    if r == 0.0 {
        return if v[2] >= 0.0 { Point::zero_pole() } else { Point::infinity_pole() };
    }
    let s = if v[2] >= 0.0 { (r / (1.0 + v[2])).ln() } else { ((1.0 - v[2]) / r).ln() };
    Point::new(s, v[1].atan2(v[0]))
}

/// Geodesic exponential map on the unit sphere.
pub fn sphere_exp(p: &Point, rho: f64, phi: f64) -> Point {
    let v = p.unit_vector();
    let helper = if v[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot = helper[0] * v[0] + helper[1] * v[1] + helper[2] * v[2];
    let mut e1 = [helper[0] - dot * v[0], helper[1] - dot * v[1], helper[2] - dot * v[2]];
    let n = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1.iter_mut().for_each(|x| *x /= n);
    let e2 = [v[1] * e1[2] - v[2] * e1[1], v[2] * e1[0] - v[0] * e1[2], v[0] * e1[1] - v[1] * e1[0]];
    let (c, s) = (rho.cos(), rho.sin());
    let (cp, sp) = (phi.cos(), phi.sin());
    let x = [
        c * v[0] + s * (cp * e1[0] + sp * e2[0]),
        c * v[1] + s * (cp * e1[1] + sp * e2[1]),
        c * v[2] + s * (cp * e1[2] + sp * e2[2]),
    ];
    point_from_unit_vector(&x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Field {
    Constant { value: f64 },
    /// Fubini-Study pullback of a rational map (sphere).
    RationalPullback { map: RationalMap },
    /// Background plus Gaussian bumps `amplitude exp(-d^2 / sigma^2)` (sphere).
    SphereBumps { background: f64, amplitude: f64, sigma: f64, centers: Vec<Point> },
    /// Torus band `sech^2(s / width) / width` in cylinder coordinates.
    TorusBand { width: f64 },
    /// Collar density `amplitude cosh(rate s)` in standard cylinder coordinates.
    CollarNeck { amplitude: f64, rate: f64 },
    /// Pullback of `inner` through a normalizing Möbius map.
    Transformed { inner: Box<Field>, mobius: SphereMobius },
    /// `inner` on `0 <= theta <= pi`, reflected by `theta -> -theta`.
    ThetaMirror { inner: Box<Field> },
    /// `inner` on `s >= 0`, reflected by `s -> -s`.
    SMirror { inner: Box<Field> },
}

impl Field {
    pub fn density(&self, model: &MetricModel, p: &Point) -> f64 {
        match self {
            Field::Constant { value } => *value,
            Field::RationalPullback { map } => map.fs_density(p),
            Field::SphereBumps { background, amplitude, sigma, centers } => {
                let v = p.unit_vector();
                background
                    + centers
                        .iter()
                        .map(|c| {
                            let d = sphere_angle(&v, &c.unit_vector());
                            amplitude * (-(d * d) / (sigma * sigma)).exp()
                        })
                        .sum::<f64>()
            }
            Field::TorusBand { width } => {
                let ell = model.lattice_scale().unwrap_or(1.0);
                let lam = ell / TAU;
                let c = (p.s / width).cosh();
                1.0 / (c * c * width) / (lam * lam)
            }
            Field::CollarNeck { amplitude, rate } => {
                let ell = model.collar_length.unwrap_or(1.0);
                let lam = ell * collar_rho(ell, p.s).cosh() / TAU;
                amplitude * (rate * p.s).cosh() / (lam * lam)
            }
            Field::Transformed { inner, mobius } => {
                let x = mobius.inverse(p);
                let k = mobius.conformal_factor(&x);
                inner.density(model, &x) / (k * k)
            }
            Field::ThetaMirror { inner } => {
                let th = if p.theta > std::f64::consts::PI { TAU - p.theta } else { p.theta };
                inner.density(model, &Point { s: p.s, theta: th })
            }
            Field::SMirror { inner } => inner.density(model, &Point { s: p.s.abs(), theta: p.theta }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pullback_is_one() {
        let m = RationalMap::identity();
        for &(s, th) in &[(-3.0, 0.1), (0.0, 2.0), (4.0, -1.0)] {
            assert!((m.fs_density(&Point::new(s, th)) - 1.0).abs() < 1e-12);
        }
        assert!((m.fs_density(&Point::zero_pole()) - 1.0).abs() < 1e-12);
        assert!((m.fs_density(&Point::infinity_pole()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn square_vanishes_at_zero() {
        let m = RationalMap::power(2);
        assert_eq!(m.fs_density(&Point::zero_pole()), 0.0);
        // |2z|^2 (1+|z|^2)^2 / (1+|z|^4)^2 at z = 1
        assert!((m.fs_density(&Point::new(0.0, 0.0)) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn bubble_peak() {
        let eps = 1e-3;
        let m = RationalMap::bubble(eps);
        assert!((m.fs_density(&Point::zero_pole()) - 1.0 / (eps * eps)).abs() < 1e-6 / (eps * eps));
        assert_eq!(m.degree(), 2);
    }

    #[test]
    fn mobius_round_trip() {
        let p = Point::new(0.4, 1.2);
        let m = SphereMobius::aligning(&p, 0.3);
        let img = m.forward(&p);
        assert!(img.s == f64::NEG_INFINITY || img.s < -30.0);
        let q = Point::new(-0.7, 2.5);
        let back = m.inverse(&m.forward(&q));
        assert!(sphere_angle(&back.unit_vector(), &q.unit_vector()) < 1e-12);
    }

    #[test]
    fn unit_vector_round_trip_near_poles() {
        for &s in &[-35.0, -3.0, 0.0, 3.0, 35.0] {
            let p = Point::new(s, 0.7);
            let q = point_from_unit_vector(&p.unit_vector());
            assert!((q.s - s).abs() < 1e-9, "{s} -> {}", q.s);
        }
    }
}
