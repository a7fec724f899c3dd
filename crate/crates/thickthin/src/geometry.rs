//! Constant-curvature polar geometry.
//!
//! Points live in a conformal cylinder chart `(s, theta)`. On the sphere
//! `z = exp(s + i theta)` is the stereographic coordinate, so `s = -inf` is
//! the pole `z = 0` and `s = +inf` the pole `z = inf`. On a flat torus the
//! chart is `(ell / 2 pi) (theta + i s)` in the plane. On a hyperbolic collar
//! `s` is the standard cylinder coordinate measured from the core geodesic.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::quadrature::integrate;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Curvature {
    Negative,
    Zero,
    Positive,
}

impl TryFrom<i8> for Curvature {
    type Error = Error;
    fn try_from(k: i8) -> Result<Self> {
        match k {
            -1 => Ok(Curvature::Negative),
            0 => Ok(Curvature::Zero),
            1 => Ok(Curvature::Positive),
            _ => Err(Error::Domain(format!("curvature must be -1, 0 or 1, got {k}"))),
        }
    }
}

impl From<Curvature> for i8 {
    fn from(k: Curvature) -> i8 {
        match k {
            Curvature::Negative => -1,
            Curvature::Zero => 0,
            Curvature::Positive => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    UnitAreaFlat,
    UnitCurvatureSphere,
    CurvatureMinusOne,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricModel {
    pub curvature: Curvature,
    pub normalization: Normalization,
    /// Flat torus lattice parameter `(Re tau, Im tau)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<[f64; 2]>,
    /// Core geodesic length of a hyperbolic collar model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collar_length: Option<f64>,
}

impl MetricModel {
    pub fn sphere() -> Self {
        MetricModel {
            curvature: Curvature::Positive,
            normalization: Normalization::UnitCurvatureSphere,
            tau: None,
            collar_length: None,
        }
    }

    /// Unit-area flat torus `C / ell (Z + tau Z)` with `ell = 1 / sqrt(Im tau)`.
    pub fn flat_torus(tau_re: f64, tau_im: f64) -> Result<Self> {
        if !(tau_im > 0.0) || !tau_re.is_finite() {
            return Err(Error::Domain(format!("tau must have positive imaginary part, got {tau_re}+{tau_im}i")));
        }
        Ok(MetricModel {
            curvature: Curvature::Zero,
            normalization: Normalization::UnitAreaFlat,
            tau: Some([tau_re, tau_im]),
            collar_length: None,
        })
    }

    pub fn collar(ell: f64) -> Result<Self> {
        if !(ell > 0.0) {
            return Err(Error::Domain(format!("collar length must be positive, got {ell}")));
        }
        Ok(MetricModel {
            curvature: Curvature::Negative,
            normalization: Normalization::CurvatureMinusOne,
            tau: None,
            collar_length: Some(ell),
        })
    }

    /// Lattice scale `ell`: length of the lattice generator `ell * 1`.
    pub fn lattice_scale(&self) -> Option<f64> {
        self.tau.map(|t| 1.0 / t[1].sqrt())
    }

    /// Total area of the closed model (collar models report the collar area).
    pub fn area(&self) -> f64 {
        match self.curvature {
            Curvature::Positive => 4.0 * PI,
            Curvature::Zero => 1.0,
            Curvature::Negative => {
                let ell = self.collar_length.unwrap_or(1.0);
                2.0 * ell * collar_width(ell).sinh()
            }
        }
    }

    /// Length of the shortest closed geodesic of a flat torus.
    pub fn systole(&self) -> Option<f64> {
        let [re, im] = self.tau?;
        let ell = 1.0 / im.sqrt();
        let mut best = f64::INFINITY;
        for m in -3i32..=3 {
            for n in -3i32..=3 {
                if m == 0 && n == 0 {
                    continue;
                }
                let x = m as f64 + n as f64 * re;
                let y = n as f64 * im;
                best = best.min(ell * x.hypot(y));
            }
        }
        Some(best)
    }

    /// Injectivity radius of the closed model at `p`.
    pub fn injectivity_radius(&self, p: &Point) -> f64 {
        match self.curvature {
            Curvature::Positive => PI,
            Curvature::Zero => 0.5 * self.systole().unwrap_or(1.0),
            Curvature::Negative => {
                let ell = self.collar_length.unwrap_or(1.0);
                let w = collar_width(ell);
                let rho = collar_rho(ell, p.s).abs();
                let d = (w - rho).max(0.0);
                injectivity_in_collar(ell, d).unwrap_or_else(|_| 1f64.asinh())
            }
        }
    }

    pub fn geodesic_distance(&self, p: &Point, q: &Point) -> f64 {
        geodesic_distance(self, p, q)
    }
}

/// A point of the cylinder chart. Infinite `s` marks a sphere pole.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    #[serde(with = "extended_float")]
    pub s: f64,
    pub theta: f64,
}

impl Point {
    pub fn new(s: f64, theta: f64) -> Self {
        Point { s, theta: theta.rem_euclid(TAU) }
    }

    /// Sphere pole `z = 0`.
    pub fn zero_pole() -> Self {
        Point { s: f64::NEG_INFINITY, theta: 0.0 }
    }

    /// Sphere pole `z = inf`.
    pub fn infinity_pole() -> Self {
        Point { s: f64::INFINITY, theta: 0.0 }
    }

    pub fn is_pole(&self) -> bool {
        self.s.is_infinite()
    }

    /// Sphere point at polar distance `rho` from the pole `z = 0`.
    pub fn from_sphere_polar(rho: f64, theta: f64) -> Self {
        let s = if rho <= 0.0 {
            f64::NEG_INFINITY
        } else if rho >= PI {
            f64::INFINITY
        } else {
            (0.5 * rho).tan().ln()
        };
        Point::new(s, theta)
    }

    /// Sphere point from a stereographic coordinate.
    pub fn from_stereographic(z: num_complex::Complex64) -> Self {
        if z.norm() == 0.0 {
            return Point::zero_pole();
        }
        if !z.norm().is_finite() {
            return Point::infinity_pole();
        }
        Point::new(z.norm().ln(), z.arg())
    }

    pub fn stereographic(&self) -> num_complex::Complex64 {
        num_complex::Complex64::from_polar(self.s.exp(), self.theta)
    }

    /// Flat torus point from planar coordinates.
    pub fn from_flat(model: &MetricModel, x: f64, y: f64) -> Self {
        let ell = model.lattice_scale().unwrap_or(1.0);
        Point { s: TAU * y / ell, theta: TAU * x / ell }
    }

    /// Unit vector in R^3 for a sphere point; `z = 0` maps to `(0, 0, 1)`.
    pub fn unit_vector(&self) -> [f64; 3] {
        if self.s == f64::NEG_INFINITY {
            return [0.0, 0.0, 1.0];
        }
        if self.s == f64::INFINITY {
            return [0.0, 0.0, -1.0];
        }
        let sin_rho = 1.0 / self.s.cosh();
        let cos_rho = -self.s.tanh();
        [sin_rho * self.theta.cos(), sin_rho * self.theta.sin(), cos_rho]
    }

    /// Polar distance from the pole `z = 0` on the unit sphere.
    pub fn sphere_rho(&self) -> f64 {
        2.0 * self.s.exp().atan()
    }
}

mod extended_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tag(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            Repr::Tag("inf".into()).serialize(s)
        } else if *v == f64::NEG_INFINITY {
            Repr::Tag("-inf".into()).serialize(s)
        } else {
            Repr::Num(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Tag(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Tag(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!("bad float tag {t}"))),
        }
    }
}

/// Great-circle distance between unit vectors, accurate for tiny angles.
pub fn sphere_angle(u: &[f64; 3], v: &[f64; 3]) -> f64 {
    let cx = u[1] * v[2] - u[2] * v[1];
    let cy = u[2] * v[0] - u[0] * v[2];
    let cz = u[0] * v[1] - u[1] * v[0];
    let cross = (cx * cx + cy * cy + cz * cz).sqrt();
    let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    cross.atan2(dot)
}

/// Collar Fermi coordinate `rho` of the cylinder coordinate `s`.
pub fn collar_rho(ell: f64, s: f64) -> f64 {
    inverse_gudermannian((s * ell / TAU).clamp(-0.5 * PI + 1e-15, 0.5 * PI - 1e-15))
}

/// Collar cylinder coordinate `s` of the Fermi coordinate `rho`.
pub fn collar_s(ell: f64, rho: f64) -> f64 {
    TAU / ell * gudermannian(rho)
}

pub fn geodesic_distance(model: &MetricModel, p: &Point, q: &Point) -> f64 {
    match model.curvature {
        Curvature::Positive => sphere_angle(&p.unit_vector(), &q.unit_vector()),
        Curvature::Zero => {
            let [re, im] = model.tau.unwrap_or([0.0, 1.0]);
            let ell = 1.0 / im.sqrt();
            let k = ell / TAU;
            let dx = k * (q.theta - p.theta);
            let dy = k * (q.s - p.s);
            // reduce along the two generators, then search nearby translates
            let n0 = (dy / (ell * im)).round();
            let x1 = dx - n0 * ell * re;
            let y1 = dy - n0 * ell * im;
            let m0 = (x1 / ell).round();
            let x2 = x1 - m0 * ell;
            let mut best = f64::INFINITY;
            for n in -2i32..=2 {
                for m in -2i32..=2 {
                    let x = x2 - ell * (m as f64 + n as f64 * re);
                    let y = y1 - ell * n as f64 * im;
                    best = best.min(x.hypot(y));
                }
            }
            best
        }
        Curvature::Negative => {
            let ell = model.collar_length.unwrap_or(1.0);
            let r1 = collar_rho(ell, p.s);
            let r2 = collar_rho(ell, q.s);
            let mut dth = (q.theta - p.theta).rem_euclid(TAU);
            if dth > PI {
                dth = TAU - dth;
            }
            let dx = ell * dth / TAU;
            let c = r1.cosh() * r2.cosh() * dx.cosh() - r1.sinh() * r2.sinh();
            c.max(1.0).acosh()
        }
    }
}

/// Metric coefficient of the polar circle at radius `rho`.
pub fn h_theta(k: Curvature, rho: f64) -> Result<f64> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::Domain(format!("radius must be finite and non-negative, got {rho}")));
    }
    match k {
        Curvature::Negative => Ok(rho.sinh()),
        Curvature::Zero => Ok(rho),
        Curvature::Positive => {
            if rho > PI {
                Err(Error::Domain(format!("spherical radius {rho} exceeds pi")))
            } else {
                Ok(rho.sin())
            }
        }
    }
}

/// Antiderivative of `1 / h_theta`: `log tan(r/2)`, `log r`, `log tanh(r/2)`.
pub fn radial_log(k: Curvature, rho: f64) -> f64 {
    match k {
        Curvature::Positive => (0.5 * rho).tan().ln(),
        Curvature::Zero => rho.ln(),
        Curvature::Negative => (0.5 * rho).tanh().ln(),
    }
}

/// Inverse of [`radial_log`].
pub fn radial_log_inverse(k: Curvature, u: f64) -> f64 {
    match k {
        Curvature::Positive => 2.0 * u.exp().atan(),
        Curvature::Zero => u.exp(),
        Curvature::Negative => 2.0 * u.exp().min(1.0 - 1e-16).atanh(),
    }
}

fn check_radii(k: Curvature, r: f64, r_inner: f64) -> Result<()> {
    if r_inner == 0.0 {
        return Err(Error::InfiniteModulus);
    }
    if !(r_inner > 0.0 && r_inner < r && r.is_finite()) {
        return Err(Error::Domain(format!("annulus radii must satisfy 0 < r' < r, got r={r}, r'={r_inner}")));
    }
    if k == Curvature::Positive && r > PI {
        return Err(Error::Domain(format!("spherical radius {r} exceeds pi")));
    }
    Ok(())
}

/// Modulus of the geodesic annulus `A(r, r')` by closed form.
pub fn radial_modulus(k: Curvature, r: f64, r_inner: f64) -> Result<f64> {
    check_radii(k, r, r_inner)?;
    Ok(radial_log(k, r) - radial_log(k, r_inner))
}

/// Modulus of `A(r, r')` by quadrature of `1 / h_theta`.
pub fn radial_modulus_quadrature(k: Curvature, r: f64, r_inner: f64) -> Result<f64> {
    check_radii(k, r, r_inner)?;
    // integrate in log-radius to keep the integrand bounded near zero
    integrate(
        |u| {
            let rho = u.exp();
            rho / h_theta(k, rho).unwrap_or(f64::NAN)
        },
        r_inner.ln(),
        r.ln(),
    )
}

/// Conformal radius `exp f(r)` by closed form.
pub fn conformal_radius(r: f64, k: Curvature) -> Result<f64> {
    if !(r > 0.0) || (k == Curvature::Positive && r >= PI) {
        return Err(Error::Domain(format!("conformal radius undefined at r={r}")));
    }
    Ok(match k {
        Curvature::Zero => r,
        Curvature::Positive => 2.0 * (0.5 * r).tan(),
        Curvature::Negative => 2.0 * (0.5 * r).tanh(),
    })
}

/// Conformal radius from `f(r) = log r + int_0^r (1/h - 1/rho)`.
pub fn conformal_radius_quadrature(r: f64, k: Curvature) -> Result<f64> {
    if !(r > 0.0) || (k == Curvature::Positive && r >= PI) {
        return Err(Error::Domain(format!("conformal radius undefined at r={r}")));
    }
    let g = |rho: f64| {
        if rho < 1e-4 {
            // series of 1/h - 1/rho
            match k {
                Curvature::Zero => 0.0,
                Curvature::Positive => rho / 6.0 + 7.0 * rho.powi(3) / 360.0,
                Curvature::Negative => -rho / 6.0 + 7.0 * rho.powi(3) / 360.0,
            }
        } else {
            1.0 / h_theta(k, rho).unwrap_or(f64::NAN) - 1.0 / rho
        }
    };
    Ok((r.ln() + integrate(g, 0.0, r)?).exp())
}

/// Smallest `c` with `r_conf >= c r` on `(0, r_max]` for curvature `-1`.
pub fn hyperbolic_conformal_constant(r_max: f64, samples: usize) -> Result<f64> {
    let mut c = f64::INFINITY;
    for i in 1..=samples.max(1) {
        let r = r_max * i as f64 / samples.max(1) as f64;
        c = c.min(conformal_radius_quadrature(r, Curvature::Negative)? / r);
    }
    Ok(c)
}

pub fn gudermannian(x: f64) -> f64 {
    2.0 * (0.5 * x).tanh().atan()
}

pub fn inverse_gudermannian(phi: f64) -> f64 {
    phi.tan().asinh()
}

/// Collar half-width `w = arcsinh(1 / sinh(ell / 2))`.
pub fn collar_width(ell: f64) -> f64 {
    (1.0 / (0.5 * ell).sinh()).asinh()
}

/// Modulus of the full collar `[-w, w] x S^1`.
pub fn collar_modulus(ell: f64) -> Result<f64> {
    if !(ell > 0.0) {
        return Err(Error::Domain(format!("collar length must be positive, got {ell}")));
    }
    Ok(TAU / ell * 2.0 * gudermannian(collar_width(ell)))
}

pub fn collar_modulus_quadrature(ell: f64) -> Result<f64> {
    if !(ell > 0.0) {
        return Err(Error::Domain(format!("collar length must be positive, got {ell}")));
    }
    let w = collar_width(ell);
    Ok(TAU / ell * integrate(|r| 1.0 / r.cosh(), -w, w)?)
}

/// Injectivity radius at distance `d` from the collar boundary.
pub fn injectivity_in_collar(ell: f64, d: f64) -> Result<f64> {
    let w = collar_width(ell);
    if !(ell > 0.0) || !(d >= 0.0) || d > w * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("need l > 0 and 0 <= d <= w = {w}, got l={ell}, d={d}")));
    }
    Ok(((0.5 * ell).cosh() * d.cosh() - d.sinh()).asinh())
}

/// Polar circle coefficient of a cylinder family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CylinderProfile {
    /// Flat cylinder of circumference `ell`.
    Flat { ell: f64 },
    /// Hyperbolic collar around a geodesic of length `ell`.
    Hyperbolic { ell: f64 },
    /// Band around a great circle; `rho` is signed latitude.
    Spherical,
}

impl CylinderProfile {
    pub fn h_theta(&self, rho: f64) -> f64 {
        match *self {
            CylinderProfile::Flat { ell } => ell / TAU,
            CylinderProfile::Hyperbolic { ell } => ell * rho.cosh() / TAU,
            CylinderProfile::Spherical => rho.cos(),
        }
    }

    /// Standard cylinder coordinate, `t(0) = 0`, `dt = drho / h_theta`.
    pub fn t_of_rho(&self, rho: f64) -> f64 {
        match *self {
            CylinderProfile::Flat { ell } => TAU * rho / ell,
            CylinderProfile::Hyperbolic { ell } => TAU / ell * gudermannian(rho),
            CylinderProfile::Spherical => inverse_gudermannian(rho),
        }
    }

    pub fn rho_of_t(&self, t: f64) -> f64 {
        match *self {
            CylinderProfile::Flat { ell } => ell * t / TAU,
            CylinderProfile::Hyperbolic { ell } => inverse_gudermannian(t * ell / TAU),
            CylinderProfile::Spherical => gudermannian(t),
        }
    }

    pub fn modulus(&self, rho0: f64, rho1: f64) -> f64 {
        self.t_of_rho(rho1) - self.t_of_rho(rho0)
    }

    pub fn modulus_quadrature(&self, rho0: f64, rho1: f64) -> Result<f64> {
        integrate(|r| 1.0 / self.h_theta(r), rho0, rho1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AnnulusShape {
    /// Geodesic annulus `A(r, r', p)` around `center`.
    Trivial { curvature: Curvature, center: Point, r: f64, r_inner: f64 },
    /// Sub-cylinder `rho0 < rho < rho1` of the collar of geodesic `family`.
    Cylinder { family: usize, profile: CylinderProfile, rho0: f64, rho1: f64 },
}

/// An annulus with its cached modulus and (optionally) mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusSpec {
    pub shape: AnnulusShape,
    pub modulus: f64,
    #[serde(default)]
    pub mass: Option<f64>,
    /// Standard coordinate runs from the outer end when set.
    #[serde(default)]
    pub reversed: bool,
}

impl AnnulusSpec {
    pub fn trivial(curvature: Curvature, center: Point, r: f64, r_inner: f64) -> Result<Self> {
        let modulus = radial_modulus(curvature, r, r_inner)?;
        Ok(AnnulusSpec {
            shape: AnnulusShape::Trivial { curvature, center, r, r_inner },
            modulus,
            mass: None,
            reversed: false,
        })
    }

    pub fn cylinder(family: usize, profile: CylinderProfile, rho0: f64, rho1: f64) -> Result<Self> {
        if !(rho0 < rho1) {
            return Err(Error::Domain(format!("cylinder needs rho0 < rho1, got [{rho0}, {rho1}]")));
        }
        let modulus = profile.modulus(rho0, rho1);
        if !(modulus > 0.0) || !modulus.is_finite() {
            return Err(Error::Domain(format!("cylinder [{rho0}, {rho1}] has modulus {modulus}")));
        }
        Ok(AnnulusSpec { shape: AnnulusShape::Cylinder { family, profile, rho0, rho1 }, modulus, mass: None, reversed: false })
    }

    pub fn with_mass(mut self, mass: f64) -> Self {
        self.mass = Some(mass);
        self
    }

    pub fn is_trivial(&self) -> bool {
        matches!(self.shape, AnnulusShape::Trivial { .. })
    }

    /// Sub-cylinder `S(a, b; I)` in standard coordinates `a <= t <= b`.
    pub fn sub_cylinder(&self, a: f64, b: f64) -> Result<Self> {
        let w = SubCylinderWindow::new(self.modulus, a, b)?;
        let (a, b) = if self.reversed { (self.modulus - w.b, self.modulus - w.a) } else { (w.a, w.b) };
        let mut out = match self.shape {
            AnnulusShape::Trivial { curvature, center, r_inner, .. } => {
                let u0 = radial_log(curvature, r_inner);
                let ri = radial_log_inverse(curvature, u0 + a);
                let ro = radial_log_inverse(curvature, u0 + b);
                let mut spec = AnnulusSpec::trivial(curvature, center, ro, ri)?;
                spec.modulus = b - a;
                spec
            }
            AnnulusShape::Cylinder { family, profile, rho0, .. } => {
                let t0 = profile.t_of_rho(rho0);
                let r0 = profile.rho_of_t(t0 + a);
                let r1 = profile.rho_of_t(t0 + b);
                let mut spec = AnnulusSpec::cylinder(family, profile, r0, r1)?;
                spec.modulus = b - a;
                spec
            }
        };
        out.reversed = self.reversed;
        Ok(out)
    }

    /// `C(a, b; I) = S(a, Mod - b; I)`.
    pub fn trim(&self, a: f64, b: f64) -> Result<Self> {
        if a + b >= self.modulus {
            return Err(Error::DegenerateTrim { modulus: self.modulus, trim: a + b });
        }
        self.sub_cylinder(a, self.modulus - b)
    }

    /// Recompute the modulus from the shape by quadrature.
    pub fn modulus_quadrature(&self) -> Result<f64> {
        match self.shape {
            AnnulusShape::Trivial { curvature, r, r_inner, .. } => radial_modulus_quadrature(curvature, r, r_inner),
            AnnulusShape::Cylinder { profile, rho0, rho1, .. } => profile.modulus_quadrature(rho0, rho1),
        }
    }
}

/// Modulus of an annulus spec in a model.
pub fn annulus_modulus(spec: &AnnulusSpec, model: &MetricModel) -> Result<f64> {
    match spec.shape {
        AnnulusShape::Trivial { r, r_inner, .. } => radial_modulus(model.curvature, r, r_inner),
        AnnulusShape::Cylinder { profile, rho0, rho1, .. } => Ok(profile.modulus(rho0, rho1)),
    }
}

/// Offsets `0 <= a <= b <= Mod` of a sub-cylinder window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubCylinderWindow {
    pub a: f64,
    pub b: f64,
}

impl SubCylinderWindow {
    pub fn new(modulus: f64, a: f64, b: f64) -> Result<Self> {
        let slack = 1e-12 * modulus.max(1.0);
        if !(a >= -slack && a <= b && b <= modulus + slack) {
            return Err(Error::Domain(format!("window [{a}, {b}] outside [0, {modulus}]")));
        }
        Ok(SubCylinderWindow { a: a.max(0.0), b: b.min(modulus) })
    }

    pub fn modulus(&self) -> f64 {
        self.b - self.a
    }
}
