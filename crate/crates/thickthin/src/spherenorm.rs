//! Conjugation-compatible renormalization of measured spheres.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_6, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::axioms::{r_d, ConstantsBundle};
use crate::field::{point_from_unit_vector, sphere_exp, Field, SphereMobius};
use crate::geometry::{sphere_angle, Point};
use crate::surface::{DensitySource, GridKind, Involution, MeasuredSurface};
use crate::tolerances::K0_CEILING;
use crate::{Error, Result};

/// Case 1 constant `36 / pi^2`.
pub const K0_UNIFORM: f64 = 36.0 / (PI * PI);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    /// Largest density anywhere (case 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_density: Option<f64>,
    /// Mass of the half sphere around `q` on the transported grid (case 2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hemisphere_mass: Option<f64>,
    /// Same mass integrated on the original surface over the preimage disk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hemisphere_mass_preimage: Option<f64>,
    /// Largest transported density on the half sphere around `q` (case 2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hemisphere_sup: Option<f64>,
    /// `sin(r + r_d0)` against the largest sampled `1 / ||d psi||` on the half sphere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse_factor: Option<(f64, f64)>,
    /// Transported density at `q` and its `r_d` (case 3).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_d_q: Option<f64>,
    /// `sup_{B_{r_d}(q)} density / d` (case 3).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disk_ratio: Option<f64>,
    /// Largest relative gap between `density(z)` and `density(conj z)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivariance_error: Option<f64>,
    pub mass_before: f64,
    pub mass_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereNormalization {
    pub case: u8,
    pub mobius: SphereMobius,
    /// Density maximum `p` and its value `d0`.
    pub p: Point,
    pub d0: f64,
    pub r_d0: f64,
    /// `p` itself or the nearest point of the fixed circle.
    pub p1: Point,
    /// `d(p, p1)`.
    pub r: f64,
    /// Distinguished point in the new coordinates.
    pub q: Point,
    pub k0: f64,
    /// Number of grid faces attaining the maximum; more than one is a tie.
    pub max_ties: usize,
    pub certificates: Certificates,
}

impl SphereNormalization {
    /// Points removed from the sphere before searching for necks.
    pub fn punctures(&self) -> Vec<Point> {
        match self.case {
            1 => vec![],
            2 => vec![self.q],
            _ => vec![self.q, Point { s: self.q.s, theta: (-self.q.theta).rem_euclid(std::f64::consts::TAU) }],
        }
    }
}

/// Grid argmax of the density (smallest index among equal values), refined by
/// a shrinking compass search.
pub fn density_maximum(surface: &MeasuredSurface) -> (Point, f64, usize) {
    let vals: Vec<f64> = (0..surface.num_faces()).into_par_iter().map(|f| surface.density_at(&surface.face_center(f))).collect();
    let mut best = 0;
    for (f, v) in vals.iter().enumerate() {
        if *v > vals[best] {
            best = f;
        }
    }
    let top = vals[best];
    let ties = vals.iter().filter(|v| **v >= top * (1.0 - 1e-12)).count();
    let mut p = surface.face_center(best);
    let mut d = top;
    if matches!(surface.density, DensitySource::Field { .. }) {
        let mut step = surface.face_radius(best).min(0.5);
        while step > 1e-9 {
            let mut moved = false;
            for k in 0..8 {
                let cand = sphere_exp(&p, step, k as f64 * PI / 4.0);
                let v = surface.density_at(&cand);
                if v > d {
                    d = v;
                    p = cand;
                    moved = true;
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
    }
    (p, d, ties)
}

/// Nearest point of the real great circle; `(1, 0, 0)` when `p` is equidistant.
fn nearest_fixed_point(p: &Point) -> Point {
    let v = p.unit_vector();
    let n = v[0].hypot(v[2]);
    if n < 1e-15 {
        return Point::new(0.0, 0.0);
    }
    point_from_unit_vector(&[v[0] / n, 0.0, v[2] / n])
}

pub fn normalize_sphere(surface: &MeasuredSurface, constants: &ConstantsBundle) -> Result<SphereNormalization> {
    if surface.grid.kind != GridKind::Sphere {
        return Err(Error::Precondition("sphere normalization needs a sphere grid".into()));
    }
    let mass_before = surface.total_mass();
    if !(mass_before > 0.0) {
        return Err(Error::Normalization("zero total measure".into()));
    }
    if matches!(surface.involution, Some(Involution::SFlip)) {
        return Err(Error::Unsupported("spheres carry the theta-flip involution only".into()));
    }
    let (p, d0, max_ties) = density_maximum(surface);
    let r_d0 = r_d(d0, constants);
    let mut certificates = Certificates {
        sup_density: None,
        hemisphere_mass: None,
        hemisphere_mass_preimage: None,
        hemisphere_sup: None,
        inverse_factor: None,
        q_density: None,
        r_d_q: None,
        disk_ratio: None,
        equivariance_error: None,
        mass_before,
        mass_after: mass_before,
    };
    if r_d0 > FRAC_PI_6 {
        certificates.sup_density = Some(d0);
        if d0 > K0_UNIFORM * constants.c1_prime * constants.delta1 * (1.0 + 1e-9) {
            return Err(Error::Normalization(format!("case 1 sup density {d0} exceeds 36/pi^2")));
        }
        return Ok(SphereNormalization {
            case: 1,
            mobius: SphereMobius::identity(),
            p,
            d0,
            r_d0,
            p1: p,
            r: 0.0,
            q: p,
            k0: K0_UNIFORM,
            max_ties,
            certificates,
        });
    }
    let bordered = surface.involution.is_some();
    let p1 = if bordered { nearest_fixed_point(&p) } else { p };
    let r = sphere_angle(&p.unit_vector(), &p1.unit_vector());
    let (case, scale) = if r < 2.0 * r_d0 { (2, (0.5 * (r + r_d0)).tan()) } else { (3, (0.5 * r).tan()) };
    let mobius = SphereMobius::aligning(&p1, scale);
    let q = if case == 2 { Point::zero_pole() } else { mobius.forward(&p) };
    let mut norm = SphereNormalization {
        case,
        mobius,
        p,
        d0,
        r_d0,
        p1,
        r,
        q,
        k0: 0.0,
        max_ties,
        certificates,
    };
    let next = normalized_surface(surface, &norm)?;
    let c = &mut norm.certificates;
    c.mass_after = next.total_mass();
    let half: Vec<usize> = (0..next.num_faces()).filter(|&f| next.face_center(f).s < 0.0).collect();
    if case == 2 {
        c.hemisphere_mass = Some(next.disk_mass(&Point::zero_pole(), FRAC_PI_2));
        c.hemisphere_mass_preimage = Some(surface.disk_mass(&p1, r + r_d0));
        let sup = half.par_iter().map(|&f| next.density_at(&next.face_center(f))).reduce(|| 0.0, f64::max);
        c.hemisphere_sup = Some(sup);
        let inv_sup = half
            .iter()
            .map(|&f| 1.0 / norm.mobius.conformal_factor(&norm.mobius.inverse(&next.face_center(f))))
            .fold(0.0, f64::max);
        c.inverse_factor = Some(((r + r_d0).sin(), inv_sup));
        norm.k0 = sup;
    } else {
        let dq = next.density_at(&q);
        let rq = r_d(dq, constants);
        c.q_density = Some(dq);
        c.r_d_q = Some(rq);
        let ratio = (0..next.num_faces())
            .into_par_iter()
            .filter(|&f| sphere_angle(&next.face_center(f).unit_vector(), &q.unit_vector()) <= rq)
            .map(|f| next.density_at(&next.face_center(f)) / dq)
            .reduce(|| 1.0, f64::max);
        c.disk_ratio = Some(ratio);
        norm.k0 = ratio;
    }
    if bordered {
        c.equivariance_error = Some(equivariance_error(&next));
    }
    if !(norm.k0 <= K0_CEILING) {
        return Err(Error::Normalization(format!("empirical K0 = {} exceeds the ceiling {K0_CEILING}", norm.k0)));
    }
    Ok(norm)
}

/// Largest relative difference between the density at a face centre and at its conjugate.
pub fn equivariance_error(surface: &MeasuredSurface) -> f64 {
    (0..surface.num_faces())
        .into_par_iter()
        .map(|f| {
            let z = surface.face_center(f);
            let zb = Point { s: z.s, theta: (-z.theta).rem_euclid(std::f64::consts::TAU) };
            let (a, b) = (surface.density_at(&z), surface.density_at(&zb));
            let m = a.abs().max(b.abs());
            if m == 0.0 {
                0.0
            } else {
                (a - b).abs() / m
            }
        })
        .reduce(|| 0.0, f64::max)
}

/// Density of the pushed-forward measure, `density(psi^-1 z) / ||d psi||^2`.
pub fn mobius_pullback_density(surface: &MeasuredSurface, norm: &SphereNormalization) -> DensitySource {
    if norm.case == 1 {
        return surface.density.clone();
    }
    match &surface.density {
        DensitySource::Field { field } => DensitySource::Field {
            field: Field::Transformed { inner: Box::new(field.clone()), mobius: norm.mobius.clone() },
        },
        DensitySource::Sampled { .. } => {
            let values = (0..surface.num_faces())
                .into_par_iter()
                .map(|f| {
                    let x = norm.mobius.inverse(&surface.face_center(f));
                    let k = norm.mobius.conformal_factor(&x);
                    surface.density_at(&x) / (k * k)
                })
                .collect();
            DensitySource::Sampled { values }
        }
    }
}

/// The surface carrying the transported density on the same grid.
pub fn normalized_surface(surface: &MeasuredSurface, norm: &SphereNormalization) -> Result<MeasuredSurface> {
    MeasuredSurface::new(
        surface.model.clone(),
        surface.genus,
        surface.grid.clone(),
        mobius_pullback_density(surface, norm),
        surface.involution,
        surface.exterior.clone(),
    )
}

/// Radius of the disks whose complements are stable: `min(sqrt(delta1 / (2 pi K0)), pi/4)`.
pub fn complement_stability_radius(constants: &ConstantsBundle, k0: f64) -> f64 {
    if !(k0 > 0.0) {
        return FRAC_PI_4;
    }
    (0.5 * constants.delta1 / (PI * k0)).sqrt().min(FRAC_PI_4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::RationalMap;
    use crate::geometry::MetricModel;
    use crate::surface::Grid;

    fn sphere(field: Field, involution: Option<Involution>) -> MeasuredSurface {
        let grid = Grid::sphere(240, 32, -12.0, 12.0).unwrap();
        MeasuredSurface::new(MetricModel::sphere(), 0, grid, DensitySource::Field { field }, involution, None).unwrap()
    }

    #[test]
    fn uniform_is_case_one() {
        let s = sphere(Field::Constant { value: 1.0 }, None);
        let n = normalize_sphere(&s, &ConstantsBundle::default()).unwrap();
        assert_eq!(n.case, 1);
        assert_eq!(n.k0, K0_UNIFORM);
        assert_eq!(n.mobius, SphereMobius::identity());
    }

    #[test]
    fn stability_radius() {
        let c = ConstantsBundle::default();
        assert!((complement_stability_radius(&c, K0_UNIFORM) - (PI / 72.0).sqrt()).abs() < 1e-15);
        assert_eq!(complement_stability_radius(&c, 1e-9), FRAC_PI_4);
        assert!(complement_stability_radius(&c, 1e12) < 1e-6);
    }

    #[test]
    fn scaled_identity_is_case_two() {
        let s = sphere(Field::RationalPullback { map: RationalMap::scaling(100.0) }, None);
        let c = ConstantsBundle::default();
        let n = normalize_sphere(&s, &c).unwrap();
        assert_eq!(n.case, 2);
        let cert = &n.certificates;
        assert!(cert.hemisphere_mass.unwrap() >= c.delta1);
        assert!((cert.mass_after - cert.mass_before).abs() < 1e-3 * cert.mass_before);
        let (exact, sampled) = cert.inverse_factor.unwrap();
        assert!(sampled <= exact * (1.0 + 1e-9));
    }
}
