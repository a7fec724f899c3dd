//! Thick-thin axioms: gradient and cylinder inequalities, stability, decay fits.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{hyperbolic_conformal_constant, radial_log, radial_log_inverse, AnnulusShape, AnnulusSpec, Point};
use crate::surface::{CylinderFamily, FamilyKind, GridKind, MeasuredSurface, Region};
use crate::tolerances::MARGIN_REL;
use crate::{Error, Result};

/// Constants `L0 .. K3` derived from the base constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub l0: f64,
    pub l1: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub delta_max: f64,
    pub eps_l: f64,
    /// Individual terms entering `K1`.
    pub k1_terms: Vec<(String, f64)>,
    /// Terms whose maximum, times `1 + eps_l`, is `L0`.
    #[serde(default)]
    pub l0_terms: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsBundle {
    /// Disk-form gradient constant.
    pub c1_prime: f64,
    /// Conformal-radius form, back-solved from `c1_prime`.
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub delta1: f64,
    pub delta2: f64,
    /// Scale so that `c1_prime * delta1 = 1`.
    pub normalized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived: Option<DerivedConstants>,
}

impl Default for ConstantsBundle {
    fn default() -> Self {
        ConstantsBundle::new(1.0, 1.0, 0.5, 1.0, 0.4, true).expect("default constants are valid")
    }
}

impl ConstantsBundle {
    pub fn new(c1_prime: f64, c2: f64, c3: f64, delta1: f64, delta2: f64, normalized: bool) -> Result<Self> {
        let mut b = ConstantsBundle { c1_prime, c1: 0.0, c2, c3, delta1, delta2, normalized, derived: None };
        if normalized {
            b.c1_prime = 1.0 / delta1;
        }
        b.c1 = b.c1_prime * conformal_factor_bound()?;
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c1'", self.c1_prime), ("c2", self.c2), ("c3", self.c3), ("delta1", self.delta1), ("delta2", self.delta2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.c3 > 1.0 {
            return Err(Error::Config(format!("c3 must be at most 1, got {}", self.c3)));
        }
        if !(self.delta2 < 0.5 * self.delta1) {
            return Err(Error::Config(format!(
                "delta2 = {} must be below delta1 / 2 = {}",
                self.delta2,
                0.5 * self.delta1
            )));
        }
        if self.normalized && (self.c1_prime * self.delta1 - 1.0).abs() > 1e-12 {
            return Err(Error::Config("normalized constants need c1' delta1 = 1".into()));
        }
        Ok(())
    }

    pub fn derived(&self) -> Result<&DerivedConstants> {
        self.derived.as_ref().ok_or_else(|| Error::Precondition("constants not derived yet".into()))
    }

    /// Mass cap of a long neck.
    pub fn neck_mass(&self) -> f64 {
        self.delta2 / 6.0
    }
}

/// Smallest `(r_conf / r)^2` over the radii used by the disk form, all curvatures.
fn conformal_factor_bound() -> Result<f64> {
    let c = hyperbolic_conformal_constant(1f64.asinh(), 64)?;
    Ok((c * c).min(1.0))
}

/// `r_d = sqrt(c1' delta1 / d)`.
pub fn r_d(d: f64, constants: &ConstantsBundle) -> f64 {
    if d <= 0.0 {
        return f64::INFINITY;
    }
    (constants.c1_prime * constants.delta1 / d).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomSample {
    pub index: usize,
    pub center: Point,
    /// Disk radius, or `(r, r')` of an annulus, or a family interval.
    pub radii: Vec<f64>,
    /// Trim parameter of the cylinder inequality.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub mass: f64,
    pub lhs: f64,
    pub bound: f64,
    pub margin: f64,
    pub applicable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub axiom: String,
    pub samples: Vec<AxiomSample>,
    pub applicable: usize,
    pub violations: usize,
    pub tolerance: f64,
    pub pass: bool,
    /// Tightest constant compatible with the samples (`c1'` or `c3`).
    pub tightest: Option<f64>,
}

impl AxiomReport {
    fn finish(axiom: &str, samples: Vec<AxiomSample>, tightest: Option<f64>) -> AxiomReport {
        let applicable = samples.iter().filter(|s| s.applicable).count();
        let violations = samples.iter().filter(|s| s.applicable && s.margin < -MARGIN_REL).count();
        AxiomReport {
            axiom: axiom.into(),
            samples,
            applicable,
            violations,
            tolerance: MARGIN_REL,
            pass: violations == 0,
            tightest,
        }
    }
}

fn margin(lhs: f64, bound: f64) -> f64 {
    if lhs <= 0.0 {
        f64::INFINITY
    } else if bound <= 0.0 {
        f64::NEG_INFINITY
    } else {
        1.0 - lhs / bound
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub count: usize,
    pub seed: u64,
    pub include_max: bool,
}

impl SamplePlan {
    pub fn new(count: usize, seed: u64) -> Self {
        SamplePlan { count, seed, include_max: true }
    }
}

/// Face with the largest density value (mass over area), smallest index on ties.
pub fn density_argmax(surface: &MeasuredSurface) -> usize {
    let mut best = 0;
    let mut val = f64::NEG_INFINITY;
    for f in 0..surface.num_faces() {
        if surface.is_exterior(f) {
            continue;
        }
        let a = surface.face_area(f);
        if a <= 0.0 {
            continue;
        }
        let d = surface.face_mass(f) / a;
        if d > val {
            val = d;
            best = f;
        }
    }
    best
}

/// Sample centres: half stratified over rows, half stratified over the mass
/// distribution, jittered inside the chosen cell.
pub fn stratified_centers(surface: &MeasuredSurface, plan: &SamplePlan) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let g = &surface.grid;
    let mut out = Vec::with_capacity(plan.count);
    if plan.include_max {
        out.push(surface.face_center(density_argmax(surface)));
    }
    let n_rows = plan.count.saturating_sub(out.len()) / 2;
    let jitter = |rng: &mut ChaCha8Rng, f: usize| {
        let c = surface.face_center(f);
        Point::new(c.s + (rng.gen::<f64>() - 0.5) * g.ds, c.theta + (rng.gen::<f64>() - 0.5) * g.dtheta())
    };
    for k in 0..n_rows {
        let i = ((k as f64 + rng.gen::<f64>()) / n_rows as f64 * g.rows as f64) as usize;
        let j = rng.gen_range(0..g.cols);
        out.push(jitter(&mut rng, i.min(g.rows - 1) * g.cols + j));
    }
    let cells = surface.num_cells();
    let mut cdf = Vec::with_capacity(cells);
    let mut acc = 0.0;
    for f in 0..cells {
        acc += surface.face_mass(f);
        cdf.push(acc);
    }
    let n_mass = plan.count.saturating_sub(out.len());
    for k in 0..n_mass {
        let target = (k as f64 + rng.gen::<f64>()) / n_mass.max(1) as f64 * acc;
        let f = cdf.partition_point(|&c| c < target).min(cells - 1);
        out.push(jitter(&mut rng, f));
    }
    out
}

fn local_cell(surface: &MeasuredSurface, p: &Point) -> f64 {
    surface.face_radius(surface.locate(p))
}

/// Gradient inequality in disk form on geodesic disks `B_r(z)`.
pub fn check_gradient_inequality(
    surface: &MeasuredSurface,
    constants: &ConstantsBundle,
    plan: &SamplePlan,
) -> AxiomReport {
    let centers = stratified_centers(surface, plan);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut samples = Vec::with_capacity(centers.len());
    let mut tightest: Option<f64> = None;
    for (index, z) in centers.into_iter().enumerate() {
        let r_hi = 1f64.asinh().min(surface.model.injectivity_radius(&z)) * 0.999;
        let r_lo = (4.0 * local_cell(surface, &z)).min(0.5 * r_hi);
        let r = (r_lo.ln() + rng.gen::<f64>() * (r_hi / r_lo).ln()).exp();
        let d = surface.density_at(&z);
        let mass = surface.disk_mass(&z, r);
        let bound = constants.c1_prime * mass / (r * r);
        let applicable = mass < constants.delta1;
        if applicable && mass > 0.0 && d > 0.0 {
            let c = d * r * r / mass;
            tightest = Some(tightest.map_or(c, |t: f64| t.max(c)));
        }
        samples.push(AxiomSample {
            index,
            center: z,
            radii: vec![r],
            t: None,
            mass,
            lhs: d,
            bound,
            margin: margin(d, bound),
            applicable,
        });
    }
    AxiomReport::finish("gradient", samples, tightest)
}

fn clean_trivial(surface: &MeasuredSurface, p: &Point, r: f64) -> bool {
    match surface.involution {
        None => true,
        Some(inv) => {
            let q = inv.apply(p);
            let d = surface.model.geodesic_distance(p, &q);
            d < 1e-12 || d >= 2.0 * r
        }
    }
}

/// Cylinder inequality on random clean trivial annuli and family sub-cylinders.
pub fn check_cylinder_inequality(
    surface: &MeasuredSurface,
    constants: &ConstantsBundle,
    plan: &SamplePlan,
    families: &[CylinderFamily],
) -> AxiomReport {
    let k = surface.model.curvature;
    let n_family = if families.is_empty() { 0 } else { plan.count / 2 };
    let trivial_plan = SamplePlan { count: plan.count - n_family, ..plan.clone() };
    let centers = stratified_centers(surface, &trivial_plan);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x5851_f42d_4c95_7f2d);
    let mut samples = Vec::new();
    let mut tightest: Option<f64> = None;
    let mut record = |samples: &mut Vec<AxiomSample>, center: Point, radii: Vec<f64>, modulus: f64, prof: &dyn Fn(f64) -> f64, u0: f64, rng: &mut ChaCha8Rng| {
        let mass = prof(u0 + modulus) - prof(u0);
        let applicable = mass < constants.delta2 && modulus > 2.0 * constants.c2;
        let t_hi = 0.5 * modulus;
        for _ in 0..5 {
            let t = constants.c2 + rng.gen::<f64>() * (t_hi - constants.c2).max(0.0);
            let inner = (prof(u0 + modulus - t) - prof(u0 + t)).max(0.0);
            let bound = (-constants.c3 * t).exp() * mass;
            if applicable && inner > 0.0 && t > 0.0 {
                let c = -(inner / mass).ln() / t;
                tightest = Some(tightest.map_or(c, |x: f64| x.min(c)));
            }
            samples.push(AxiomSample {
                index: samples.len(),
                center,
                radii: radii.clone(),
                t: Some(t),
                mass,
                lhs: inner,
                bound,
                margin: margin(inner, bound),
                applicable,
            });
        }
    };
    for z in &centers {
        if samples.len() >= trivial_plan.count {
            break;
        }
        let r_hi = 0.999 * match surface.grid.kind {
            GridKind::Sphere => 0.5 * PI,
            _ => surface.model.injectivity_radius(z).min(1f64.asinh()),
        };
        let r_min = 3.0 * local_cell(surface, z);
        let u_hi_max = radial_log(k, r_hi);
        let u_min = radial_log(k, r_min);
        if u_hi_max - u_min <= 2.0 * constants.c2 {
            continue;
        }
        let modulus = 2.0 * constants.c2 + rng.gen::<f64>() * (u_hi_max - u_min - 2.0 * constants.c2);
        let u_out = u_hi_max - rng.gen::<f64>() * (u_hi_max - u_min - modulus);
        let r = radial_log_inverse(k, u_out);
        if !clean_trivial(surface, z, r) {
            continue;
        }
        let u_in = u_out - modulus;
        let prof = surface.radial_profile(z, u_min.min(u_in), u_out, 1.02);
        let f = |u: f64| prof.mass_below(u);
        record(&mut samples, *z, vec![r, radial_log_inverse(k, u_in)], modulus, &f, u_in, &mut rng);
    }
    for (fi, fam) in families.iter().enumerate() {
        let (t_lo, t_hi) = family_t_bounds(surface, fam);
        let dt = 0.25 * surface.grid.ds.min(surface.grid.dtheta());
        let prof = surface.family_profile(fam, t_lo, t_hi, dt);
        let f = |u: f64| prof.mass_below(u);
        // families absorb whatever the trivial annuli could not place
        let quota = (plan.count.saturating_sub(samples.len())).div_ceil(families.len() - fi);
        let target = samples.len() + quota;
        let mut attempts = 0;
        while samples.len() < target && attempts < 20 * quota {
            attempts += 1;
            let span = t_hi - t_lo;
            if span <= 2.0 * constants.c2 {
                break;
            }
            let modulus = 2.0 * constants.c2 + rng.gen::<f64>() * (span - 2.0 * constants.c2);
            let t0 = t_lo + rng.gen::<f64>() * (span - modulus);
            if surface.involution.is_some() && fam.kind == FamilyKind::SphereBoundary {
                let symmetric = (t0 + 0.5 * modulus).abs() < 1e-9;
                if !symmetric && t0 < 0.0 && t0 + modulus > 0.0 {
                    continue;
                }
            }
            let c = surface.family_point(fam, t0, 0.0);
            record(&mut samples, c, vec![fi as f64, t0, t0 + modulus], modulus, &f, t0, &mut rng);
        }
    }
    AxiomReport::finish("cylinder", samples, tightest)
}

/// Standard coordinate range of a family on the grid.
pub fn family_t_bounds(surface: &MeasuredSurface, fam: &CylinderFamily) -> (f64, f64) {
    match fam.kind {
        FamilyKind::TorusCore { .. } => {
            let half = 0.5 * surface.grid.ds * surface.grid.rows as f64;
            (-half, half)
        }
        FamilyKind::Collar => (surface.grid.s0, surface.grid.s_end()),
        FamilyKind::SphereBoundary => {
            let t = fam.profile.t_of_rho(0.5 * PI - 1e-9).min(40.0);
            (-t, t)
        }
    }
}

/// Stability of every component of a region.
pub fn is_stable(surface: &MeasuredSurface, region: &Region, constants: &ConstantsBundle) -> Result<bool> {
    let topo = surface.region_topology(region)?;
    for c in &topo.components {
        let mass: f64 = c.faces.iter().map(|&f| surface.face_mass(f)).sum();
        if !component_stable(mass, c.genus, c.boundaries, constants) {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn component_stable(mass: f64, genus: u32, boundaries: usize, constants: &ConstantsBundle) -> bool {
    mass >= 0.5 * constants.delta1
        || (boundaries >= 2 && mass >= constants.neck_mass())
        || 2 * genus as usize + boundaries >= 3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    /// Signed standard coordinate from the middle circle.
    pub x: f64,
    /// `sup_theta` of the density in standard coordinates.
    pub sup_density: f64,
    /// `a exp(-b (Mod/2 - |x|)) mu(I)` with the fitted constants.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub modulus: f64,
    pub mass: f64,
    /// Least-squares slope of `-log sup_density` against `Mod/2 - |x|`.
    pub exponent: f64,
    /// Least-squares amplitude relative to `mu(I)`.
    pub amplitude: f64,
    /// Smallest `a` making the bound hold on every row with the fitted exponent.
    pub amplitude_ceiling: f64,
    pub residual_rms: f64,
    pub window: f64,
    pub rows: Vec<DecayRow>,
    pub compliant: bool,
}

/// Density in standard coordinates at `(x, theta)` of an annulus, with `x`
/// measured from the middle circle.
pub fn standard_density(
    surface: &MeasuredSurface,
    spec: &AnnulusSpec,
    families: &[CylinderFamily],
    x: f64,
    theta: f64,
) -> Result<(Point, f64)> {
    let xm = if spec.reversed { -x } else { x };
    match &spec.shape {
        AnnulusShape::Trivial { curvature, center, r_inner, .. } => {
            let u = radial_log(*curvature, *r_inner) + 0.5 * spec.modulus + xm;
            let rho = radial_log_inverse(*curvature, u);
            let p = surface.exp_point(center, rho, theta);
            let h = crate::geometry::h_theta(*curvature, rho.min(PI))?;
            Ok((p, surface.density_at(&p) * h * h))
        }
        AnnulusShape::Cylinder { family, profile, rho0, .. } => {
            let fam = families.get(*family).ok_or_else(|| Error::Precondition(format!("unknown family {family}")))?;
            let t = profile.t_of_rho(*rho0) + 0.5 * spec.modulus + xm;
            let p = surface.family_point(fam, t, theta);
            let h = profile.h_theta(profile.rho_of_t(t));
            Ok((p, surface.density_at(&p) * h * h))
        }
    }
}

/// Fit `sup_theta f_st(x) ~ A exp(-b (Mod/2 - |x|))` on the window
/// `|x| <= Mod/2 - c2 - pi`.
pub fn decay_profile(
    surface: &MeasuredSurface,
    spec: &AnnulusSpec,
    families: &[CylinderFamily],
    constants: &ConstantsBundle,
) -> Result<DecayFit> {
    let trim = constants.c2 + PI;
    let window = 0.5 * spec.modulus - trim;
    if !(window > 0.0) {
        return Err(Error::Window { modulus: spec.modulus, trim });
    }
    let mass = spec.mass.unwrap_or(f64::NAN);
    let n = ((2.0 * window / 0.05).ceil() as usize).clamp(16, 800);
    let n_theta = 64;
    let mut rows = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let x = -window + 2.0 * window * i as f64 / n as f64;
        let mut sup: f64 = 0.0;
        for j in 0..n_theta {
            let th = TAU * j as f64 / n_theta as f64;
            sup = sup.max(standard_density(surface, spec, families, x, th)?.1);
        }
        rows.push(DecayRow { x, sup_density: sup, bound: 0.0 });
    }
    let half = 0.5 * spec.modulus;
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.sup_density > 0.0)
        .map(|r| (half - r.x.abs(), r.sup_density.ln()))
        .collect();
    let (slope, intercept, rms) = least_squares(&pts);
    let exponent = -slope;
    let norm = if mass > 0.0 { mass } else { 1.0 };
    let amplitude = intercept.exp() / norm;
    let mut ceiling: f64 = 0.0;
    for r in &rows {
        let dist = half - r.x.abs();
        ceiling = ceiling.max(r.sup_density * (exponent * dist).exp() / norm);
    }
    for r in rows.iter_mut() {
        r.bound = ceiling * (-(exponent * (half - r.x.abs()))).exp() * norm;
    }
    let compliant = exponent >= constants.c3 * (1.0 - 0.2);
    Ok(DecayFit {
        modulus: spec.modulus,
        mass,
        exponent,
        amplitude,
        amplitude_ceiling: ceiling,
        residual_rms: rms,
        window,
        rows,
        compliant,
    })
}

/// Ordinary least squares `y = slope x + intercept`, with the RMS residual.
pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (0.0, pts.first().map_or(0.0, |p| p.1), 0.0);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rms = (pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum::<f64>() / n).sqrt();
    (slope, intercept, rms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_d_examples() {
        let c = ConstantsBundle::default();
        assert!((r_d(1.0, &c) - 1.0).abs() < 1e-15);
        assert!((r_d(4.0, &c) - 0.5).abs() < 1e-15);
        assert!((r_d(100.0, &c) - 0.1).abs() < 1e-15);
        assert_eq!(r_d(0.0, &c), f64::INFINITY);
    }

    #[test]
    fn constants_validation() {
        assert!(ConstantsBundle::new(1.0, 1.0, 0.5, 1.0, 0.5, true).is_err());
        assert!(ConstantsBundle::new(1.0, 1.0, 1.5, 1.0, 0.4, true).is_err());
        let c = ConstantsBundle::new(3.0, 1.0, 0.5, 2.0, 0.4, true).unwrap();
        assert!((c.c1_prime * c.delta1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stability_branches() {
        let c = ConstantsBundle::default();
        assert!(component_stable(0.5, 0, 1, &c));
        assert!(component_stable(0.0, 2, 0, &c));
        assert!(!component_stable(0.0, 0, 1, &c));
        assert!(component_stable(c.delta2 / 6.0, 0, 2, &c));
        assert!(!component_stable(c.delta2 / 6.0, 0, 1, &c));
    }

    #[test]
    fn least_squares_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 - 0.5 * i as f64)).collect();
        let (m, b, r) = least_squares(&pts);
        assert!((m + 0.5).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && r < 1e-12);
    }
}
