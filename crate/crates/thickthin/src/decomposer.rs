//! Long necks, their similarity classes and the maximal decomposition.

use std::f64::consts::{E, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::axioms::{component_stable, family_t_bounds, ConstantsBundle, DerivedConstants};
use crate::geometry::{
    radial_log, radial_log_inverse, radial_modulus, AnnulusShape, AnnulusSpec, Curvature, CylinderProfile, Point,
};
use crate::quadrature::integrate;
use crate::spherenorm::{normalize_sphere, normalized_surface, SphereNormalization};
use crate::surface::{CylinderFamily, FamilyKind, GridKind, Involution, MeasuredSurface, Region};
use crate::tolerances::{EPS_L, SWEEP_RATIO};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// constants

/// Supremum of `log tan(r/2) - log tan(r_in(r)/2)` over `0 < r <= r_max`.
fn sphere_sup(r_max: f64, inner: impl Fn(f64) -> f64, outer: impl Fn(f64) -> f64) -> f64 {
    let n = 4000;
    (1..=n)
        .map(|i| {
            let r = r_max * i as f64 / n as f64;
            radial_log(Curvature::Positive, outer(r)) - radial_log(Curvature::Positive, inner(r))
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Collar term `(2 pi / l) (gd(rho0 + l cosh(rho0) / 2) - gd(rho0))` at one point.
pub fn collar_shift_modulus(ell: f64, rho0: f64) -> f64 {
    use crate::geometry::gudermannian;
    TAU / ell * (gudermannian(rho0 + 0.5 * ell * rho0.cosh()) - gudermannian(rho0))
}

/// Named lower bounds entering `K1`.
pub fn k1_terms(c2: f64) -> Vec<(String, f64)> {
    vec![
        ("c2 + pi".into(), c2 + PI),
        ("trivial disjoint, sphere".into(), sphere_sup(PI / 3.0, |r| 4.0 * r / 15.0, |r| r)),
        ("trivial disjoint, flat and hyperbolic".into(), (15.0f64 / 4.0).ln()),
        ("trivial overlapping, sphere".into(), sphere_sup(PI / 15.0, |r| 0.5 * r, |r| 2.0 * r)),
        ("trivial overlapping, flat and hyperbolic".into(), 4f64.ln()),
        ("torus cylinder".into(), PI),
        ("collar cylinder".into(), PI * (E - 1.0)),
    ]
}

/// Branches of `sup 2 r' / h(3 r')`.
pub fn delta_max_terms() -> Vec<(String, f64)> {
    let r_max = PI / 15.0;
    let n = 4000;
    let sphere = (1..=n)
        .map(|i| {
            let r = r_max * i as f64 / n as f64;
            2.0 * r / (3.0 * r).sin()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    vec![("sphere".into(), sphere), ("flat".into(), 2.0 / 3.0), ("hyperbolic".into(), 2.0 / 3.0)]
}

pub fn k3() -> Result<f64> {
    let f = |r: f64| 1.0 / r.sin();
    Ok(integrate(f, PI / 6.0, PI / 3.0)? + integrate(f, PI / 9.0, PI / 3.0)?)
}

pub fn derive_constants(base: &ConstantsBundle) -> Result<ConstantsBundle> {
    derive_constants_with(base, None)
}

/// Derive the tower with an optional fixed `K1 >= c2 + pi`.
pub fn derive_constants_with(base: &ConstantsBundle, k1_override: Option<f64>) -> Result<ConstantsBundle> {
    base.validate()?;
    let mut terms = k1_terms(base.c2);
    let mut k1 = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    if let Some(k) = k1_override {
        if !(k >= base.c2 + PI) || !k.is_finite() {
            return Err(Error::Config(format!("K1 = {k} is below c2 + pi = {}", base.c2 + PI)));
        }
        terms.push(("override".into(), k));
        k1 = k;
    }
    let delta_max = delta_max_terms().iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let k2 = k1 + 0.5 * delta_max;
    let k3 = k3()?;
    let l0_terms: Vec<(String, f64)> = vec![
        ("c2".into(), base.c2),
        ("log 3 / c3".into(), 3f64.ln() / base.c3),
        ("K1".into(), k1),
        ("K2".into(), k2),
        ("K3".into(), k3),
    ];
    let top = l0_terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let l0 = (1.0 + EPS_L) * top;
    let mut out = base.clone();
    out.derived = Some(DerivedConstants { l0, l1: 4.0 * l0, k1, k2, k3, delta_max, eps_l: EPS_L, k1_terms: terms, l0_terms });
    Ok(out)
}

/// Bound `L = c2 + pi + log(a (c2 + pi + x)) / c3` of the small-mass torus,
/// with the smallest `x` on a 0.01 grid making `4 pi L / (c2 + pi + x) < 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusModulusBound {
    pub amplitude: f64,
    pub x: f64,
    pub l: f64,
}

pub fn trivial_torus_bound(constants: &ConstantsBundle, amplitude: f64) -> Result<TorusModulusBound> {
    if !(amplitude > 0.0) {
        return Err(Error::Config(format!("decay amplitude must be positive, got {amplitude}")));
    }
    let base = constants.c2 + PI;
    let l_of = |x: f64| base + (amplitude * (base + x)).ln() / constants.c3;
    let mut x = 0.0;
    while 4.0 * PI * l_of(x) >= base + x {
        x += 0.01;
        if x > 1e7 {
            return Err(Error::Domain("no admissible x for the torus bound".into()));
        }
    }
    Ok(TorusModulusBound { amplitude, x, l: l_of(x) })
}

// ---------------------------------------------------------------------------
// search plan and preparation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchPlan {
    /// Centre subgrid stride in rows and columns.
    pub stride: usize,
    pub sweep_ratio: f64,
    /// Modulus evaluations spent refining each representative.
    pub refine_budget: usize,
    pub seed: u64,
    /// Random annuli in the maximality audit.
    pub audit_samples: usize,
    /// Random triples in the transitivity check.
    pub transitivity_triples: usize,
    /// Upper limit on the long-neck list.
    pub max_necks: usize,
    /// Amplitude `a` of the small-mass torus bound.
    pub decay_amplitude: f64,
}

impl SearchPlan {
    pub fn new(seed: u64) -> Self {
        SearchPlan {
            stride: 4,
            sweep_ratio: SWEEP_RATIO,
            refine_budget: 24,
            seed,
            audit_samples: 1000,
            transitivity_triples: 1000,
            max_necks: 600,
            decay_amplitude: 1.0,
        }
    }
}

/// Genus-1 marking: short class, the geodesics `alpha0`, `alpha1` and `I0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusMarking {
    /// Period of `s`.
    pub period: f64,
    /// Length of the short class (the `theta` circles).
    pub short_length: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    /// Sub-cylinder of the `alpha0` family (index 1).
    pub i0: AnnulusSpec,
    /// Length of `I0` in `s`.
    pub i0_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Branch {
    Main,
    /// Genus 0 without concentration: nothing to decompose.
    TrivialSphere,
    /// Genus 1 with total mass at most `delta2`.
    TrivialTorus { mass: f64, bound: TorusModulusBound },
}

/// A surface ready for the neck search.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Normalized surface for genus 0, the input otherwise.
    pub surface: MeasuredSurface,
    pub normalization: Option<SphereNormalization>,
    pub punctures: Vec<Point>,
    pub families: Vec<CylinderFamily>,
    pub marking: Option<TorusMarking>,
    pub branch: Branch,
}

fn wrap(x: f64, period: f64) -> f64 {
    (x + 0.5 * period).rem_euclid(period) - 0.5 * period
}

/// Mass of `[s0, x]` for the periodic row masses, `x` in `[s0, s0 + 2P]`.
struct RowMass {
    s0: f64,
    ds: f64,
    masses: Vec<f64>,
    prefix: Vec<f64>,
}

impl RowMass {
    fn new(surface: &MeasuredSurface) -> RowMass {
        let g = &surface.grid;
        let masses: Vec<f64> = (0..g.rows).map(|i| (0..g.cols).map(|j| surface.face_mass(i * g.cols + j)).sum()).collect();
        let mut prefix = vec![0.0];
        for k in 0..3 * g.rows {
            prefix.push(prefix[k] + masses[k % g.rows]);
        }
        RowMass { s0: g.s0, ds: g.ds, masses, prefix }
    }

    fn period(&self) -> f64 {
        self.ds * self.masses.len() as f64
    }

    fn cumulative(&self, x: f64) -> f64 {
        let y = ((x - self.s0) / self.ds).max(0.0);
        let k = (y.floor() as usize).min(self.prefix.len() - 2);
        self.prefix[k] + (y - k as f64) * self.masses[k % self.masses.len()]
    }

    /// Mass of the band `[a, b]` with `b - a <= P`.
    fn band(&self, a: f64, b: f64) -> f64 {
        let p = self.period();
        let a0 = (a - self.s0).rem_euclid(p) + self.s0;
        self.cumulative(a0 + (b - a)) - self.cumulative(a0)
    }

    /// Longest length `len <= P` with `mass(len) <= cap` for a monotone mass function.
    fn longest(&self, cap: f64, mass: impl Fn(f64) -> f64) -> f64 {
        let p = self.period();
        if mass(p) <= cap {
            return p;
        }
        let (mut lo, mut hi) = (0.0, p);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if mass(mid) <= cap {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Mark a rectangular torus: `I0` maximizes the modulus among bands of mass
/// `delta2 / 6`; `alpha1` is opposite its core. Bordered tori use the two
/// fixed circles instead.
pub fn torus_marking(surface: &MeasuredSurface, constants: &ConstantsBundle) -> Result<Option<TorusMarking>> {
    if surface.grid.kind != GridKind::Torus {
        return Err(Error::Precondition("torus marking needs a torus grid".into()));
    }
    let lam = surface.lambda(0.0);
    let short = TAU * lam;
    let rows = RowMass::new(surface);
    let period = rows.period();
    if !(short < 1.0) || short > period * lam {
        return Ok(None);
    }
    let cap = constants.neck_mass();
    let (alpha0, alpha1, len) = if surface.involution == Some(Involution::SFlip) {
        let half_at = |c: f64| 0.5 * rows.longest(cap, |len| rows.band(c - 0.5 * len, c + 0.5 * len));
        let edge = surface.grid.s0;
        let (x0, xe) = (half_at(0.0), half_at(edge));
        if x0 >= xe {
            (0.0, edge, 2.0 * x0)
        } else {
            (edge, 0.0, 2.0 * xe)
        }
    } else {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..surface.grid.rows {
            let e = surface.grid.s0 + i as f64 * surface.grid.ds;
            let fwd = rows.longest(cap, |len| rows.band(e, e + len));
            let bwd = rows.longest(cap, |len| rows.band(e - len, e));
            if fwd > best.0 {
                best = (fwd, e + 0.5 * fwd);
            }
            if bwd > best.0 {
                best = (bwd, e - 0.5 * bwd);
            }
        }
        let a0 = wrap(best.1, period);
        (a0, wrap(a0 + 0.5 * period, period), best.0)
    };
    let len = len.min(period * (1.0 - 1e-9));
    if !(len > 0.0) {
        return Ok(None);
    }
    let profile = CylinderProfile::Flat { ell: short };
    let i0 = AnnulusSpec::cylinder(1, profile, -0.5 * lam * len, 0.5 * lam * len)?
        .with_mass(rows.band(alpha0 - 0.5 * len, alpha0 + 0.5 * len));
    Ok(Some(TorusMarking { period, short_length: short, alpha0, alpha1, i0, i0_length: len }))
}

pub fn prepare(surface: &MeasuredSurface, constants: &ConstantsBundle, plan: &SearchPlan) -> Result<Prepared> {
    constants.derived()?;
    match surface.grid.kind {
        GridKind::Sphere => {
            let norm = normalize_sphere(surface, constants)?;
            if norm.case == 1 {
                return Ok(Prepared {
                    surface: surface.clone(),
                    normalization: Some(norm),
                    punctures: vec![],
                    families: vec![],
                    marking: None,
                    branch: Branch::TrivialSphere,
                });
            }
            let next = normalized_surface(surface, &norm)?;
            let families = if norm.case == 3 && surface.involution.is_some() {
                vec![CylinderFamily { kind: FamilyKind::SphereBoundary, profile: CylinderProfile::Spherical }]
            } else {
                vec![]
            };
            Ok(Prepared {
                surface: next,
                punctures: norm.punctures(),
                normalization: Some(norm),
                families,
                marking: None,
                branch: Branch::Main,
            })
        }
        GridKind::Torus => {
            let marking = torus_marking(surface, constants)?;
            let families = match &marking {
                Some(m) => {
                    let profile = CylinderProfile::Flat { ell: m.short_length };
                    vec![
                        CylinderFamily { kind: FamilyKind::TorusCore { s_core: m.alpha1 }, profile },
                        CylinderFamily { kind: FamilyKind::TorusCore { s_core: m.alpha0 }, profile },
                    ]
                }
                None => vec![],
            };
            let mass = surface.total_mass();
            let branch = if mass <= constants.delta2 {
                Branch::TrivialTorus { mass, bound: trivial_torus_bound(constants, plan.decay_amplitude)? }
            } else {
                Branch::Main
            };
            Ok(Prepared { surface: surface.clone(), normalization: None, punctures: vec![], families, marking, branch })
        }
        GridKind::Collar => {
            let ell = surface.model.collar_length.ok_or_else(|| Error::Config("collar without length".into()))?;
            let families = if ell < 2.0 * 1f64.asinh() {
                vec![CylinderFamily { kind: FamilyKind::Collar, profile: CylinderProfile::Hyperbolic { ell } }]
            } else {
                vec![]
            };
            Ok(Prepared {
                surface: surface.clone(),
                normalization: None,
                punctures: vec![],
                families,
                marking: None,
                branch: Branch::Main,
            })
        }
    }
}

impl Prepared {
    /// Chart test for the fixed set; geodesic distances lose it near the poles.
    fn on_fixed_set(&self, z: &Point) -> bool {
        let tol = 1e-12;
        match self.surface.involution {
            None => true,
            Some(Involution::ThetaFlip) => z.is_pole() || z.theta.sin().abs() < tol,
            Some(Involution::SFlip) => {
                let period = self.surface.grid.ds * self.surface.grid.rows as f64;
                let w = wrap(z.s, period).abs();
                w < tol || (w - 0.5 * period).abs() < tol
            }
        }
    }

    /// Largest outer radius of an admissible trivial annulus about `z`.
    pub fn trivial_radius_cap(&self, z: &Point) -> f64 {
        let s = &self.surface;
        let mut r = s.model.injectivity_radius(z) / 3.0;
        for q in &self.punctures {
            r = r.min(0.999 * s.model.geodesic_distance(z, q));
        }
        if let Some(inv) = s.involution {
            if !self.on_fixed_set(z) {
                r = r.min(0.5 * s.model.geodesic_distance(z, &inv.apply(z)));
            }
        }
        if s.grid.kind == GridKind::Collar {
            let ell = s.model.collar_length.unwrap_or(1.0);
            let w = crate::geometry::collar_width(ell);
            r = r.min(w - crate::geometry::collar_rho(ell, z.s).abs());
        }
        if let Some(m) = &self.marking {
            let lam = s.lambda(0.0);
            r = r.min(lam * (wrap(z.s - m.alpha0, m.period).abs() - 0.5 * m.i0_length));
        }
        r
    }

    /// Admissibility of `A(r, r_inner, z)`.
    pub fn admissible_trivial(&self, z: &Point, r: f64, r_inner: f64) -> bool {
        r_inner > 0.0 && r_inner <= r / 5.0 && r <= self.trivial_radius_cap(z)
    }

    /// Families whose core is a fixed circle of the involution.
    pub fn is_boundary_family(&self, fi: usize) -> bool {
        matches!(
            (self.families.get(fi).map(|f| f.kind), self.surface.involution),
            (Some(FamilyKind::SphereBoundary), Some(_)) | (Some(FamilyKind::TorusCore { .. }), Some(Involution::SFlip))
        )
    }

    /// Range of the standard coordinate open to neck search in a family.
    fn search_t_bounds(&self, fi: usize) -> (f64, f64) {
        let fam = &self.families[fi];
        let (lo, hi) = family_t_bounds(&self.surface, fam);
        match &self.marking {
            Some(m) if fi == 0 => {
                let h = 0.5 * (m.period - m.i0_length);
                (lo.max(-h), hi.min(h))
            }
            _ => (lo, hi),
        }
    }

    /// Conjugate of an annulus.
    pub fn conjugate(&self, spec: &AnnulusSpec) -> AnnulusSpec {
        let mut out = spec.clone();
        if let Some(inv) = self.surface.involution {
            match &mut out.shape {
                AnnulusShape::Trivial { center, .. } => *center = inv.apply(center),
                AnnulusShape::Cylinder { rho0, rho1, .. } => {
                    let (a, b) = (*rho0, *rho1);
                    *rho0 = -b;
                    *rho1 = -a;
                }
            }
        }
        out
    }

    /// Half of the surface an annulus lies in.
    pub fn side(&self, spec: &AnnulusSpec) -> Side {
        let inv = match self.surface.involution {
            None => return Side::Symmetric,
            Some(inv) => inv,
        };
        let p = match &spec.shape {
            AnnulusShape::Trivial { center, .. } => {
                if self.on_fixed_set(center) {
                    return Side::Symmetric;
                }
                *center
            }
            AnnulusShape::Cylinder { family, profile, rho0, rho1 } => {
                if (rho0 + rho1).abs() <= 1e-9 * (rho1 - rho0).abs().max(1.0) {
                    return Side::Symmetric;
                }
                let t = profile.t_of_rho(0.5 * (rho0 + rho1));
                self.surface.family_point(&self.families[*family], t, 0.5)
            }
        };
        let upper = match inv {
            Involution::ThetaFlip => p.theta.rem_euclid(TAU) < PI,
            Involution::SFlip => {
                let period = self.surface.grid.ds * self.surface.grid.rows as f64;
                let w = wrap(p.s, period);
                w > 0.0 && w < 0.5 * period
            }
        };
        if upper {
            Side::Upper
        } else {
            Side::Lower
        }
    }

    pub fn rasterize(&self, spec: &AnnulusSpec) -> Result<Region> {
        self.surface.rasterize(spec, &self.families)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Upper,
    Lower,
    Symmetric,
}

// ---------------------------------------------------------------------------
// long necks

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NeckSource {
    /// Trivial annulus about the centre of face `face`.
    Center { face: usize },
    /// Refined trivial annulus about a moved centre.
    Refined,
    Family { family: usize },
    Conjugate { class: usize },
    Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeckCandidate {
    pub id: usize,
    pub spec: AnnulusSpec,
    pub mass: f64,
    pub modulus: f64,
    /// Mass on the inner side (inner disk or lower cap).
    pub inner_mass: f64,
    /// Mass on the outer side.
    pub outer_mass: f64,
    pub complement_stable: bool,
    pub clean: bool,
    pub source: NeckSource,
}

impl NeckCandidate {
    pub fn is_long(&self, constants: &ConstantsBundle) -> Result<bool> {
        let l1 = constants.derived()?.l1;
        Ok(self.mass <= constants.neck_mass() && self.modulus >= l1 && self.complement_stable && self.clean)
    }
}

/// Centres of the stride subgrid, sphere poles included.
pub fn search_centers(prep: &Prepared, plan: &SearchPlan) -> Vec<usize> {
    let g = &prep.surface.grid;
    let st = plan.stride.max(1);
    let mut out: Vec<usize> = (0..g.rows)
        .filter(|i| i % st == st / 2)
        .flat_map(|i| (0..g.cols).filter(move |j| j % st == 0).map(move |j| i * g.cols + j))
        .collect();
    if g.kind == GridKind::Sphere {
        out.push(g.num_cells());
        out.push(g.num_cells() + 1);
    }
    out
}

/// Inner disk mass, ring mass and outer remainder of `A(r, r_inner, z)`.
fn ring_masses(surface: &MeasuredSurface, z: &Point, r: f64, r_inner: f64, total: f64) -> (f64, f64, f64) {
    let inner = surface.disk_mass(z, r_inner);
    let outer_disk = surface.disk_mass(z, r);
    (inner, (outer_disk - inner).max(0.0), (total - outer_disk).max(0.0))
}

/// Best trivial long neck about `z`, or `None`.
pub fn trivial_neck_at(
    prep: &Prepared,
    z: &Point,
    constants: &ConstantsBundle,
    ratio: f64,
) -> Result<Option<NeckCandidate>> {
    let l1 = constants.derived()?.l1;
    let s = &prep.surface;
    let k = s.model.curvature;
    let r_max = prep.trivial_radius_cap(z);
    if !(r_max > 0.0) {
        return Ok(None);
    }
    let sphere = s.grid.kind == GridKind::Sphere;
    let u_hi = radial_log(k, r_max);
    let u_lo = if sphere && z.is_pole() {
        -s.grid.s_end().abs().max(s.grid.s0.abs())
    } else {
        radial_log(k, 0.5 * s.face_radius(s.locate(z)))
    };
    let u_lo = if u_lo.is_finite() { u_lo.max(u_hi - 200.0) } else { u_hi - 200.0 };
    if u_hi - u_lo < l1 {
        return Ok(None);
    }
    let prof = s.radial_profile(z, u_lo, u_hi, ratio);
    let total = prof.total;
    let cap = constants.neck_mass();
    let half = 0.5 * constants.delta1;
    let ua = match prof.min_u_with_mass(half) {
        Some(u) => u,
        None => return Ok(None),
    };
    let mut u_cap = u_hi;
    if sphere {
        match prof.max_u_with_mass(total - half) {
            Some(u) => u_cap = u_cap.min(u),
            None => return Ok(None),
        }
    }
    let mut best: Option<(f64, f64)> = None;
    let starts = std::iter::once(ua).chain(prof.edges.iter().copied().filter(|&e| e > ua));
    for u_in in starts {
        if u_in >= u_cap {
            break;
        }
        let target = prof.mass_below(u_in) + cap;
        let u_out = match prof.max_u_with_mass(target) {
            Some(u) => u.min(u_cap),
            None => continue,
        };
        if best.is_none_or(|(a, b)| u_out - u_in > b - a) {
            best = Some((u_in, u_out));
        }
    }
    let (mut u_in, mut u_out) = match best {
        Some(b) if b.1 - b.0 >= l1 => b,
        _ => return Ok(None),
    };
    let step = 0.02;
    for _ in 0..400 {
        if u_out - u_in < l1 {
            return Ok(None);
        }
        let (r, ri) = (radial_log_inverse(k, u_out), radial_log_inverse(k, u_in));
        let (inner, mass, outer) = ring_masses(s, z, r, ri, total);
        if inner < half {
            u_in += step;
            continue;
        }
        if mass > cap || (sphere && outer < half) {
            u_out -= step;
            continue;
        }
        if !prep.admissible_trivial(z, r, ri) {
            return Ok(None);
        }
        let spec = AnnulusSpec::trivial(k, *z, r, ri)?.with_mass(mass);
        let modulus = radial_modulus(k, r, ri)?;
        return Ok(Some(NeckCandidate {
            id: 0,
            spec,
            mass,
            modulus,
            inner_mass: inner,
            outer_mass: outer,
            complement_stable: true,
            clean: true,
            source: NeckSource::Refined,
        }));
    }
    Ok(None)
}

fn family_dt(prep: &Prepared, fi: usize) -> f64 {
    match prep.families[fi].kind {
        FamilyKind::SphereBoundary => 0.05,
        _ => 0.25 * prep.surface.grid.ds,
    }
}

/// Complement stability of a family band `[t_a, t_b]` given side masses.
fn family_complement_stable(
    prep: &Prepared,
    fi: usize,
    inner: f64,
    mass: f64,
    outer: f64,
    constants: &ConstantsBundle,
) -> bool {
    match prep.families[fi].kind {
        FamilyKind::Collar => true,
        FamilyKind::TorusCore { .. } => component_stable(inner + outer, 0, 2, constants) && mass.is_finite(),
        FamilyKind::SphereBoundary => inner >= 0.5 * constants.delta1 && outer >= 0.5 * constants.delta1,
    }
}

fn family_candidate(
    prep: &Prepared,
    fi: usize,
    t_a: f64,
    t_b: f64,
    prof: &crate::surface::Profile,
    constants: &ConstantsBundle,
) -> Result<NeckCandidate> {
    let fam = &prep.families[fi];
    let mass = prof.mass_below(t_b) - prof.mass_below(t_a);
    let inner = prof.mass_below(t_a);
    let outer = prof.total - prof.mass_below(t_b);
    let (rho0, rho1) = (fam.profile.rho_of_t(t_a), fam.profile.rho_of_t(t_b));
    let spec = AnnulusSpec::cylinder(fi, fam.profile, rho0, rho1)?.with_mass(mass);
    Ok(NeckCandidate {
        id: 0,
        modulus: spec.modulus,
        spec,
        mass,
        inner_mass: inner,
        outer_mass: outer,
        complement_stable: family_complement_stable(prep, fi, inner, mass, outer, constants),
        clean: true,
        source: NeckSource::Family { family: fi },
    })
}

/// Long necks of one family: the longest window in each run of qualifying starts.
pub fn family_necks(prep: &Prepared, fi: usize, constants: &ConstantsBundle) -> Result<Vec<NeckCandidate>> {
    let l1 = constants.derived()?.l1;
    let cap = constants.neck_mass();
    let (t_lo, t_hi) = prep.search_t_bounds(fi);
    if t_hi - t_lo < l1 {
        return Ok(vec![]);
    }
    let fam = &prep.families[fi];
    let (full_lo, full_hi) = family_t_bounds(&prep.surface, fam);
    let dt = family_dt(prep, fi);
    let prof = prep.surface.family_profile(fam, full_lo, full_hi, dt);
    let boundary = prep.is_boundary_family(fi);
    let mut out = Vec::new();
    let mut run: Option<NeckCandidate> = None;
    let n = ((t_hi - t_lo) / dt).ceil() as usize;
    for i in 0..=n {
        let t_a = (t_lo + i as f64 * dt).min(t_hi);
        let mut t_b = match prof.max_u_with_mass(prof.mass_below(t_a) + cap) {
            Some(t) => t.min(t_hi),
            None => t_a,
        };
        if boundary && t_a < 0.0 {
            t_b = t_b.min(0.0);
        }
        let cand = if t_b - t_a >= l1 { Some(family_candidate(prep, fi, t_a, t_b, &prof, constants)?) } else { None };
        match cand {
            Some(c) if c.complement_stable && c.mass <= cap => {
                if run.as_ref().is_none_or(|r| c.modulus > r.modulus) {
                    run = Some(c);
                }
            }
            _ => {
                if let Some(r) = run.take() {
                    out.push(r);
                }
            }
        }
    }
    if let Some(r) = run.take() {
        out.push(r);
    }
    if boundary {
        let x_max = (-t_lo).min(t_hi);
        let sym = |x: f64| prof.mass_below(x) - prof.mass_below(-x);
        let (mut lo, mut hi) = (0.0, x_max);
        if sym(hi) <= cap {
            lo = hi;
        } else {
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if sym(mid) <= cap {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        if 2.0 * lo >= l1 {
            let c = family_candidate(prep, fi, -lo, lo, &prof, constants)?;
            if c.complement_stable {
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Long necks of the prepared surface, ordered by source.
pub fn find_long_necks(
    prep: &Prepared,
    constants: &ConstantsBundle,
    plan: &SearchPlan,
) -> Result<(Vec<NeckCandidate>, Vec<Incident>)> {
    let mut incidents = Vec::new();
    if prep.branch != Branch::Main {
        return Ok((vec![], incidents));
    }
    let centers = search_centers(prep, plan);
    let found: Vec<Result<Option<NeckCandidate>>> = centers
        .par_iter()
        .map(|&f| {
            let z = prep.surface.face_center(f);
            Ok(trivial_neck_at(prep, &z, constants, plan.sweep_ratio)?.map(|mut c| {
                c.source = NeckSource::Center { face: f };
                c
            }))
        })
        .collect();
    let mut necks = Vec::new();
    for r in found {
        if let Some(c) = r? {
            necks.push(c);
        }
    }
    let families = if prep.marking.is_some() { 1 } else { prep.families.len() };
    for fi in 0..families {
        necks.extend(family_necks(prep, fi, constants)?);
    }
    if necks.len() > plan.max_necks {
        let mut order: Vec<usize> = (0..necks.len()).collect();
        order.sort_by(|&a, &b| necks[b].modulus.total_cmp(&necks[a].modulus).then(a.cmp(&b)));
        let mut keep: Vec<usize> = order[..plan.max_necks].to_vec();
        keep.sort_unstable();
        incidents.push(Incident {
            kind: "truncated".into(),
            members: vec![],
            detail: format!("kept the {} longest of {} long necks", plan.max_necks, necks.len()),
        });
        necks = keep.into_iter().map(|i| necks[i].clone()).collect();
    }
    for (i, c) in necks.iter_mut().enumerate() {
        c.id = i;
    }
    Ok((necks, incidents))
}

// ---------------------------------------------------------------------------
// relations

/// Cached masks of an annulus: ring, and for trivial annuli the two disks.
#[derive(Clone, Debug)]
pub struct NeckMasks {
    pub ring: Region,
    pub outer: Option<Region>,
    pub inner: Option<Region>,
}

pub fn neck_masks(prep: &Prepared, spec: &AnnulusSpec) -> Result<NeckMasks> {
    let ring = prep.rasterize(spec)?;
    Ok(match spec.shape {
        AnnulusShape::Trivial { center, r, r_inner, .. } => NeckMasks {
            ring,
            outer: Some(prep.surface.disk_region(&center, r)),
            inner: Some(prep.surface.disk_region(&center, r_inner)),
        },
        _ => NeckMasks { ring, outer: None, inner: None },
    })
}

fn trivial_parts(spec: &AnnulusSpec) -> Option<(Point, f64, f64)> {
    match spec.shape {
        AnnulusShape::Trivial { center, r, r_inner, .. } => Some((center, r, r_inner)),
        _ => None,
    }
}

fn related_with(prep: &Prepared, a: &AnnulusSpec, b: &AnnulusSpec, ma: &NeckMasks, mb: &NeckMasks) -> bool {
    match (&a.shape, &b.shape) {
        (AnnulusShape::Cylinder { family: fa, .. }, AnnulusShape::Cylinder { family: fb, .. }) => fa == fb,
        (AnnulusShape::Trivial { center: p1, r_inner: q1, .. }, AnnulusShape::Trivial { center: p2, r_inner: q2, .. }) => {
            prep.surface.model.geodesic_distance(p1, p2) <= q1 + q2 && prep.surface.is_clean(&ma.ring.union(&mb.ring))
        }
        _ => false,
    }
}

pub fn topologically_related(prep: &Prepared, a: &AnnulusSpec, b: &AnnulusSpec) -> Result<bool> {
    Ok(related_with(prep, a, b, &neck_masks(prep, a)?, &neck_masks(prep, b)?))
}

/// Envelope `M(I1, I2)`: a round annulus when one exists, and always its mask.
#[derive(Clone, Debug)]
pub struct Envelope {
    pub spec: Option<AnnulusSpec>,
    pub region: Region,
    pub mass: f64,
}

fn cylinder_hull(prep: &Prepared, a: &AnnulusSpec, b: &AnnulusSpec) -> Result<AnnulusSpec> {
    match (&a.shape, &b.shape) {
        (
            AnnulusShape::Cylinder { family, profile, rho0: a0, rho1: a1 },
            AnnulusShape::Cylinder { rho0: b0, rho1: b1, .. },
        ) => {
            let (mut lo, mut hi) = (a0.min(*b0), a1.max(*b1));
            if prep.is_boundary_family(*family) && lo <= 0.0 && hi >= 0.0 {
                let m = hi.max(-lo);
                lo = -m;
                hi = m;
            }
            AnnulusSpec::cylinder(*family, *profile, lo, hi)
        }
        _ => Err(Error::Precondition("cylinder hull of non-cylinders".into())),
    }
}

fn envelope_with(prep: &Prepared, a: &AnnulusSpec, b: &AnnulusSpec, ma: &NeckMasks, mb: &NeckMasks) -> Result<Envelope> {
    match (&a.shape, &b.shape) {
        (AnnulusShape::Cylinder { .. }, AnnulusShape::Cylinder { .. }) => {
            let spec = cylinder_hull(prep, a, b)?;
            let region = prep.rasterize(&spec)?;
            let mass = prep.surface.measure_of(&region);
            Ok(Envelope { spec: Some(spec), region, mass })
        }
        (AnnulusShape::Trivial { .. }, AnnulusShape::Trivial { .. }) => {
            let (o1, i1) = (ma.outer.as_ref().unwrap(), ma.inner.as_ref().unwrap());
            let (o2, i2) = (mb.outer.as_ref().unwrap(), mb.inner.as_ref().unwrap());
            let region = o1.union(o2).difference(&i1.intersection(i2));
            let mass = prep.surface.measure_of(&region);
            let (p1, r1, q1) = trivial_parts(a).unwrap();
            let (p2, r2, q2) = trivial_parts(b).unwrap();
            let spec = if prep.surface.model.geodesic_distance(&p1, &p2) < 1e-12 {
                Some(AnnulusSpec::trivial(prep.surface.model.curvature, p1, r1.max(r2), q1.min(q2))?)
            } else {
                None
            };
            Ok(Envelope { spec, region, mass })
        }
        _ => Err(Error::Precondition("envelope of unrelated annuli".into())),
    }
}

pub fn envelope_m(prep: &Prepared, a: &AnnulusSpec, b: &AnnulusSpec) -> Result<Envelope> {
    let (ma, mb) = (neck_masks(prep, a)?, neck_masks(prep, b)?);
    if !related_with(prep, a, b, &ma, &mb) {
        return Err(Error::Precondition("envelope of unrelated annuli".into()));
    }
    envelope_with(prep, a, b, &ma, &mb)
}

/// Core `m(I1, I2)`: the hull for cylinders, `A(d(p2, dB1), r2', p2)` for
/// trivial annuli labelled so that `r2 <= r1`.
pub fn core_m(prep: &Prepared, a: &AnnulusSpec, b: &AnnulusSpec) -> Result<AnnulusSpec> {
    if !topologically_related(prep, a, b)? {
        return Err(Error::Precondition("core of unrelated annuli".into()));
    }
    match (trivial_parts(a), trivial_parts(b)) {
        (Some((p1, r1, q1)), Some((p2, r2, q2))) => {
            let ((p1, r1, _), (p2, _, q2)) = if r2 <= r1 { ((p1, r1, q1), (p2, r2, q2)) } else { ((p2, r2, q2), (p1, r1, q1)) };
            let d = prep.surface.model.geodesic_distance(&p1, &p2);
            AnnulusSpec::trivial(prep.surface.model.curvature, p2, r1 - d, q2)
        }
        _ => cylinder_hull(prep, a, b),
    }
}

pub fn similar(prep: &Prepared, a: &AnnulusSpec, b: &AnnulusSpec, constants: &ConstantsBundle) -> Result<bool> {
    let (ma, mb) = (neck_masks(prep, a)?, neck_masks(prep, b)?);
    if !related_with(prep, a, b, &ma, &mb) {
        return Ok(false);
    }
    Ok(envelope_with(prep, a, b, &ma, &mb)?.mass <= 0.5 * constants.delta2)
}

/// Pairwise envelope masses of related long necks.
#[derive(Clone, Debug)]
pub struct SimilarityTable {
    pub n: usize,
    /// `mu(M)` for related pairs, row-major.
    pub envelope_mass: Vec<Option<f64>>,
    pub threshold: f64,
}

impl SimilarityTable {
    pub fn build(prep: &Prepared, necks: &[NeckCandidate], masks: &[NeckMasks], constants: &ConstantsBundle) -> Result<Self> {
        let n = necks.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let vals: Vec<Result<Option<f64>>> = pairs
            .par_iter()
            .map(|&(i, j)| {
                let (a, b) = (&necks[i].spec, &necks[j].spec);
                if !related_with(prep, a, b, &masks[i], &masks[j]) {
                    return Ok(None);
                }
                Ok(Some(envelope_with(prep, a, b, &masks[i], &masks[j])?.mass))
            })
            .collect();
        let mut envelope_mass = vec![None; n * n];
        for i in 0..n {
            envelope_mass[i * n + i] = Some(necks[i].mass);
        }
        for (&(i, j), v) in pairs.iter().zip(vals) {
            let v = v?;
            envelope_mass[i * n + j] = v;
            envelope_mass[j * n + i] = v;
        }
        Ok(SimilarityTable { n, envelope_mass, threshold: 0.5 * constants.delta2 })
    }

    pub fn mass(&self, i: usize, j: usize) -> Option<f64> {
        self.envelope_mass[i * self.n + j]
    }

    pub fn similar(&self, i: usize, j: usize) -> bool {
        self.mass(i, j).is_some_and(|m| m <= self.threshold)
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.similar(i, j)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub kind: String,
    pub members: Vec<usize>,
    pub detail: String,
}

fn components(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let nx = p[y];
            p[y] = r;
            y = nx;
        }
        r
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for x in 0..n {
        let r = find(&mut parent, x);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(x);
    }
    groups
}

/// Components of the similarity graph, split at the weakest edge (largest
/// envelope mass) until every class is a clique.
pub fn equivalence_classes(table: &SimilarityTable) -> (Vec<Vec<usize>>, Vec<Incident>) {
    let n = table.n;
    let mut edges: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| table.similar(i, j)).collect();
    let mut incidents = Vec::new();
    loop {
        let classes = components(n, &edges);
        let mut bad: Option<(usize, usize)> = None;
        'outer: for c in &classes {
            for (x, &i) in c.iter().enumerate() {
                for &j in &c[x + 1..] {
                    if !table.similar(i, j) {
                        bad = Some((i, j));
                        break 'outer;
                    }
                }
            }
        }
        let (i, j) = match bad {
            None => return (classes, incidents),
            Some(p) => p,
        };
        let class: Vec<usize> = classes.into_iter().find(|c| c.contains(&i)).unwrap_or_default();
        let mut removed = Vec::new();
        loop {
            let k = edges
                .iter()
                .enumerate()
                .filter(|(_, e)| class.contains(&e.0))
                .max_by(|a, b| {
                    let ma = table.mass(a.1 .0, a.1 .1).unwrap_or(0.0);
                    let mb = table.mass(b.1 .0, b.1 .1).unwrap_or(0.0);
                    ma.total_cmp(&mb).then(b.0.cmp(&a.0))
                })
                .map(|(k, _)| k);
            let Some(k) = k else { break };
            removed.push(edges.remove(k));
            let comps = components(n, &edges);
            if !comps.iter().any(|c| c.contains(&i) && c.contains(&j)) {
                break;
            }
        }
        incidents.push(Incident {
            kind: "transitivity".into(),
            members: vec![i, j],
            detail: format!("split at {} weakest edge(s): {:?}", removed.len(), removed),
        });
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitivityReport {
    pub triples: usize,
    pub violations: usize,
    /// Intra-class pairs that are not similar after splitting.
    pub unresolved: usize,
}

/// Random triples `I1 ~ I2 ~ I3`, testing `I1 ~ I3`.
pub fn transitivity_check(table: &SimilarityTable, classes: &[Vec<usize>], triples: usize, seed: u64) -> TransitivityReport {
    let mut rep = TransitivityReport::default();
    for c in classes {
        for (x, &i) in c.iter().enumerate() {
            rep.unresolved += c[x + 1..].iter().filter(|&&j| !table.similar(i, j)).count();
        }
    }
    let nb: Vec<Vec<usize>> = (0..table.n).map(|i| table.neighbors(i)).collect();
    if table.n == 0 {
        return rep;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_616e_7369_7469);
    for _ in 0..triples {
        let j = rng.gen_range(0..table.n);
        let i = nb[j][rng.gen_range(0..nb[j].len())];
        let k = nb[j][rng.gen_range(0..nb[j].len())];
        rep.triples += 1;
        if !table.similar(i, k) {
            rep.violations += 1;
        }
    }
    rep
}

// ---------------------------------------------------------------------------
// selection

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceClass {
    pub id: usize,
    pub members: Vec<usize>,
    pub representative: NeckCandidate,
    /// `Mod / 2` of the representative.
    pub half_modulus: f64,
    pub side: Side,
    pub refined: bool,
    /// Refinement left the class and was undone.
    pub reverted: bool,
}

fn priority(a: &NeckCandidate, b: &NeckCandidate) -> std::cmp::Ordering {
    b.modulus.total_cmp(&a.modulus).then(a.mass.total_cmp(&b.mass)).then(a.id.cmp(&b.id))
}

fn similar_to_all(
    prep: &Prepared,
    cand: &NeckCandidate,
    members: &[usize],
    necks: &[NeckCandidate],
    masks: &[NeckMasks],
    constants: &ConstantsBundle,
) -> Result<bool> {
    let mc = neck_masks(prep, &cand.spec)?;
    for &m in members {
        let b = &necks[m].spec;
        if !related_with(prep, &cand.spec, b, &mc, &masks[m]) {
            return Ok(false);
        }
        if envelope_with(prep, &cand.spec, b, &mc, &masks[m])?.mass > 0.5 * constants.delta2 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Best member by (modulus desc, mass asc, id), refined by coordinate ascent.
pub fn select_maximal(
    prep: &Prepared,
    members: &[usize],
    necks: &[NeckCandidate],
    masks: &[NeckMasks],
    constants: &ConstantsBundle,
    plan: &SearchPlan,
) -> Result<(NeckCandidate, bool, bool)> {
    let best = members
        .iter()
        .map(|&i| &necks[i])
        .min_by(|a, b| priority(a, b))
        .ok_or_else(|| Error::Precondition("empty class".into()))?
        .clone();
    let mut cur = best.clone();
    let mut evals = 0;
    match cur.spec.shape {
        AnnulusShape::Trivial { center, .. } => {
            let mut z = center;
            let mut step = prep.surface.face_radius(prep.surface.locate(&z)).max(1e-300);
            while evals < plan.refine_budget && step > 0.0 {
                let mut moved = false;
                for k in 0..4 {
                    if evals >= plan.refine_budget {
                        break;
                    }
                    evals += 1;
                    let trial = prep.surface.exp_point(&z, step, k as f64 * 0.5 * PI);
                    if let Some(c) = trivial_neck_at(prep, &trial, constants, plan.sweep_ratio)? {
                        if c.modulus > cur.modulus + 1e-9 {
                            cur = NeckCandidate { id: best.id, source: NeckSource::Refined, ..c };
                            z = trial;
                            moved = true;
                            break;
                        }
                    }
                }
                if !moved {
                    step *= 0.5;
                    evals += 1;
                }
            }
        }
        AnnulusShape::Cylinder { family, .. } => {
            let fam = &prep.families[family];
            let (full_lo, full_hi) = family_t_bounds(&prep.surface, fam);
            let (t_lo, t_hi) = prep.search_t_bounds(family);
            let dt = 0.25 * family_dt(prep, family);
            let prof = prep.surface.family_profile(fam, full_lo, full_hi, dt);
            let boundary = prep.is_boundary_family(family);
            let (mut a, mut b) = match cur.spec.shape {
                AnnulusShape::Cylinder { rho0, rho1, .. } => (fam.profile.t_of_rho(rho0), fam.profile.t_of_rho(rho1)),
                _ => unreachable!(),
            };
            let symmetric = boundary && (a + b).abs() < 1e-9;
            while evals < plan.refine_budget {
                evals += 1;
                let (na, nb) = if symmetric { (a - dt, b + dt) } else if evals % 2 == 0 { (a - dt, b) } else { (a, b + dt) };
                if na < t_lo || nb > t_hi || (boundary && !symmetric && na < 0.0 && nb > 0.0) {
                    continue;
                }
                let c = family_candidate(prep, family, na, nb, &prof, constants)?;
                if c.mass <= constants.neck_mass() && c.complement_stable && c.modulus > cur.modulus {
                    a = na;
                    b = nb;
                    cur = NeckCandidate { id: best.id, source: best.source, ..c };
                }
            }
        }
    }
    let refined = cur.modulus > best.modulus;
    if refined && !similar_to_all(prep, &cur, members, necks, masks, constants)? {
        return Ok((best, false, true));
    }
    Ok((cur, refined, false))
}

/// `C(K1, K1; I1)` and `C(K1, K1; I2)` have disjoint masks.
pub fn essentially_disjoint(prep: &Prepared, a: &AnnulusSpec, b: &AnnulusSpec, constants: &ConstantsBundle) -> Result<bool> {
    let k1 = constants.derived()?.k1;
    let ta = prep.rasterize(&a.trim(k1, k1)?)?;
    let tb = prep.rasterize(&b.trim(k1, k1)?)?;
    Ok(!ta.intersects(&tb))
}

// ---------------------------------------------------------------------------
// decomposition

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Class,
    Conjugate,
    Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThinAnnulus {
    /// Class index, `None` for the reference cylinder.
    pub class: Option<usize>,
    pub provenance: Provenance,
    pub representative: AnnulusSpec,
    /// `C(2 K1, 2 K1; I)` with its mask mass.
    pub thin: AnnulusSpec,
    pub faces: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThickComponent {
    pub index: usize,
    pub faces: usize,
    pub mass: f64,
    pub genus: u32,
    pub boundaries: usize,
    pub euler: i64,
    pub stable: bool,
    pub exterior: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaximalityAudit {
    pub samples: usize,
    /// Annuli of modulus at least `L1` actually tested.
    pub tested: usize,
    /// No admissible annulus of modulus `L1` fits at the sampled centre.
    pub vacuous: usize,
    /// The sampled annulus left its thick component.
    pub outside: usize,
    pub long_necks: usize,
    pub counterexample: Option<AnnulusSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpotCheck {
    pub checked: usize,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Audits {
    pub stable: bool,
    pub unstable_components: Vec<usize>,
    pub maximality: MaximalityAudit,
    /// Pairwise `K1`-trim masks of the thin annuli are disjoint.
    pub disjoint: bool,
    pub conjugation_invariant: Option<bool>,
    pub transitivity: TransitivityReport,
    /// `Mod m > max Mod + 2 L0` on essentially disjoint similar pairs.
    pub core_growth: SpotCheck,
    /// `M = I1 u I2 u C(L, L; m)` up to one cell on related trivial pairs.
    pub envelope_identity: SpotCheck,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSummary {
    pub case: u8,
    pub k0: f64,
    pub p: Point,
    pub q: Point,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleDecomposition {
    pub schema: u32,
    /// Hash of the input surface, filled by callers that have one.
    #[serde(default)]
    pub surface_hash: Option<String>,
    pub branch: Branch,
    pub constants: ConstantsBundle,
    pub plan: SearchPlan,
    pub normalization: Option<NormalizationSummary>,
    pub marking: Option<TorusMarking>,
    pub families: Vec<CylinderFamily>,
    pub long_necks: Vec<NeckCandidate>,
    pub classes: Vec<EquivalenceClass>,
    pub incidents: Vec<Incident>,
    pub thin: Vec<ThinAnnulus>,
    pub thick: Vec<ThickComponent>,
    pub audits: Audits,
}

impl BubbleDecomposition {
    /// Error carrying the first failing audit and its counterexample.
    pub fn ensure_pass(&self) -> Result<()> {
        let a = &self.audits;
        if a.pass {
            return Ok(());
        }
        let mut why = Vec::new();
        if !a.stable {
            why.push(format!("unstable thick components {:?}", a.unstable_components));
        }
        if a.maximality.long_necks > 0 {
            why.push(format!("long neck in a thick component: {:?}", a.maximality.counterexample));
        }
        if !a.disjoint {
            why.push("thin annuli are not essentially disjoint".into());
        }
        if a.conjugation_invariant == Some(false) {
            why.push("thin set is not conjugation invariant".into());
        }
        Err(Error::Audit(why.join("; ")))
    }

    pub fn thin_specs(&self) -> Vec<AnnulusSpec> {
        self.thin.iter().map(|t| t.thin.clone()).collect()
    }
}

/// Union of the thin masks.
pub fn thin_region(prep: &Prepared, thin: &[AnnulusSpec]) -> Result<Region> {
    let mut out = Region::empty(prep.surface.num_faces());
    for t in thin {
        out = out.union(&prep.rasterize(t)?);
    }
    Ok(out)
}

pub fn thick_components(prep: &Prepared, thick: &Region, constants: &ConstantsBundle) -> Result<Vec<ThickComponent>> {
    let topo = prep.surface.region_topology(thick)?;
    Ok(topo
        .components
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let mass: f64 = c.faces.iter().map(|&f| prep.surface.face_mass(f)).sum();
            ThickComponent {
                index,
                faces: c.faces.len(),
                mass,
                genus: c.genus,
                boundaries: c.boundaries,
                euler: c.euler,
                stable: component_stable(mass, c.genus, c.boundaries, constants),
                exterior: c.faces.iter().any(|&f| prep.surface.is_exterior(f)),
            }
        })
        .collect())
}

/// Random admissible annuli of modulus at least `L1` inside thick components.
pub fn maximality_audit(
    prep: &Prepared,
    thick: &Region,
    constants: &ConstantsBundle,
    samples: usize,
    seed: u64,
) -> Result<MaximalityAudit> {
    let l1 = constants.derived()?.l1;
    let s = &prep.surface;
    let k = s.model.curvature;
    let topo = s.region_topology(thick)?;
    let mut comp_of = vec![usize::MAX; s.num_faces()];
    for (ci, c) in topo.components.iter().enumerate() {
        for &f in &c.faces {
            comp_of[f] = ci;
        }
    }
    let pool: Vec<usize> = thick.faces().into_iter().filter(|&f| !s.is_exterior(f)).collect();
    let mut audit = MaximalityAudit { samples, ..Default::default() };
    if pool.is_empty() {
        audit.vacuous = samples;
        return Ok(audit);
    }
    let total = s.total_mass();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_7869_6d61_6c21);
    let n_family = if prep.families.is_empty() { 0 } else { samples / 4 };
    let draws: Vec<(usize, f64, f64, f64, f64)> = (0..samples - n_family)
        .map(|_| (pool[rng.gen_range(0..pool.len())], rng.gen(), rng.gen(), rng.gen(), rng.gen()))
        .collect();
    let results: Vec<Result<(u8, Option<AnnulusSpec>)>> = draws
        .par_iter()
        .map(|&(f, a, b, c, d)| {
            let g = &s.grid;
            let mut z = s.face_center(f);
            if f < s.num_cells() {
                z = Point::new(z.s + (a - 0.5) * g.ds, z.theta + (b - 0.5) * g.dtheta());
            }
            let r_max = prep.trivial_radius_cap(&z);
            if !(r_max > 0.0) {
                return Ok((0, None));
            }
            let u_hi = radial_log(k, r_max);
            let u_lo = if z.is_pole() { -g.s0.abs().max(g.s_end().abs()) } else { radial_log(k, 0.5 * s.face_radius(s.locate(&z))) };
            let u_lo = if u_lo.is_finite() { u_lo.max(u_hi - 200.0) } else { u_hi - 200.0 };
            if u_hi - u_lo < l1 {
                return Ok((0, None));
            }
            let u_in = u_lo + c * (u_hi - u_lo - l1);
            let u_out = u_in + l1 + d * (u_hi - u_in - l1);
            let (r, ri) = (radial_log_inverse(k, u_out), radial_log_inverse(k, u_in));
            if !prep.admissible_trivial(&z, r, ri) {
                return Ok((0, None));
            }
            let spec = AnnulusSpec::trivial(k, z, r, ri)?;
            let ring = prep.rasterize(&spec)?;
            let ci = comp_of[s.locate(&z)];
            if ci == usize::MAX || ring.faces().iter().any(|&x| comp_of[x] != ci) {
                return Ok((2, None));
            }
            let (inner, mass, outer) = ring_masses(s, &z, r, ri, total);
            let sphere = s.grid.kind == GridKind::Sphere;
            let long = mass <= constants.neck_mass()
                && inner >= 0.5 * constants.delta1
                && (!sphere || outer >= 0.5 * constants.delta1)
                && s.is_clean(&ring);
            Ok((1, if long { Some(spec.with_mass(mass)) } else { None }))
        })
        .collect();
    for r in results {
        let (kind, neck) = r?;
        match kind {
            0 => audit.vacuous += 1,
            2 => audit.outside += 1,
            _ => {
                audit.tested += 1;
                if let Some(n) = neck {
                    audit.long_necks += 1;
                    audit.counterexample.get_or_insert(n);
                }
            }
        }
    }
    for i in 0..n_family {
        let fi = i % if prep.marking.is_some() { 1 } else { prep.families.len() };
        let fam = &prep.families[fi];
        let (t_lo, t_hi) = prep.search_t_bounds(fi);
        if t_hi - t_lo < l1 {
            audit.vacuous += 1;
            continue;
        }
        let len = l1 + rng.gen::<f64>() * (t_hi - t_lo - l1);
        let t_a = t_lo + rng.gen::<f64>() * (t_hi - t_lo - len);
        let (mut a, mut b) = (t_a, t_a + len);
        if prep.is_boundary_family(fi) && a < 0.0 && b > 0.0 {
            if rng.gen::<bool>() {
                let x = len.min(2.0 * (-t_lo).min(t_hi)) * 0.5;
                a = -x;
                b = x;
            } else if -a > b {
                b = 0.0;
            } else {
                a = 0.0;
            }
            if b - a < l1 {
                audit.vacuous += 1;
                continue;
            }
        }
        let spec = AnnulusSpec::cylinder(fi, fam.profile, fam.profile.rho_of_t(a), fam.profile.rho_of_t(b))?;
        let ring = prep.rasterize(&spec)?;
        let comps: std::collections::BTreeSet<usize> = ring.faces().iter().map(|&x| comp_of[x]).collect();
        if comps.len() != 1 || comps.contains(&usize::MAX) {
            audit.outside += 1;
            continue;
        }
        audit.tested += 1;
        let mass = s.measure_of(&ring);
        let (full_lo, full_hi) = family_t_bounds(s, fam);
        let prof = s.family_profile(fam, full_lo, full_hi, family_dt(prep, fi));
        let inner = prof.mass_below(a);
        let outer = prof.total - prof.mass_below(b);
        if mass <= constants.neck_mass() && family_complement_stable(prep, fi, inner, mass, outer, constants) {
            audit.long_necks += 1;
            audit.counterexample.get_or_insert(spec.with_mass(mass));
        }
    }
    Ok(audit)
}

/// Spot checks of the core growth and envelope identity on up to `limit` pairs.
fn spot_checks(
    prep: &Prepared,
    necks: &[NeckCandidate],
    masks: &[NeckMasks],
    table: &SimilarityTable,
    constants: &ConstantsBundle,
    limit: usize,
) -> Result<(SpotCheck, SpotCheck)> {
    let d = constants.derived()?;
    let mut growth = SpotCheck::default();
    let mut ident = SpotCheck::default();
    let n = necks.len();
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| table.mass(i, j).is_some()).collect();
    let stride = (pairs.len() / limit.max(1)).max(1);
    for &(i, j) in pairs.iter().step_by(stride) {
        let (a, b) = (&necks[i].spec, &necks[j].spec);
        let m = match core_m(prep, a, b) {
            Ok(m) => m,
            Err(_) => continue,
        };
        if table.similar(i, j) && essentially_disjoint(prep, a, b, constants)? {
            growth.checked += 1;
            if m.modulus <= necks[i].modulus.max(necks[j].modulus) + 2.0 * d.l0 - 0.1 {
                growth.violations += 1;
            }
        }
        let l = d.l0;
        if a.is_trivial() && b.is_trivial() && m.modulus > 2.0 * l {
            ident.checked += 1;
            let env = envelope_with(prep, a, b, &masks[i], &masks[j])?;
            let mid = prep.rasterize(&m.trim(l, l)?)?;
            let union = masks[i].ring.union(&masks[j].ring).union(&mid);
            let cx = prep.surface.complex();
            let bad = (0..prep.surface.num_faces()).any(|f| {
                if env.region.mask[f] == union.mask[f] {
                    return false;
                }
                let nb = cx.neighbors(f);
                !nb.iter().any(|&g| env.region.mask[g] != env.region.mask[f] || union.mask[g] != union.mask[f])
            });
            if bad {
                ident.violations += 1;
            }
        }
    }
    Ok((growth, ident))
}

/// Assemble the maximal decomposition with its audits; see
/// [`BubbleDecomposition::ensure_pass`] for the failing case.
pub fn build_decomposition(prep: &Prepared, constants: &ConstantsBundle, plan: &SearchPlan) -> Result<BubbleDecomposition> {
    let d = constants.derived()?.clone();
    let (necks, mut incidents) = find_long_necks(prep, constants, plan)?;
    let masks: Vec<NeckMasks> = necks.par_iter().map(|c| neck_masks(prep, &c.spec)).collect::<Result<_>>()?;
    let table = SimilarityTable::build(prep, &necks, &masks, constants)?;
    let (groups, split) = equivalence_classes(&table);
    incidents.extend(split);
    let transitivity = transitivity_check(&table, &groups, plan.transitivity_triples, plan.seed);
    let mut classes = Vec::new();
    for (id, members) in groups.iter().enumerate() {
        let (rep, refined, reverted) = select_maximal(prep, members, &necks, &masks, constants, plan)?;
        if reverted {
            incidents.push(Incident {
                kind: "refinement-reverted".into(),
                members: members.clone(),
                detail: "refined representative left its class".into(),
            });
        }
        classes.push(EquivalenceClass {
            id,
            members: members.clone(),
            half_modulus: 0.5 * rep.modulus,
            side: prep.side(&rep.spec),
            representative: rep,
            refined,
            reverted,
        });
    }

    // candidates for B-tilde in priority order
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by(|&a, &b| priority(&classes[a].representative, &classes[b].representative));
    let mut chosen: Vec<(Option<usize>, Provenance, AnnulusSpec)> = Vec::new();
    if let Some(m) = &prep.marking {
        if prep.branch == Branch::Main && m.i0.modulus >= d.l1 {
            chosen.push((None, Provenance::Reference, m.i0.clone()));
        }
    }
    let mut trims: Vec<Region> = chosen
        .iter()
        .map(|c| prep.rasterize(&c.2.trim(d.k1, d.k1)?))
        .collect::<Result<_>>()?;
    for &ci in &order {
        let c = &classes[ci];
        let mut group = vec![(Some(ci), Provenance::Class, c.representative.spec.clone())];
        match c.side {
            Side::Lower => {
                incidents.push(Incident {
                    kind: "conjugate-half".into(),
                    members: c.members.clone(),
                    detail: format!("class {ci} lies in the lower half; its conjugate represents it"),
                });
                continue;
            }
            Side::Upper => group.push((Some(ci), Provenance::Conjugate, prep.conjugate(&c.representative.spec))),
            Side::Symmetric => {}
        }
        let gtrims: Vec<Region> = group.iter().map(|g| prep.rasterize(&g.2.trim(d.k1, d.k1)?)).collect::<Result<_>>()?;
        let conflict = gtrims.iter().any(|t| trims.iter().any(|u| t.intersects(u)))
            || (gtrims.len() == 2 && gtrims[0].intersects(&gtrims[1]));
        if conflict {
            incidents.push(Incident {
                kind: "essential-overlap".into(),
                members: c.members.clone(),
                detail: format!("class {ci} dropped: its trimmed representative meets a selected one"),
            });
            continue;
        }
        if prep.surface.grid.kind == GridKind::Torus {
            let cover = trims.iter().chain(gtrims.iter()).fold(Region::empty(prep.surface.num_faces()), |acc, t| acc.union(t));
            let rasters: Vec<Region> = chosen.iter().map(|c| prep.rasterize(&c.2)).collect::<Result<_>>()?;
            let full = rasters.iter().chain(std::iter::once(&prep.rasterize(&group[0].2)?)).fold(cover, |acc, t| acc.union(t));
            if full.count() as f64 >= 0.99 * prep.surface.num_faces() as f64 && !chosen.is_empty() {
                incidents.push(Incident {
                    kind: "torus-cover".into(),
                    members: c.members.clone(),
                    detail: format!("class {ci} and the selection cover the torus; handled by the marking"),
                });
                continue;
            }
        }
        trims.extend(gtrims);
        chosen.extend(group);
    }

    let mut thin = Vec::new();
    for (class, provenance, rep) in chosen {
        let t = rep.trim(2.0 * d.k1, 2.0 * d.k1)?;
        let region = prep.rasterize(&t)?;
        let mass = prep.surface.measure_of(&region);
        thin.push(ThinAnnulus { class, provenance, representative: rep, faces: region.count(), thin: t.with_mass(mass) });
    }
    let thin_specs: Vec<AnnulusSpec> = thin.iter().map(|t| t.thin.clone()).collect();
    let thin_mask = thin_region(prep, &thin_specs)?;
    let thick = thin_mask.complement();
    let components = thick_components(prep, &thick, constants)?;
    let unstable: Vec<usize> = components.iter().filter(|c| !c.stable).map(|c| c.index).collect();
    let maximality = maximality_audit(prep, &thick, constants, plan.audit_samples, plan.seed)?;
    let mut disjoint = true;
    for i in 0..thin.len() {
        for j in i + 1..thin.len() {
            if !essentially_disjoint(prep, &thin[i].representative, &thin[j].representative, constants)? {
                disjoint = false;
            }
        }
    }
    let conjugation_invariant = prep.surface.involution.map(|_| prep.surface.is_symmetric(&thin_mask));
    let (core_growth, envelope_identity) = spot_checks(prep, &necks, &masks, &table, constants, 200)?;
    let pass = unstable.is_empty() && maximality.long_necks == 0 && disjoint && conjugation_invariant != Some(false);
    let normalization = prep.normalization.as_ref().map(|n| NormalizationSummary {
        case: n.case,
        k0: n.k0,
        p: n.p,
        q: n.q,
        scale: n.mobius.scale,
    });
    Ok(BubbleDecomposition {
        schema: 1,
        surface_hash: None,
        branch: prep.branch.clone(),
        constants: constants.clone(),
        plan: plan.clone(),
        normalization,
        marking: prep.marking.clone(),
        families: prep.families.clone(),
        long_necks: necks,
        classes,
        incidents,
        thin,
        thick: components,
        audits: Audits {
            stable: unstable.is_empty(),
            unstable_components: unstable,
            maximality,
            disjoint,
            conjugation_invariant,
            transitivity,
            core_growth,
            envelope_identity,
            pass,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k3_value() {
        assert!((k3().unwrap() - 1.954).abs() < 1e-3);
    }

    #[test]
    fn tower_defaults() {
        let c = derive_constants(&ConstantsBundle::default()).unwrap();
        let d = c.derived().unwrap();
        assert!((d.k1 - PI * (E - 1.0)).abs() < 1e-12);
        assert!((d.l1 - 4.0 * d.l0).abs() < 1e-12);
        assert!((d.l0 - 1.01 * d.k2).abs() < 1e-12);
        assert!(d.k1 >= c.c2 + PI);
    }

    #[test]
    fn override_below_floor_rejected() {
        let c = ConstantsBundle::default();
        assert!(derive_constants_with(&c, Some(4.0)).is_err());
        let d = derive_constants_with(&c, Some(5.0)).unwrap();
        assert_eq!(d.derived().unwrap().k1, 5.0);
    }

    #[test]
    fn torus_bound_condition() {
        let c = derive_constants(&ConstantsBundle::default()).unwrap();
        let b = trivial_torus_bound(&c, 1.0).unwrap();
        assert!(4.0 * PI * b.l < c.c2 + PI + b.x);
        assert!(4.0 * PI * (b.l - 1e-6) >= c.c2 + PI + b.x - 0.011 || b.x == 0.0);
    }

    #[test]
    fn classes_split_weakest_edge() {
        // 0~1 (mass .1), 1~2 (mass .15), 0 !~ 2
        let n = 3;
        let mut envelope_mass = vec![None; 9];
        for i in 0..3 {
            envelope_mass[i * 3 + i] = Some(0.0);
        }
        envelope_mass[1] = Some(0.1);
        envelope_mass[3] = Some(0.1);
        envelope_mass[5] = Some(0.15);
        envelope_mass[7] = Some(0.15);
        let t = SimilarityTable { n, envelope_mass, threshold: 0.2 };
        let (classes, incidents) = equivalence_classes(&t);
        assert_eq!(classes, vec![vec![0, 1], vec![2]]);
        assert_eq!(incidents.len(), 1);
    }
}
