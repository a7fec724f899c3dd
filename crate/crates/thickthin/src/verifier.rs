//! Adaptedness audit of a bubble decomposition.
//!
//! The thick components are the vertices of a dual graph whose edges are the
//! thin annuli. Each vertex is measured in its rescaled metric
//! `h_v = s_v^2 h` with `s_v = 2 (g_v + 1) / d_v`; the existence constants
//! `(a, b)` are fitted rather than compared with fixed values.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::axioms::{component_stable, decay_profile, is_stable, standard_density, ConstantsBundle, DecayFit};
use crate::decomposer::{prepare, BubbleDecomposition, Incident, Prepared, Provenance};
use crate::geometry::{h_theta, radial_log, radial_log_inverse, AnnulusShape, AnnulusSpec, Curvature};
use crate::surface::{FamilyKind, MeasuredSurface, Region};
use crate::tolerances::{MARGIN_REL, MASS_PARTITION_REL};
use crate::{Error, Result};

/// Relative slack of the thin exponent against `c3`.
pub const THIN_EXPONENT_SLACK: f64 = 0.2;
/// Points sampled on a boundary circle.
const CIRCLE_SAMPLES: usize = 128;
/// Random annuli offered to the `f1` fit.
pub const F1_SAMPLES: usize = 400;

// ---------------------------------------------------------------------------
// boundary circles

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum End {
    Inner,
    Outer,
}

/// A boundary circle of a thin annulus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Circle {
    /// Geodesic circle of radius `radius` about `center`.
    Radial { curvature: Curvature, center: crate::geometry::Point, radius: f64 },
    /// Level `rho` of a cylinder family.
    Level { family: usize, rho: f64 },
}

impl Circle {
    pub fn of(spec: &AnnulusSpec, end: End) -> Circle {
        match (&spec.shape, end) {
            (AnnulusShape::Trivial { curvature, center, r_inner, .. }, End::Inner) => {
                Circle::Radial { curvature: *curvature, center: *center, radius: *r_inner }
            }
            (AnnulusShape::Trivial { curvature, center, r, .. }, End::Outer) => {
                Circle::Radial { curvature: *curvature, center: *center, radius: *r }
            }
            (AnnulusShape::Cylinder { family, rho0, .. }, End::Inner) => Circle::Level { family: *family, rho: *rho0 },
            (AnnulusShape::Cylinder { family, rho1, .. }, End::Outer) => Circle::Level { family: *family, rho: *rho1 },
        }
    }

    pub fn length(&self, prep: &Prepared) -> f64 {
        match self {
            Circle::Radial { curvature, radius, .. } => TAU * h_theta(*curvature, radius.min(PI)).unwrap_or(0.0),
            Circle::Level { family, rho } => TAU * prep.families[*family].profile.h_theta(*rho),
        }
    }

    pub fn points(&self, prep: &Prepared, n: usize) -> Vec<crate::geometry::Point> {
        let s = &prep.surface;
        (0..n)
            .map(|k| {
                let phi = TAU * (k as f64 + 0.5) / n as f64;
                match self {
                    Circle::Radial { center, radius, .. } => s.exp_point(center, *radius, phi),
                    Circle::Level { family, rho } => {
                        let fam = &prep.families[*family];
                        s.family_point(fam, fam.profile.t_of_rho(*rho), phi)
                    }
                }
            })
            .collect()
    }

    /// Distance from a point to the circle.
    pub fn distance(&self, prep: &Prepared, p: &crate::geometry::Point) -> f64 {
        let s = &prep.surface;
        match self {
            Circle::Radial { center, radius, .. } => (s.model.geodesic_distance(center, p) - radius).abs(),
            Circle::Level { family, rho } => {
                let fam = &prep.families[*family];
                let d = (s.family_rho(fam, p) - rho).abs();
                match fam.kind {
                    FamilyKind::TorusCore { .. } => {
                        let period = s.lambda(0.0) * s.grid.ds * s.grid.rows as f64;
                        d.min(period - d)
                    }
                    _ => d,
                }
            }
        }
    }

    pub fn contractible(&self, prep: &Prepared) -> bool {
        match self {
            Circle::Radial { .. } => true,
            Circle::Level { .. } => prep.surface.genus == 0,
        }
    }

    /// Extrinsic diameter.
    pub fn diameter(&self, prep: &Prepared) -> f64 {
        match self {
            Circle::Radial { curvature: Curvature::Positive, radius, .. } => 2.0 * radius.min(PI - radius),
            Circle::Radial { radius, .. } => 2.0 * radius,
            Circle::Level { .. } => {
                let pts = self.points(prep, 64);
                let mut d: f64 = 0.0;
                for i in 0..pts.len() {
                    for j in i + 1..pts.len() {
                        d = d.max(prep.surface.model.geodesic_distance(&pts[i], &pts[j]));
                    }
                }
                d
            }
        }
    }

    /// Faces strictly on the far side of the circle from `end`.
    fn far_side(&self, prep: &Prepared, end: End) -> Region {
        let s = &prep.surface;
        let n = s.num_faces();
        Region {
            mask: (0..n)
                .map(|f| {
                    if s.is_exterior(f) {
                        return false;
                    }
                    let c = s.face_center(f);
                    let beyond = match self {
                        Circle::Radial { center, radius, .. } => s.face_distance(center, f) >= *radius,
                        Circle::Level { family, rho } => s.family_rho(&prep.families[*family], &c) >= *rho,
                    };
                    match end {
                        End::Inner => beyond,
                        End::Outer => !beyond,
                    }
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// dual graph

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfEdge {
    pub id: usize,
    pub thin: usize,
    pub end: End,
    pub vertex: Option<usize>,
    pub circle: Circle,
    /// Thick faces along the circle.
    pub faces: usize,
    pub length: f64,
    pub diameter: f64,
    pub contractible: bool,
    pub external: bool,
    /// The diameter comparison fell within the one-cell tolerance.
    pub tie: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualVertex {
    pub component: usize,
    pub faces: usize,
    pub mass: f64,
    pub genus: u32,
    pub boundaries: usize,
    pub euler: i64,
    pub diameter: f64,
    pub half_edges: Vec<usize>,
    pub external: Vec<usize>,
    pub internal: Vec<usize>,
    pub closure_faces: usize,
    pub closure_genus: u32,
}

impl DualVertex {
    /// `2 genus(Cl) + |E_v|`.
    pub fn m(&self) -> usize {
        2 * self.closure_genus as usize + self.external.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualEdge {
    pub thin: usize,
    pub half_edges: [usize; 2],
    pub is_loop: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualGraph {
    pub vertices: Vec<DualVertex>,
    pub half_edges: Vec<HalfEdge>,
    pub edges: Vec<DualEdge>,
    pub incidents: Vec<Incident>,
    /// Number of external/internal decisions decided within the tolerance.
    pub ties: usize,
    #[serde(skip)]
    pub components: Vec<Vec<usize>>,
    #[serde(skip)]
    pub closures: Vec<Region>,
    #[serde(skip)]
    pub thin_masks: Vec<Region>,
}

impl DualGraph {
    pub fn loops(&self) -> usize {
        self.edges.iter().filter(|e| e.is_loop).count()
    }
}

pub fn dual_graph(prep: &Prepared, decomposition: &BubbleDecomposition) -> Result<DualGraph> {
    let s = &prep.surface;
    let n = s.num_faces();
    let thin_masks: Vec<Region> = decomposition.thin.iter().map(|t| prep.rasterize(&t.thin)).collect::<Result<_>>()?;
    let thin_union = thin_masks.iter().fold(Region::empty(n), |acc, t| acc.union(t));
    let thick = thin_union.complement();
    let topo = s.region_topology(&thick)?;
    let mut comp_of = vec![usize::MAX; n];
    for (ci, c) in topo.components.iter().enumerate() {
        for &f in &c.faces {
            comp_of[f] = ci;
        }
    }
    let mut incidents = Vec::new();
    let mut half_edges = Vec::new();
    let mut edges = Vec::new();
    for (li, t) in decomposition.thin.iter().enumerate() {
        let mut near = BTreeMap::new();
        for f in thin_masks[li].faces() {
            for g in s.complex().neighbors(f) {
                if thick.mask[g] {
                    near.insert(g, ());
                }
            }
        }
        let inner = Circle::of(&t.thin, End::Inner);
        let outer = Circle::of(&t.thin, End::Outer);
        let mut sides: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for &g in near.keys() {
            let side = if s.is_exterior(g) {
                match &t.thin.shape {
                    AnnulusShape::Cylinder { .. } if s.face_center(g).s < 0.0 => 0,
                    _ => 1,
                }
            } else {
                let c = s.face_center(g);
                if inner.distance(prep, &c) <= outer.distance(prep, &c) {
                    0
                } else {
                    1
                }
            };
            sides[side].push(g);
        }
        let mut ids = [0usize; 2];
        for (k, end) in [End::Inner, End::Outer].into_iter().enumerate() {
            let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
            for &g in &sides[k] {
                *votes.entry(comp_of[g]).or_default() += 1;
            }
            if votes.len() > 1 {
                incidents.push(Incident {
                    kind: "split-boundary".into(),
                    members: vec![li],
                    detail: format!("{end:?} circle of thin annulus {li} touches components {:?}", votes.keys().collect::<Vec<_>>()),
                });
            }
            let vertex = votes.iter().max_by_key(|(c, v)| (**v, std::cmp::Reverse(**c))).map(|(c, _)| *c);
            if vertex.is_none() {
                incidents.push(Incident {
                    kind: "open-end".into(),
                    members: vec![li],
                    detail: format!("{end:?} circle of thin annulus {li} has no thick neighbour"),
                });
            }
            let circle = if k == 0 { inner.clone() } else { outer.clone() };
            ids[k] = half_edges.len();
            half_edges.push(HalfEdge {
                id: ids[k],
                thin: li,
                end,
                vertex,
                length: circle.length(prep),
                diameter: circle.diameter(prep),
                contractible: circle.contractible(prep),
                circle,
                faces: sides[k].len(),
                external: false,
                tie: false,
            });
        }
        let (a, b) = (half_edges[ids[0]].vertex, half_edges[ids[1]].vertex);
        edges.push(DualEdge { thin: li, half_edges: ids, is_loop: a.is_some() && a == b });
    }

    let mut vertices = Vec::new();
    let mut closures = Vec::new();
    let mut ties = 0;
    for (ci, c) in topo.components.iter().enumerate() {
        let region = Region::from_faces(n, &c.faces);
        let diameter = s.diameter(&region)?;
        let mass: f64 = c.faces.iter().map(|&f| s.face_mass(f)).sum();
        let mine: Vec<usize> = half_edges.iter().filter(|h| h.vertex == Some(ci)).map(|h| h.id).collect();
        let (mut external, mut internal) = (Vec::new(), Vec::new());
        let mut closure = region.clone();
        for &h in &mine {
            let tol = cell_tolerance(prep, &half_edges[h]);
            let he = &mut half_edges[h];
            let gap = diameter - he.diameter;
            he.tie = he.contractible && gap.abs() <= tol;
            if he.tie {
                ties += 1;
            }
            he.external = !he.contractible || gap <= tol;
            if he.external {
                external.push(h);
            } else {
                internal.push(h);
                closure = closure.union(&he.circle.far_side(prep, he.end));
            }
        }
        let ctopo = s.region_topology(&closure)?;
        let closure_genus = ctopo.components.iter().map(|c| c.genus).max().unwrap_or(0);
        vertices.push(DualVertex {
            component: ci,
            faces: c.faces.len(),
            mass,
            genus: c.genus,
            boundaries: c.boundaries,
            euler: c.euler,
            diameter,
            half_edges: mine,
            external,
            internal,
            closure_faces: closure.count(),
            closure_genus,
        });
        closures.push(closure);
    }
    Ok(DualGraph {
        vertices,
        half_edges,
        edges,
        incidents,
        ties,
        components: topo.components.iter().map(|c| c.faces.clone()).collect(),
        closures,
        thin_masks,
    })
}

/// One cell across the circle: the largest face diameter along it.
fn cell_tolerance(prep: &Prepared, he: &HalfEdge) -> f64 {
    let s = &prep.surface;
    he.circle
        .points(prep, 32)
        .iter()
        .map(|p| s.locate(p))
        .filter(|&f| !s.is_exterior(f))
        .map(|f| 2.0 * s.face_radius(f))
        .filter(|r| r.is_finite())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// thin part

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayConstants {
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThinReport {
    pub index: usize,
    pub class: Option<usize>,
    pub provenance: Provenance,
    /// Modulus removed from each end of the representative.
    pub trim: f64,
    pub modulus: f64,
    pub representative_modulus: f64,
    /// Mask mass against the integral of the standard-coordinate density.
    pub mass_raster: f64,
    pub mass_standard: f64,
    pub fit: DecayFit,
    /// `a` with `b = c3 (1 - slack)` on the representative window.
    pub ceiling: f64,
    pub exponent_ok: bool,
    /// Check points on the thin annulus and how many exceed the bound.
    pub checked: usize,
    pub violations: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThinVerdict {
    pub rows: Vec<ThinReport>,
    /// Common `(a, b)` over all thin annuli, `None` when there are none.
    pub constants: Option<DecayConstants>,
    pub pass: bool,
}

fn with_mass(prep: &Prepared, spec: &AnnulusSpec) -> Result<AnnulusSpec> {
    match spec.mass {
        Some(_) => Ok(spec.clone()),
        None => Ok(spec.clone().with_mass(prep.surface.measure_of(&prep.rasterize(spec)?))),
    }
}

/// Integral of the standard density over `|x| <= Mod/2`.
fn standard_mass(prep: &Prepared, spec: &AnnulusSpec) -> Result<f64> {
    let nx = 400;
    let nt = 64;
    let h = spec.modulus / nx as f64;
    let dth = TAU / nt as f64;
    let mut total = 0.0;
    for i in 0..nx {
        let x = -0.5 * spec.modulus + (i as f64 + 0.5) * h;
        for j in 0..nt {
            total += standard_density(&prep.surface, spec, &prep.families, x, (j as f64 + 0.5) * dth)?.1;
        }
    }
    Ok(total * h * dth)
}

pub fn verify_thin(prep: &Prepared, decomposition: &BubbleDecomposition, constants: &ConstantsBundle) -> Result<ThinVerdict> {
    let floor = constants.c2 + PI;
    let b = constants.c3 * (1.0 - THIN_EXPONENT_SLACK);
    let mut staged = Vec::new();
    for (index, t) in decomposition.thin.iter().enumerate() {
        let trim = 0.5 * (t.representative.modulus - t.thin.modulus);
        if trim < floor - 1e-9 {
            return Err(Error::Window { modulus: t.thin.modulus, trim });
        }
        let rep = with_mass(prep, &t.representative)?;
        let fit = decay_profile(&prep.surface, &rep, &prep.families, constants)?;
        let half = 0.5 * rep.modulus;
        let norm = rep.mass.filter(|m| *m > 0.0).unwrap_or(1.0);
        let ceiling = fit
            .rows
            .iter()
            .map(|r| r.sup_density * (b * (half - r.x.abs())).exp() / norm)
            .fold(0.0, f64::max);
        staged.push((index, t, rep, fit, ceiling, trim));
    }
    let a = staged.iter().map(|s| s.4).fold(0.0, f64::max);
    let mut rows = Vec::new();
    for (index, t, rep, fit, ceiling, trim) in staged {
        let half = 0.5 * rep.modulus;
        let norm = rep.mass.filter(|m| *m > 0.0).unwrap_or(1.0);
        // offset grid on the thin annulus itself
        let w = 0.5 * t.thin.modulus;
        let (nx, nt) = (200usize, 96usize);
        let mut checked = 0;
        let mut violations = 0;
        for i in 0..nx {
            let x = -w + 2.0 * w * (i as f64 + 0.5) / nx as f64;
            let bound = a * (-b * (half - x.abs())).exp() * norm;
            for j in 0..nt {
                let th = TAU * (j as f64 + 0.25) / nt as f64;
                let (_, f) = standard_density(&prep.surface, &rep, &prep.families, x, th)?;
                checked += 1;
                if f > bound * (1.0 + MARGIN_REL) {
                    violations += 1;
                }
            }
        }
        let exponent_ok = fit.exponent >= b;
        let mass_raster = t.thin.mass.unwrap_or(prep.surface.measure_of(&prep.rasterize(&t.thin)?));
        let mass_standard = standard_mass(prep, &t.thin)?;
        let pass = exponent_ok && (violations as f64) <= MARGIN_REL * checked as f64;
        rows.push(ThinReport {
            index,
            class: t.class,
            provenance: t.provenance.clone(),
            trim,
            modulus: t.thin.modulus,
            representative_modulus: rep.modulus,
            mass_raster,
            mass_standard,
            fit,
            ceiling,
            exponent_ok,
            checked,
            violations,
            pass,
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    let constants = if rows.is_empty() { None } else { Some(DecayConstants { a, b }) };
    Ok(ThinVerdict { rows, constants, pass })
}

// ---------------------------------------------------------------------------
// thick part

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThickReport {
    pub vertex: usize,
    pub genus: u32,
    /// `|pi_0(boundary)|`.
    pub boundaries: usize,
    /// `|F_v|`.
    pub internal: usize,
    pub mass: f64,
    pub diameter: f64,
    pub scale: f64,
    /// `mu_v + n_v`.
    pub load: f64,
    /// All four quantities below are in `h_v`.
    pub sup_density: f64,
    /// `None` when every ray reaches the boundary first.
    pub min_injectivity: Option<f64>,
    pub min_boundary_length: Option<f64>,
    pub min_boundary_separation: Option<f64>,
    /// Stability with `delta`.
    pub stable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThickMargins {
    /// Log margins; positive means the bound holds with room.
    pub density: f64,
    pub injectivity: Option<f64>,
    pub length: Option<f64>,
    pub separation: Option<f64>,
}

impl ThickMargins {
    pub fn min(&self) -> f64 {
        [Some(self.density), self.injectivity, self.length, self.separation].into_iter().flatten().fold(f64::INFINITY, f64::min)
    }
}

pub fn verify_thick(prep: &Prepared, graph: &DualGraph, delta: f64) -> Vec<ThickReport> {
    let s = &prep.surface;
    graph
        .vertices
        .par_iter()
        .enumerate()
        .map(|(vi, v)| {
            let faces = &graph.components[vi];
            let scale = 2.0 * (v.genus as f64 + 1.0) / v.diameter.max(f64::MIN_POSITIVE);
            let circles: Vec<&Circle> = v.half_edges.iter().map(|&h| &graph.half_edges[h].circle).collect();
            let mut sup: f64 = 0.0;
            let mut inj = f64::INFINITY;
            for &f in faces {
                if s.is_exterior(f) {
                    continue;
                }
                let area = s.face_area(f);
                let c = s.face_center(f);
                if area > 0.0 {
                    sup = sup.max(s.face_mass(f) / area);
                }
                sup = sup.max(s.density_at(&c));
                let ambient = s.model.injectivity_radius(&c);
                let to_boundary = circles.iter().map(|g| g.distance(prep, &c)).fold(f64::INFINITY, f64::min);
                if to_boundary > ambient {
                    inj = inj.min(ambient);
                }
            }
            let lengths = v.half_edges.iter().map(|&h| graph.half_edges[h].length).fold(f64::INFINITY, f64::min);
            let mut sep = f64::INFINITY;
            for (i, a) in circles.iter().enumerate() {
                let pts = a.points(prep, CIRCLE_SAMPLES);
                for b in &circles[i + 1..] {
                    for p in &pts {
                        sep = sep.min(b.distance(prep, p));
                    }
                }
            }
            let fin = |x: f64| if x.is_finite() { Some(x * scale) } else { None };
            ThickReport {
                vertex: vi,
                genus: v.genus,
                boundaries: v.boundaries,
                internal: v.internal.len(),
                mass: v.mass,
                diameter: v.diameter,
                scale,
                load: v.mass + v.boundaries as f64,
                sup_density: sup / (scale * scale),
                min_injectivity: fin(inj),
                min_boundary_length: fin(lengths),
                min_boundary_separation: fin(sep),
                stable: v.mass >= delta || 2 * v.genus as usize + v.boundaries >= 3,
            }
        })
        .collect()
}

/// Smallest `b >= 0` admitting an `a` with
/// `sup_density <= a e^(b x)` and `a e^(-b x) <=` every lower-bounded quantity,
/// with `a` the geometric midpoint of the feasible interval.
pub fn fit_thick_constants(reports: &[ThickReport]) -> DecayConstants {
    let upper: Vec<(f64, f64)> = reports.iter().filter(|r| r.sup_density > 0.0).map(|r| (r.sup_density.ln(), r.load)).collect();
    let lower: Vec<(f64, f64)> = reports
        .iter()
        .flat_map(|r| {
            [r.min_injectivity, r.min_boundary_length, r.min_boundary_separation]
                .into_iter()
                .flatten()
                .filter(|q| *q > 0.0)
                .map(move |q| (q.ln(), r.load))
        })
        .collect();
    let mut b: f64 = 0.0;
    for &(ld, xv) in &upper {
        for &(lg, xw) in &lower {
            if xv + xw > 0.0 {
                b = b.max((ld - lg) / (xv + xw));
            }
        }
    }
    let lo = upper.iter().map(|&(ld, x)| ld - b * x).fold(f64::NEG_INFINITY, f64::max);
    let hi = lower.iter().map(|&(lg, x)| lg + b * x).fold(f64::INFINITY, f64::min);
    let log_a = match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        _ => 0.0,
    };
    DecayConstants { a: log_a.exp(), b }
}

pub fn thick_margins(r: &ThickReport, c: &DecayConstants) -> ThickMargins {
    let la = c.a.ln();
    let lower = |q: Option<f64>| q.map(|q| q.ln() - (la - c.b * r.load));
    ThickMargins {
        density: la + c.b * r.load - r.sup_density.max(f64::MIN_POSITIVE).ln(),
        injectivity: lower(r.min_injectivity),
        length: lower(r.min_boundary_length),
        separation: lower(r.min_boundary_separation),
    }
}

// ---------------------------------------------------------------------------
// counts, f1, conservation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountCheck {
    pub genus: u32,
    pub mass: f64,
    pub delta: f64,
    pub bound: f64,
    pub thick: usize,
    pub thin: usize,
    pub vacuous: bool,
    pub pass: bool,
}

/// `|pi_0 Thick|` and `|pi_0 Thin|` against `2 g + 2 mu / delta - 3`.
pub fn verify_counts(genus: u32, mass: f64, thick: usize, thin: usize, delta: f64) -> CountCheck {
    let bound = 2.0 * genus as f64 + 2.0 * mass / delta - 3.0;
    let vacuous = bound < 1.0 && thin == 0;
    let pass = vacuous || (thick as f64 <= bound && thin as f64 <= bound);
    CountCheck { genus, mass, delta, bound, thick, thin, vacuous, pass }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeckSample {
    pub vertex: usize,
    pub spec: AnnulusSpec,
    /// `mu(I n Sigma_v)`.
    pub mass_in: f64,
    /// Internal boundary circles met by the annulus.
    pub crossings: usize,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Fit {
    pub offered: usize,
    pub used: usize,
    /// `max Mod / (mu + n + 1)`; `None` without data.
    pub coefficient: Option<f64>,
    /// `6 L1 / delta2`.
    pub ceiling: f64,
    pub worst: Option<NeckSample>,
}

/// Random trivial necks about centres of each closure, kept when they lie in
/// `Cl(Sigma_v)`, their inner circle lies in `Sigma_v` and their complement is
/// stable.
pub fn sample_necks(
    prep: &Prepared,
    graph: &DualGraph,
    constants: &ConstantsBundle,
    count: usize,
    seed: u64,
) -> Result<Vec<(usize, AnnulusSpec)>> {
    let s = &prep.surface;
    let k = s.model.curvature;
    let l1 = constants.derived()?.l1;
    let live: Vec<usize> = (0..graph.vertices.len()).filter(|&v| graph.components[v].iter().any(|&f| !s.is_exterior(f))).collect();
    if live.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf1);
    let mut draws = Vec::with_capacity(count);
    for _ in 0..count {
        let v = live[rng.gen_range(0..live.len())];
        let faces: Vec<usize> = graph.components[v].iter().copied().filter(|&f| !s.is_exterior(f)).collect();
        let f = faces[rng.gen_range(0..faces.len())];
        let frac: f64 = rng.gen_range(0.3..1.0);
        let m: f64 = rng.gen_range(5f64.ln()..(l1 + 8.0));
        draws.push((v, f, frac, m));
    }
    let out: Vec<Option<(usize, AnnulusSpec)>> = draws
        .par_iter()
        .map(|&(v, f, frac, m)| -> Result<Option<(usize, AnnulusSpec)>> {
            let p = s.face_center(f);
            let cap = prep.trivial_radius_cap(&p);
            if !(cap > 0.0) || !cap.is_finite() {
                return Ok(None);
            }
            let r = frac * cap;
            let ri = radial_log_inverse(k, radial_log(k, r) - m);
            if !(ri > 0.0) || !prep.admissible_trivial(&p, r, ri) {
                return Ok(None);
            }
            let spec = AnnulusSpec::trivial(k, p, r, ri)?;
            let ring = prep.rasterize(&spec)?;
            if ring.is_empty() || ring.intersects(&graph.closures[v].complement()) {
                return Ok(None);
            }
            let inner = Circle::Radial { curvature: k, center: p, radius: ri };
            if inner.points(prep, 16).iter().any(|q| !graph.components[v].contains(&s.locate(q))) {
                return Ok(None);
            }
            // rings whose raster is not a manifold are skipped
            if !is_stable(s, &ring.complement(), constants).unwrap_or(false) {
                return Ok(None);
            }
            let mass = s.measure_of(&ring);
            Ok(Some((v, spec.with_mass(mass))))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

pub fn fit_f1(prep: &Prepared, graph: &DualGraph, samples: &[(usize, AnnulusSpec)], constants: &ConstantsBundle) -> Result<F1Fit> {
    let s = &prep.surface;
    let ceiling = 6.0 * constants.derived()?.l1 / constants.delta2;
    let mut worst: Option<NeckSample> = None;
    let mut used = 0;
    for (v, spec) in samples {
        let ring = prep.rasterize(spec)?;
        let comp = Region::from_faces(s.num_faces(), &graph.components[*v]);
        let mass_in = s.measure_of(&ring.intersection(&comp));
        let (center, r, ri) = match spec.shape {
            AnnulusShape::Trivial { center, r, r_inner, .. } => (center, r, r_inner),
            AnnulusShape::Cylinder { .. } => continue,
        };
        let crossings = graph.vertices[*v]
            .internal
            .iter()
            .filter(|&&h| {
                graph.half_edges[h].circle.points(prep, 64).iter().any(|q| {
                    let d = s.model.geodesic_distance(&center, q);
                    d >= ri && d < r
                })
            })
            .count();
        used += 1;
        let ratio = spec.modulus / (mass_in + crossings as f64 + 1.0);
        if worst.as_ref().is_none_or(|w| ratio > w.ratio) {
            worst = Some(NeckSample { vertex: *v, spec: spec.clone(), mass_in, crossings, ratio });
        }
    }
    Ok(F1Fit { offered: samples.len(), used, coefficient: worst.as_ref().map(|w| w.ratio), ceiling, worst })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassPartition {
    pub thick: f64,
    pub thin: f64,
    pub total: f64,
    pub relative_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerCheck {
    pub thick: i64,
    pub thin: i64,
    pub surface: i64,
    /// Every thin mask is one annulus.
    pub thin_annuli: bool,
    pub pass: bool,
}

pub fn mass_partition(surface: &MeasuredSurface, graph: &DualGraph) -> MassPartition {
    let thick: f64 = graph.vertices.iter().map(|v| v.mass).sum();
    let thin: f64 = graph.thin_masks.iter().map(|m| surface.measure_of(m)).sum();
    let total = surface.total_mass();
    let relative_error = if total > 0.0 { (thick + thin - total).abs() / total } else { (thick + thin).abs() };
    MassPartition { thick, thin, total, relative_error, pass: relative_error <= MASS_PARTITION_REL }
}

pub fn euler_check(surface: &MeasuredSurface, graph: &DualGraph) -> Result<EulerCheck> {
    let thick: i64 = graph.vertices.iter().map(|v| v.euler).sum();
    let mut thin = 0;
    let mut thin_annuli = true;
    for m in &graph.thin_masks {
        let t = surface.region_topology(m)?;
        thin += t.euler();
        thin_annuli &= t.components.len() == 1 && t.components[0].genus == 0 && t.components[0].boundaries == 2;
    }
    let chi = 2 - 2 * surface.genus as i64;
    Ok(EulerCheck { thick, thin, surface: chi, thin_annuli, pass: thick + thin == chi && thin_annuli })
}

// ---------------------------------------------------------------------------
// report

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexMargins {
    pub vertex: usize,
    pub margins: ThickMargins,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptednessReport {
    pub schema: u32,
    #[serde(default)]
    pub surface_hash: Option<String>,
    /// Stability threshold of the adaptedness definition.
    pub delta: f64,
    pub graph: DualGraph,
    pub thin: ThinVerdict,
    pub thick: Vec<ThickReport>,
    pub thick_constants: DecayConstants,
    pub margins: Vec<VertexMargins>,
    pub stable: bool,
    pub counts: CountCheck,
    pub f1: F1Fit,
    pub partition: MassPartition,
    pub euler: EulerCheck,
    /// Pairwise `K1`-trims of the thin representatives are disjoint masks.
    pub disjoint: bool,
    pub conjugation_invariant: Option<bool>,
    pub pass: bool,
}

impl AdaptednessReport {
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.thin.pass {
            out.push("thin decay".to_string());
        }
        if !self.stable {
            out.push("stability".to_string());
        }
        if self.margins.iter().any(|m| m.margins.min() < -MARGIN_REL.ln_1p()) {
            out.push("thick margins".to_string());
        }
        if !self.counts.pass {
            out.push("count bound".to_string());
        }
        if !self.partition.pass {
            out.push("mass partition".to_string());
        }
        if !self.euler.pass {
            out.push("euler bookkeeping".to_string());
        }
        if !self.disjoint {
            out.push("disjointness".to_string());
        }
        if self.conjugation_invariant == Some(false) {
            out.push("conjugation invariance".to_string());
        }
        if !self.graph.incidents.is_empty() {
            out.push("dual graph".to_string());
        }
        out
    }
}

/// Re-prepare the surface and audit the decomposition against it.
pub fn verify(surface: &MeasuredSurface, decomposition: &BubbleDecomposition) -> Result<AdaptednessReport> {
    verify_prepared(&prepare_for(surface, decomposition)?, decomposition)
}

/// Prepare the surface the way the decomposition was built and check that
/// the two agree.
pub fn prepare_for(surface: &MeasuredSurface, decomposition: &BubbleDecomposition) -> Result<Prepared> {
    let prep = prepare(surface, &decomposition.constants, &decomposition.plan)?;
    match (&prep.normalization, &decomposition.normalization) {
        (None, None) => {}
        (Some(a), Some(b)) if a.case == b.case && (a.mobius.scale - b.scale).abs() <= 1e-9 * b.scale.abs().max(1e-300) => {}
        _ => return Err(Error::Precondition("decomposition was built on a different normalization".into())),
    }
    if prep.branch != decomposition.branch {
        return Err(Error::Precondition("decomposition branch does not match the surface".into()));
    }
    Ok(prep)
}

pub fn verify_prepared(prep: &Prepared, decomposition: &BubbleDecomposition) -> Result<AdaptednessReport> {
    let s = &prep.surface;
    let constants = &decomposition.constants;
    let d = constants.derived()?;
    let delta = constants.neck_mass();
    let graph = dual_graph(prep, decomposition)?;
    let thin = verify_thin(prep, decomposition, constants)?;
    let thick = verify_thick(prep, &graph, delta);
    let thick_constants = fit_thick_constants(&thick);
    let margins: Vec<VertexMargins> =
        thick.iter().map(|r| VertexMargins { vertex: r.vertex, margins: thick_margins(r, &thick_constants) }).collect();
    let stable = thick.iter().all(|r| r.stable)
        && graph.vertices.iter().all(|v| component_stable(v.mass, v.genus, v.boundaries, constants) || v.mass >= delta);
    let counts = verify_counts(s.genus, s.total_mass(), graph.vertices.len(), decomposition.thin.len(), delta);
    let samples = sample_necks(prep, &graph, constants, F1_SAMPLES, decomposition.plan.seed)?;
    let f1 = fit_f1(prep, &graph, &samples, constants)?;
    let partition = mass_partition(s, &graph);
    let euler = euler_check(s, &graph)?;
    let trims: Vec<Region> = decomposition
        .thin
        .iter()
        .map(|t| prep.rasterize(&t.representative.trim(d.k1, d.k1)?))
        .collect::<Result<_>>()?;
    let mut disjoint = true;
    for i in 0..trims.len() {
        for j in i + 1..trims.len() {
            disjoint &= !trims[i].intersects(&trims[j]);
        }
    }
    let thin_union = graph.thin_masks.iter().fold(Region::empty(s.num_faces()), |acc, m| acc.union(m));
    let conjugation_invariant = s.involution.map(|_| s.is_symmetric(&thin_union));
    let mut report = AdaptednessReport {
        schema: 1,
        surface_hash: decomposition.surface_hash.clone(),
        delta,
        graph,
        thin,
        thick,
        thick_constants,
        margins,
        stable,
        counts,
        f1,
        partition,
        euler,
        disjoint,
        conjugation_invariant,
        pass: false,
    };
    report.pass = report.failures().is_empty();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_bound_examples() {
        let delta = 0.4 / 6.0;
        let c = verify_counts(0, 8.0 * PI, 2, 1, delta);
        assert!(c.pass && !c.vacuous);
        assert!((c.bound - (16.0 * PI / delta - 3.0)).abs() < 1e-9);
        assert!(verify_counts(0, 0.01, 1, 0, delta).pass);
        assert!(!verify_counts(0, 0.05, 3, 1, delta).pass);
    }

    #[test]
    fn scale_formula() {
        // g = 0, d = 2 gives s = 1
        assert_eq!(2.0 * (0.0 + 1.0) / 2.0, 1.0);
    }

    #[test]
    fn thick_fit_feasible() {
        let mk = |sup: f64, inj: f64, load: f64| ThickReport {
            vertex: 0,
            genus: 0,
            boundaries: 1,
            internal: 0,
            mass: load - 1.0,
            diameter: 1.0,
            scale: 2.0,
            load,
            sup_density: sup,
            min_injectivity: Some(inj),
            min_boundary_length: None,
            min_boundary_separation: None,
            stable: true,
        };
        let rs = vec![mk(10.0, 0.1, 2.0), mk(100.0, 0.01, 5.0)];
        let c = fit_thick_constants(&rs);
        for r in &rs {
            assert!(thick_margins(r, &c).min() >= -1e-9);
        }
    }
}
