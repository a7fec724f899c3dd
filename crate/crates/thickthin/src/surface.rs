//! Discretized measured surfaces.
//!
//! Every model is gridded in its conformal cylinder chart `(s, theta)`,
//! uniform in both coordinates. The sphere grid covers `s_min <= s < s_max`
//! and closes up with two polar cap faces. The torus grid is periodic in
//! `s`. A collar grid covers the whole collar; for genus `g >= 2` a single
//! opaque exterior face of genus `g - 1` is glued to both collar ends.

use std::f64::consts::{PI, TAU};

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{point_from_unit_vector, sphere_exp, Field};
use crate::geometry::{
    collar_modulus, collar_rho, collar_s, inverse_gudermannian, radial_log, sphere_angle, AnnulusShape, AnnulusSpec,
    CylinderProfile, MetricModel, Point,
};
use crate::topology::{CellComplex, RegionTopology, SpecialFace};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    Sphere,
    Torus,
    Collar,
}

/// Uniform grid of the cylinder chart: row `i` covers
/// `s0 + i ds <= s < s0 + (i + 1) ds`, column `j` covers `j dtheta <= theta < (j + 1) dtheta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub kind: GridKind,
    pub rows: usize,
    pub cols: usize,
    pub s0: f64,
    pub ds: f64,
}

impl Grid {
    pub fn sphere(rows: usize, cols: usize, s_min: f64, s_max: f64) -> Result<Grid> {
        if rows < 2 || cols < 4 || !cols.is_multiple_of(2) || !(s_min < s_max) {
            return Err(Error::Config(format!("bad sphere grid {rows}x{cols} over [{s_min}, {s_max}]")));
        }
        Ok(Grid { kind: GridKind::Sphere, rows, cols, s0: s_min, ds: (s_max - s_min) / rows as f64 })
    }

    /// Rectangular torus `tau = i T`: `s` has period `2 pi T`.
    pub fn torus(model: &MetricModel, rows: usize, cols: usize) -> Result<Grid> {
        let [re, im] = model.tau.ok_or_else(|| Error::Config("torus grid needs a lattice".into()))?;
        if re != 0.0 {
            return Err(Error::Unsupported("torus grids need a rectangular lattice (Re tau = 0)".into()));
        }
        if rows < 2 || cols < 4 || !cols.is_multiple_of(2) {
            return Err(Error::Config(format!("bad torus grid {rows}x{cols}")));
        }
        Ok(Grid { kind: GridKind::Torus, rows, cols, s0: -PI * im, ds: TAU * im / rows as f64 })
    }

    pub fn collar(model: &MetricModel, rows: usize, cols: usize) -> Result<Grid> {
        let ell = model.collar_length.ok_or_else(|| Error::Config("collar grid needs a length".into()))?;
        if rows < 2 || cols < 4 || !cols.is_multiple_of(2) {
            return Err(Error::Config(format!("bad collar grid {rows}x{cols}")));
        }
        let m = collar_modulus(ell)?;
        Ok(Grid { kind: GridKind::Collar, rows, cols, s0: -0.5 * m, ds: m / rows as f64 })
    }

    pub fn dtheta(&self) -> f64 {
        TAU / self.cols as f64
    }

    pub fn s_end(&self) -> f64 {
        self.s0 + self.rows as f64 * self.ds
    }

    pub fn row_bounds(&self, i: usize) -> (f64, f64) {
        (self.s0 + i as f64 * self.ds, self.s0 + (i + 1) as f64 * self.ds)
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// Antiholomorphic involution of the double.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Involution {
    /// `theta -> -theta`; on the sphere this is `z -> conj(z)`.
    ThetaFlip,
    /// `s -> -s`; fixed circles at `s = 0` and the seam.
    SFlip,
}

impl Involution {
    pub fn apply(&self, p: &Point) -> Point {
        match self {
            Involution::ThetaFlip => Point::new(p.s, -p.theta),
            Involution::SFlip => Point { s: -p.s, theta: p.theta },
        }
    }
}

/// Opaque exterior of a collar model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exterior {
    pub genus: u32,
    pub mass: f64,
    pub diameter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DensitySource {
    Field { field: Field },
    /// One value per face (cells row-major, then special faces).
    Sampled { values: Vec<f64> },
}

/// Which geodesic a cylinder family is built around.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FamilyKind {
    /// Torus geodesic `s = s_core`.
    TorusCore { s_core: f64 },
    /// Fixed circle of the sphere double; `rho` is signed latitude.
    SphereBoundary,
    /// Core geodesic of a hyperbolic collar.
    Collar,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderFamily {
    pub kind: FamilyKind,
    pub profile: CylinderProfile,
}

/// A mask over all faces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub mask: Vec<bool>,
}

impl Region {
    pub fn empty(n: usize) -> Region {
        Region { mask: vec![false; n] }
    }

    pub fn full(n: usize) -> Region {
        Region { mask: vec![true; n] }
    }

    pub fn from_faces(n: usize, faces: &[usize]) -> Region {
        let mut r = Region::empty(n);
        faces.iter().for_each(|&f| r.mask[f] = true);
        r
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn faces(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&f| self.mask[f]).collect()
    }

    pub fn union(&self, other: &Region) -> Region {
        Region { mask: self.mask.iter().zip(&other.mask).map(|(a, b)| *a || *b).collect() }
    }

    pub fn intersection(&self, other: &Region) -> Region {
        Region { mask: self.mask.iter().zip(&other.mask).map(|(a, b)| *a && *b).collect() }
    }

    pub fn difference(&self, other: &Region) -> Region {
        Region { mask: self.mask.iter().zip(&other.mask).map(|(a, b)| *a && !*b).collect() }
    }

    pub fn complement(&self) -> Region {
        Region { mask: self.mask.iter().map(|a| !a).collect() }
    }

    pub fn intersects(&self, other: &Region) -> bool {
        self.mask.iter().zip(&other.mask).any(|(a, b)| *a && *b)
    }
}

/// Cumulative mass as a function of a radial coordinate `u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub edges: Vec<f64>,
    /// Mass with coordinate at most `edges[k]`.
    pub cumulative: Vec<f64>,
    pub total: f64,
}

impl Profile {
    /// Spread each `(u_a, u_b, mass)` uniformly over its range.
    pub fn build(edges: Vec<f64>, ranges: impl Iterator<Item = (f64, f64, f64)>) -> Profile {
        let n = edges.len();
        let mut bins = vec![0.0; n.max(1)];
        let mut below = 0.0;
        let mut total = 0.0;
        let first = edges[0];
        let last = edges[n - 1];
        for (ua, ub, m) in ranges {
            total += m;
            if m == 0.0 {
                continue;
            }
            if ub <= first {
                below += m;
                continue;
            }
            if ua >= last {
                continue;
            }
            if !(ub > ua) || !ua.is_finite() || !ub.is_finite() {
                let u = if ua.is_finite() { ua } else { ub };
                if u <= first {
                    below += m;
                } else if u < last {
                    let k = edges.partition_point(|&e| e < u);
                    bins[k - 1] += m;
                }
                continue;
            }
            let density = m / (ub - ua);
            if ua < first {
                below += density * (first - ua);
            }
            let lo = ua.max(first);
            let hi = ub.min(last);
            let mut k = edges.partition_point(|&e| e <= lo).max(1) - 1;
            while k + 1 < n && edges[k] < hi {
                let a = edges[k].max(lo);
                let b = edges[k + 1].min(hi);
                if b > a {
                    bins[k] += density * (b - a);
                }
                k += 1;
            }
        }
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = below;
        cumulative.push(acc);
        for b in bins.iter().take(n - 1) {
            acc += b;
            cumulative.push(acc);
        }
        Profile { edges, cumulative, total }
    }

    pub fn mass_below(&self, u: f64) -> f64 {
        let e = &self.edges;
        if u <= e[0] {
            return self.cumulative[0];
        }
        if u >= e[e.len() - 1] {
            return self.cumulative[e.len() - 1];
        }
        let k = e.partition_point(|&x| x <= u) - 1;
        let w = (u - e[k]) / (e[k + 1] - e[k]);
        self.cumulative[k] + w * (self.cumulative[k + 1] - self.cumulative[k])
    }

    /// Largest `u` in range with `mass_below(u) <= m`.
    pub fn max_u_with_mass(&self, m: f64) -> Option<f64> {
        let c = &self.cumulative;
        let e = &self.edges;
        if c[0] > m {
            return None;
        }
        let k = c.partition_point(|&x| x <= m);
        if k >= c.len() {
            return Some(e[e.len() - 1]);
        }
        let (m0, m1) = (c[k - 1], c[k]);
        let w = if m1 > m0 { (m - m0) / (m1 - m0) } else { 0.0 };
        Some(e[k - 1] + w * (e[k] - e[k - 1]))
    }

    /// Smallest `u` in range with `mass_below(u) >= m`.
    pub fn min_u_with_mass(&self, m: f64) -> Option<f64> {
        let c = &self.cumulative;
        let e = &self.edges;
        if c[0] >= m {
            return Some(e[0]);
        }
        let k = c.partition_point(|&x| x < m);
        if k >= c.len() {
            return None;
        }
        let (m0, m1) = (c[k - 1], c[k]);
        let w = if m1 > m0 { (m - m0) / (m1 - m0) } else { 1.0 };
        Some(e[k - 1] + w * (e[k] - e[k - 1]))
    }
}

/// A constant-curvature model with a gridded energy density.
#[derive(Clone, Debug)]
pub struct MeasuredSurface {
    pub model: MetricModel,
    /// Declared genus of the closed (doubled) surface.
    pub genus: u32,
    pub grid: Grid,
    pub density: DensitySource,
    pub involution: Option<Involution>,
    pub exterior: Option<Exterior>,
    complex: CellComplex,
    centers: Vec<Point>,
    vectors: Vec<[f64; 3]>,
    areas: Vec<f64>,
    masses: Vec<f64>,
    radii: Vec<f64>,
}

const GAUSS: [f64; 2] = [-0.288_675_134_594_812_9, 0.288_675_134_594_812_9];
const CELL_DEPTH: u32 = 14;
const CELL_REL: f64 = 1e-4;

impl MeasuredSurface {
    pub fn new(
        model: MetricModel,
        genus: u32,
        grid: Grid,
        density: DensitySource,
        involution: Option<Involution>,
        exterior: Option<Exterior>,
    ) -> Result<MeasuredSurface> {
        let (rows, cols) = (grid.rows, grid.cols);
        let specials = match grid.kind {
            GridKind::Sphere => {
                if genus != 0 {
                    return Err(Error::Config(format!("sphere grid declared with genus {genus}")));
                }
                vec![
                    SpecialFace { chi: 1, genus: 0, rings: vec![(0, 0)] },
                    SpecialFace { chi: 1, genus: 0, rings: vec![(rows, rows - 1)] },
                ]
            }
            GridKind::Torus => {
                if genus != 1 {
                    return Err(Error::Config(format!("torus grid declared with genus {genus}")));
                }
                vec![]
            }
            GridKind::Collar => match &exterior {
                Some(ext) => {
                    if genus < 2 || ext.genus + 1 != genus {
                        return Err(Error::Config(format!(
                            "collar of genus {genus} needs an exterior of genus {}",
                            genus.saturating_sub(1)
                        )));
                    }
                    vec![SpecialFace { chi: 2 - 2 * genus as i64, genus: ext.genus, rings: vec![(0, 0), (rows, rows - 1)] }]
                }
                None => return Err(Error::Config("collar models need an exterior".into())),
            },
        };
        if involution == Some(Involution::SFlip) && grid.kind != GridKind::Torus {
            return Err(Error::Unsupported("the s-flip involution is only gridded on tori".into()));
        }
        if involution.is_some() && grid.kind == GridKind::Collar {
            return Err(Error::Unsupported("collar models carry no involution".into()));
        }
        let complex = CellComplex { rows, cols, periodic_s: grid.kind == GridKind::Torus, specials };
        let nf = complex.num_faces();
        if let DensitySource::Sampled { values } = &density {
            if values.len() != nf {
                return Err(Error::Config(format!("sampled density has {} values, grid needs {nf}", values.len())));
            }
            if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::Domain("sampled density must be finite and non-negative".into()));
            }
        }
        let mut surface = MeasuredSurface {
            model,
            genus,
            grid,
            density,
            involution,
            exterior,
            complex,
            centers: Vec::new(),
            vectors: Vec::new(),
            areas: Vec::new(),
            masses: Vec::new(),
            radii: Vec::new(),
        };
        surface.centers = (0..nf).map(|f| surface.face_center_raw(f)).collect();
        if surface.grid.kind == GridKind::Sphere {
            surface.vectors = surface.centers.iter().map(|p| p.unit_vector()).collect();
        }
        surface.areas = (0..nf).map(|f| surface.face_area_raw(f)).collect();
        surface.radii = (0..nf).map(|f| surface.face_radius_raw(f)).collect();
        let masses: Vec<f64> = (0..nf).into_par_iter().map(|f| surface.face_mass_raw(f)).collect();
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::Domain("density produced a non-finite or negative cell mass".into()));
        }
        surface.masses = masses;
        Ok(surface)
    }

    pub fn complex(&self) -> &CellComplex {
        &self.complex
    }

    pub fn num_faces(&self) -> usize {
        self.complex.num_faces()
    }

    pub fn num_cells(&self) -> usize {
        self.grid.num_cells()
    }

    pub fn face_center(&self, f: usize) -> Point {
        self.centers[f]
    }

    pub fn face_mass(&self, f: usize) -> f64 {
        self.masses[f]
    }

    pub fn face_masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn face_area(&self, f: usize) -> f64 {
        self.areas[f]
    }

    /// Largest distance from a face centre to its corners.
    pub fn face_radius(&self, f: usize) -> f64 {
        self.radii[f]
    }

    pub fn is_exterior(&self, f: usize) -> bool {
        self.grid.kind == GridKind::Collar && f >= self.num_cells()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Conformal factor `lambda` with metric `lambda^2 (ds^2 + dtheta^2)`.
    pub fn lambda(&self, s: f64) -> f64 {
        match self.grid.kind {
            GridKind::Sphere => 1.0 / s.cosh(),
            GridKind::Torus => self.model.lattice_scale().unwrap_or(1.0) / TAU,
            GridKind::Collar => {
                let ell = self.model.collar_length.unwrap_or(1.0);
                ell * collar_rho(ell, s).cosh() / TAU
            }
        }
    }

    fn face_center_raw(&self, f: usize) -> Point {
        let g = &self.grid;
        let nc = g.num_cells();
        if f < nc {
            let (i, j) = (f / g.cols, f % g.cols);
            return Point { s: g.s0 + (i as f64 + 0.5) * g.ds, theta: (j as f64 + 0.5) * g.dtheta() };
        }
        match g.kind {
            GridKind::Sphere if f == nc => Point::zero_pole(),
            GridKind::Sphere => Point::infinity_pole(),
            _ => Point { s: f64::NAN, theta: 0.0 },
        }
    }

    /// Area of the chart rectangle `a <= s <= b` of angular width `dth`.
    fn rect_area(&self, a: f64, b: f64, dth: f64) -> f64 {
        match self.grid.kind {
            GridKind::Sphere => dth * (b - a).sinh() / (a.cosh() * b.cosh()),
            GridKind::Torus => {
                let lam = self.lambda(0.0);
                lam * lam * (b - a) * dth
            }
            GridKind::Collar => {
                let ell = self.model.collar_length.unwrap_or(1.0);
                dth * ell / TAU * (collar_rho(ell, b).sinh() - collar_rho(ell, a).sinh())
            }
        }
    }

    /// Area times the area-weighted 2x2 Gauss mean of the density.
    fn rect_mass(&self, field: &Field, s: f64, t: f64, hs: f64, ht: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for gs in GAUSS {
            let x = s + gs * hs;
            let lam = self.lambda(x);
            let w = lam * lam;
            for gt in GAUSS {
                num += w * field.density(&self.model, &Point { s: x, theta: t + gt * ht });
                den += w;
            }
        }
        self.rect_area(s - 0.5 * hs, s + 0.5 * hs, ht) * num / den
    }

    /// Quadtree refinement until a rectangle and its four halves agree.
    #[allow(clippy::too_many_arguments)]
    fn rect_mass_adaptive(&self, field: &Field, s: f64, t: f64, hs: f64, ht: f64, coarse: f64, depth: u32) -> f64 {
        let (qs, qt) = (0.25 * hs, 0.25 * ht);
        let kids = [(s - qs, t - qt), (s - qs, t + qt), (s + qs, t - qt), (s + qs, t + qt)]
            .map(|(a, b)| (a, b, self.rect_mass(field, a, b, 0.5 * hs, 0.5 * ht)));
        let fine: f64 = kids.iter().map(|k| k.2).sum();
        if depth >= CELL_DEPTH || (fine - coarse).abs() <= CELL_REL * fine + 1e-300 {
            return fine;
        }
        kids.iter().map(|&(a, b, m)| self.rect_mass_adaptive(field, a, b, 0.5 * hs, 0.5 * ht, m, depth + 1)).sum()
    }

    fn face_area_raw(&self, f: usize) -> f64 {
        let g = &self.grid;
        let nc = g.num_cells();
        let dth = g.dtheta();
        if f < nc {
            let (a, b) = g.row_bounds(f / g.cols);
            return self.rect_area(a, b, dth);
        }
        match g.kind {
            GridKind::Sphere if f == nc => 2.0 * TAU / (1.0 + (-2.0 * g.s0).exp()),
            GridKind::Sphere => 2.0 * TAU / (1.0 + (2.0 * g.s_end()).exp()),
            _ => {
                let collar_area = self.model.area();
                (4.0 * PI * (self.genus as f64 - 1.0) - collar_area).max(0.0)
            }
        }
    }

    fn face_radius_raw(&self, f: usize) -> f64 {
        let g = &self.grid;
        let nc = g.num_cells();
        if f < nc {
            let (i, j) = (f / g.cols, f % g.cols);
            let (a, b) = g.row_bounds(i);
            let (t0, t1) = (j as f64 * g.dtheta(), (j + 1) as f64 * g.dtheta());
            let c = self.centers[f];
            return [(a, t0), (a, t1), (b, t0), (b, t1)]
                .iter()
                .map(|&(s, t)| self.model.geodesic_distance(&c, &Point { s, theta: t }))
                .fold(0.0, f64::max);
        }
        match g.kind {
            GridKind::Sphere if f == nc => 2.0 * g.s0.exp().atan(),
            GridKind::Sphere => PI - 2.0 * g.s_end().exp().atan(),
            _ => f64::INFINITY,
        }
    }

    fn face_mass_raw(&self, f: usize) -> f64 {
        let area = self.areas[f];
        match &self.density {
            DensitySource::Sampled { values } => area * values[f],
            DensitySource::Field { field } => {
                if f >= self.num_cells() {
                    return match self.grid.kind {
                        GridKind::Collar => self.exterior.as_ref().map_or(0.0, |e| e.mass),
                        _ => area * field.density(&self.model, &self.centers[f]),
                    };
                }
                let c = self.centers[f];
                let (hs, ht) = (self.grid.ds, self.grid.dtheta());
                let coarse = self.rect_mass(field, c.s, c.theta, hs, ht);
                self.rect_mass_adaptive(field, c.s, c.theta, hs, ht, coarse, 0)
            }
        }
    }

    /// Face containing `p` (chart coordinates).
    pub fn locate(&self, p: &Point) -> usize {
        let g = &self.grid;
        let j = ((p.theta.rem_euclid(TAU) / g.dtheta()).floor() as usize).min(g.cols - 1);
        let x = (p.s - g.s0) / g.ds;
        match g.kind {
            GridKind::Sphere => {
                if !(x >= 0.0) {
                    g.num_cells()
                } else if x >= g.rows as f64 {
                    g.num_cells() + 1
                } else {
                    (x.floor() as usize).min(g.rows - 1) * g.cols + j
                }
            }
            GridKind::Torus => {
                let i = (x.rem_euclid(g.rows as f64).floor() as usize).min(g.rows - 1);
                i * g.cols + j
            }
            GridKind::Collar => {
                let i = x.floor().clamp(0.0, (g.rows - 1) as f64) as usize;
                i * g.cols + j
            }
        }
    }

    /// Density at `p`: exact for fields, bilinear between cell centres for samples.
    pub fn density_at(&self, p: &Point) -> f64 {
        match &self.density {
            DensitySource::Field { field } => field.density(&self.model, p),
            DensitySource::Sampled { values } => {
                let g = &self.grid;
                if p.is_pole() {
                    return values[self.locate(p)];
                }
                let x = (p.s - g.s0) / g.ds - 0.5;
                let y = p.theta.rem_euclid(TAU) / g.dtheta() - 0.5;
                let (i0, wx) = match g.kind {
                    GridKind::Torus => (x.floor(), x - x.floor()),
                    _ => {
                        let xc = x.clamp(0.0, (g.rows - 1) as f64);
                        let i = xc.floor().min((g.rows.saturating_sub(2)) as f64);
                        (i, xc - i)
                    }
                };
                let j0 = y.floor();
                let wy = y - j0;
                let row = |i: f64| (i as i64).rem_euclid(g.rows as i64) as usize;
                let col = |j: f64| (j as i64).rem_euclid(g.cols as i64) as usize;
                let v = |i: f64, j: f64| values[row(i) * g.cols + col(j)];
                let (i1, j1) = (i0 + 1.0, j0 + 1.0);
                (1.0 - wx) * ((1.0 - wy) * v(i0, j0) + wy * v(i0, j1)) + wx * ((1.0 - wy) * v(i1, j0) + wy * v(i1, j1))
            }
        }
    }

    pub fn measure_of(&self, region: &Region) -> f64 {
        region.mask.iter().zip(&self.masses).filter(|(b, _)| **b).map(|(_, m)| m).sum()
    }

    pub fn area_of(&self, region: &Region) -> f64 {
        region.mask.iter().zip(&self.areas).filter(|(b, _)| **b).map(|(_, a)| a).sum()
    }

    /// Image of a face under the involution.
    pub fn involution_face(&self, f: usize) -> Option<usize> {
        let inv = self.involution?;
        let g = &self.grid;
        if f >= g.num_cells() {
            return Some(f);
        }
        let (i, j) = (f / g.cols, f % g.cols);
        Some(match inv {
            Involution::ThetaFlip => i * g.cols + (g.cols - 1 - j),
            Involution::SFlip => (g.rows - 1 - i) * g.cols + j,
        })
    }

    pub fn conjugate_region(&self, region: &Region) -> Region {
        match self.involution {
            None => region.clone(),
            Some(_) => {
                let mut out = Region::empty(region.len());
                for f in region.faces() {
                    out.mask[self.involution_face(f).unwrap_or(f)] = true;
                }
                out
            }
        }
    }

    /// Conjugation-invariant or disjoint from the conjugate.
    pub fn is_clean(&self, region: &Region) -> bool {
        if self.involution.is_none() {
            return true;
        }
        let img = self.conjugate_region(region);
        img == *region || !img.intersects(region)
    }

    pub fn is_symmetric(&self, region: &Region) -> bool {
        self.involution.is_none() || self.conjugate_region(region) == *region
    }

    pub fn region_topology(&self, region: &Region) -> Result<RegionTopology> {
        self.complex.region_topology(&region.mask)
    }

    /// Distance from `p` to the centre of face `f`.
    pub fn face_distance(&self, p: &Point, f: usize) -> f64 {
        if self.is_exterior(f) {
            return f64::INFINITY;
        }
        if self.grid.kind == GridKind::Sphere {
            return sphere_angle(&p.unit_vector(), &self.vectors[f]);
        }
        self.model.geodesic_distance(p, &self.centers[f])
    }

    fn distance_fn(&self, p: &Point) -> impl Fn(usize) -> f64 + '_ {
        let v = p.unit_vector();
        let p = *p;
        move |f| {
            if self.is_exterior(f) {
                f64::INFINITY
            } else if self.grid.kind == GridKind::Sphere {
                sphere_angle(&v, &self.vectors[f])
            } else {
                self.model.geodesic_distance(&p, &self.centers[f])
            }
        }
    }

    fn edge_weight(&self, a: usize, b: usize) -> f64 {
        let ext = |f| self.is_exterior(f);
        if ext(a) || ext(b) {
            return 0.5 * self.exterior.as_ref().map_or(0.0, |e| e.diameter);
        }
        self.model.geodesic_distance(&self.centers[a], &self.centers[b])
    }

    /// Diameter of a connected region by repeated Dijkstra sweeps on the
    /// face-adjacency graph.
    pub fn diameter(&self, region: &Region) -> Result<f64> {
        let faces = region.faces();
        if faces.is_empty() {
            return Ok(0.0);
        }
        let mut index = vec![usize::MAX; region.len()];
        let mut graph = UnGraph::<usize, f64>::with_capacity(faces.len(), 4 * faces.len());
        for &f in &faces {
            index[f] = graph.add_node(f).index();
        }
        for &f in &faces {
            for g in self.complex.neighbors(f) {
                if g > f && region.mask[g] {
                    graph.add_edge(NodeIndex::new(index[f]), NodeIndex::new(index[g]), self.edge_weight(f, g));
                }
            }
        }
        let sweep = |src: NodeIndex| -> Result<(NodeIndex, f64)> {
            let dist = dijkstra(&graph, src, None, |e| *e.weight());
            if dist.len() != graph.node_count() {
                return Err(Error::Disconnected);
            }
            let (far, d) = dist
                .iter()
                .map(|(n, d)| (*n, *d))
                .fold((src, 0.0), |acc, (n, d)| if d > acc.1 || (d == acc.1 && n < acc.0) { (n, d) } else { acc });
            Ok((far, d))
        };
        let (a, _) = sweep(NodeIndex::new(0))?;
        let (b, d1) = sweep(a)?;
        let (c, d2) = sweep(b)?;
        let (_, d3) = sweep(c)?;
        Ok(d1.max(d2).max(d3))
    }

    /// Mass of the closed geodesic disk `B_r(p)`; cells cut by the circle
    /// are split by a 4x4 sub-sample weighted by the area element.
    pub fn disk_mass(&self, p: &Point, r: f64) -> f64 {
        let dist = self.distance_fn(p);
        let g = &self.grid;
        let mut total = 0.0;
        for f in 0..self.num_faces() {
            let m = self.masses[f];
            if m == 0.0 {
                continue;
            }
            let d = dist(f);
            let rad = self.radii[f];
            if d + rad <= r {
                total += m;
            } else if d - rad >= r {
                continue;
            } else if f >= self.num_cells() {
                if d <= r {
                    total += m;
                }
            } else {
                let c = self.centers[f];
                let mut inside = 0.0;
                let mut all = 0.0;
                for a in 0..4 {
                    let s = c.s + (a as f64 - 1.5) / 4.0 * g.ds;
                    let lam = self.lambda(s);
                    let w = lam * lam;
                    for b in 0..4 {
                        let q = Point { s, theta: c.theta + (b as f64 - 1.5) / 4.0 * g.dtheta() };
                        all += w;
                        if self.model.geodesic_distance(p, &q) <= r {
                            inside += w;
                        }
                    }
                }
                total += m * inside / all;
            }
        }
        total
    }

    /// Faces whose centre lies in `r_inner <= d(p, .) < r`.
    pub fn ring_region(&self, p: &Point, r: f64, r_inner: f64) -> Region {
        let dist = self.distance_fn(p);
        Region { mask: (0..self.num_faces()).map(|f| { let d = dist(f); d >= r_inner && d < r }).collect() }
    }

    pub fn disk_region(&self, p: &Point, r: f64) -> Region {
        self.ring_region(p, r, f64::NEG_INFINITY)
    }

    /// Cylinder-family coordinate `rho` of a point.
    pub fn family_rho(&self, fam: &CylinderFamily, p: &Point) -> f64 {
        match fam.kind {
            FamilyKind::TorusCore { s_core } => {
                let period = self.grid.ds * self.grid.rows as f64;
                let t = (p.s - s_core + 0.5 * period).rem_euclid(period) - 0.5 * period;
                self.lambda(0.0) * t
            }
            FamilyKind::SphereBoundary => p.unit_vector()[1].clamp(-1.0, 1.0).asin(),
            FamilyKind::Collar => collar_rho(self.model.collar_length.unwrap_or(1.0), p.s),
        }
    }

    /// Standard coordinate range `[t_a, t_b]` covered by a face.
    pub fn family_t_range(&self, fam: &CylinderFamily, f: usize) -> Option<(f64, f64)> {
        if f >= self.num_cells() {
            return None;
        }
        let g = &self.grid;
        let (a, b) = g.row_bounds(f / g.cols);
        match fam.kind {
            FamilyKind::TorusCore { s_core } => {
                let period = g.ds * g.rows as f64;
                let ta = (a - s_core + 0.5 * period).rem_euclid(period) - 0.5 * period;
                Some((ta, ta + g.ds))
            }
            FamilyKind::Collar => Some((a, b)),
            FamilyKind::SphereBoundary => {
                let lat = self.family_rho(fam, &self.centers[f]);
                let rad = self.radii[f];
                let lo = (lat - rad).max(-0.5 * PI + 1e-12);
                let hi = (lat + rad).min(0.5 * PI - 1e-12);
                Some((inverse_gudermannian(lo), inverse_gudermannian(hi)))
            }
        }
    }

    /// Faces whose centre has family coordinate in `[rho0, rho1)`.
    pub fn band_region(&self, fam: &CylinderFamily, rho0: f64, rho1: f64) -> Region {
        Region {
            mask: (0..self.num_faces())
                .map(|f| {
                    if f >= self.num_cells() {
                        return false;
                    }
                    let r = self.family_rho(fam, &self.centers[f]);
                    r >= rho0 && r < rho1
                })
                .collect(),
        }
    }

    /// Rasterize an annulus on face centres.
    pub fn rasterize(&self, spec: &AnnulusSpec, families: &[CylinderFamily]) -> Result<Region> {
        match spec.shape {
            AnnulusShape::Trivial { center, r, r_inner, .. } => Ok(self.ring_region(&center, r, r_inner)),
            AnnulusShape::Cylinder { family, rho0, rho1, .. } => {
                let fam = families
                    .get(family)
                    .ok_or_else(|| Error::Precondition(format!("unknown cylinder family {family}")))?;
                Ok(self.band_region(fam, rho0, rho1))
            }
        }
    }

    /// Point at distance `rho` from `p` in direction `phi`.
    pub fn exp_point(&self, p: &Point, rho: f64, phi: f64) -> Point {
        match self.grid.kind {
            GridKind::Sphere => sphere_exp(p, rho, phi),
            GridKind::Torus => {
                let lam = self.lambda(0.0);
                let period = self.grid.ds * self.grid.rows as f64;
                let s = p.s + rho / lam * phi.sin();
                let s = (s - self.grid.s0).rem_euclid(period) + self.grid.s0;
                Point::new(s, p.theta + rho / lam * phi.cos())
            }
            GridKind::Collar => {
                let ell = self.model.collar_length.unwrap_or(1.0);
                let r0 = collar_rho(ell, p.s);
                let x0 = ell * p.theta / TAU;
                // hyperboloid model in Fermi coordinates around the core
                let pt = [r0.cosh() * x0.cosh(), r0.cosh() * x0.sinh(), r0.sinh()];
                let ex = [x0.sinh(), x0.cosh(), 0.0];
                let er = [r0.sinh() * x0.cosh(), r0.sinh() * x0.sinh(), r0.cosh()];
                let (c, sn) = (phi.cos(), phi.sin());
                let v: Vec<f64> = (0..3).map(|k| c * ex[k] + sn * er[k]).collect();
                let q: Vec<f64> = (0..3).map(|k| rho.cosh() * pt[k] + rho.sinh() * v[k]).collect();
                let r1 = q[2].asinh();
                let x1 = (q[1] / q[0]).atanh();
                Point::new(collar_s(ell, r1), TAU * x1 / ell)
            }
        }
    }

    /// Point of a cylinder family at standard coordinate `t` and angle `theta`.
    pub fn family_point(&self, fam: &CylinderFamily, t: f64, theta: f64) -> Point {
        match fam.kind {
            FamilyKind::TorusCore { s_core } => {
                let period = self.grid.ds * self.grid.rows as f64;
                let s = (s_core + t - self.grid.s0).rem_euclid(period) + self.grid.s0;
                Point::new(s, theta)
            }
            FamilyKind::Collar => Point::new(t, theta),
            FamilyKind::SphereBoundary => {
                let lat = fam.profile.rho_of_t(t);
                let v = [lat.cos() * theta.cos(), lat.sin(), lat.cos() * theta.sin()];
                point_from_unit_vector(&v)
            }
        }
    }

    /// Radial profile about `center` in the coordinate `u = radial_log(d)`.
    ///
    /// Pole centres on the sphere use exact row boundaries; other centres use
    /// `u`-bins of width `log(ratio)` between `u_lo` and `u_hi`.
    pub fn radial_profile(&self, center: &Point, u_lo: f64, u_hi: f64, ratio: f64) -> Profile {
        let k = self.model.curvature;
        let g = &self.grid;
        let nc = g.num_cells();
        if g.kind == GridKind::Sphere && center.is_pole() {
            let sign = if center.s < 0.0 { 1.0 } else { -1.0 };
            let mut edges: Vec<f64> = (0..=g.rows).map(|i| sign * (g.s0 + i as f64 * g.ds)).collect();
            if sign < 0.0 {
                edges.reverse();
            }
            edges.retain(|&u| u >= u_lo - 1e-12 && u <= u_hi + 1e-12);
            if edges.len() < 2 {
                edges = vec![u_lo, u_hi];
            }
            let ranges = (0..self.num_faces()).map(|f| {
                let m = self.masses[f];
                if f < nc {
                    let (a, b) = g.row_bounds(f / g.cols);
                    if sign > 0.0 { (a, b, m) } else { (-b, -a, m) }
                } else if (f == nc) == (sign > 0.0) {
                    (f64::NEG_INFINITY, f64::NEG_INFINITY, m)
                } else {
                    (f64::INFINITY, f64::INFINITY, m)
                }
            });
            return Profile::build(edges, ranges);
        }
        let du = ratio.ln();
        let n = (((u_hi - u_lo) / du).ceil() as usize).max(1);
        let edges: Vec<f64> = (0..=n).map(|i| u_lo + (u_hi - u_lo) * i as f64 / n as f64).collect();
        let dist = self.distance_fn(center);
        let r_cap = if k == crate::geometry::Curvature::Positive { PI } else { f64::INFINITY };
        let ranges = (0..self.num_faces()).map(|f| {
            let m = self.masses[f];
            let d = dist(f);
            if !d.is_finite() {
                return (f64::INFINITY, f64::INFINITY, m);
            }
            let rad = self.radii[f];
            let lo = d - rad;
            let hi = (d + rad).min(r_cap);
            let ua = if lo <= 0.0 { f64::NEG_INFINITY } else { radial_log(k, lo) };
            let ub = radial_log(k, hi);
            if ua == f64::NEG_INFINITY {
                (ub, ub, m)
            } else {
                (ua, ub, m)
            }
        });
        Profile::build(edges, ranges)
    }

    /// Profile of a cylinder family in its standard coordinate `t`.
    pub fn family_profile(&self, fam: &CylinderFamily, t_lo: f64, t_hi: f64, dt: f64) -> Profile {
        let n = (((t_hi - t_lo) / dt).ceil() as usize).max(1);
        let edges: Vec<f64> = (0..=n).map(|i| t_lo + (t_hi - t_lo) * i as f64 / n as f64).collect();
        let ranges = (0..self.num_faces()).map(|f| match self.family_t_range(fam, f) {
            Some((a, b)) => (a, b, self.masses[f]),
            None => (f64::INFINITY, f64::INFINITY, self.masses[f]),
        });
        Profile::build(edges, ranges)
    }
}

/// Bordered inputs that [`double`] can close up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BorderedSurface {
    /// The disk as the upper half-plane `0 <= theta <= pi` of the sphere chart.
    Disk { field: Field, rows: usize, cols: usize, s_min: f64, s_max: f64 },
    /// Flat annulus of the given modulus, `0 <= s <= modulus`.
    Annulus { field: Field, modulus: f64, rows: usize, cols: usize },
    /// Bordered surface of genus `genus` with `boundaries` circles.
    Other { genus: u32, boundaries: u32 },
}

/// Genus of the double of a bordered surface.
pub fn doubled_genus(genus: u32, boundaries: u32) -> u32 {
    2 * genus + boundaries.max(1) - 1
}

/// Complex double with its conjugation and reflected density.
pub fn double(bordered: &BorderedSurface) -> Result<MeasuredSurface> {
    match bordered {
        BorderedSurface::Disk { field, rows, cols, s_min, s_max } => {
            let grid = Grid::sphere(*rows, *cols, *s_min, *s_max)?;
            let field = Field::ThetaMirror { inner: Box::new(field.clone()) };
            MeasuredSurface::new(
                MetricModel::sphere(),
                0,
                grid,
                DensitySource::Field { field },
                Some(Involution::ThetaFlip),
                None,
            )
        }
        BorderedSurface::Annulus { field, modulus, rows, cols } => {
            if !(*modulus > 0.0) {
                return Err(Error::Domain(format!("annulus modulus must be positive, got {modulus}")));
            }
            let model = MetricModel::flat_torus(0.0, modulus / PI)?;
            let grid = Grid::torus(&model, *rows, *cols)?;
            let field = Field::SMirror { inner: Box::new(field.clone()) };
            MeasuredSurface::new(model, 1, grid, DensitySource::Field { field }, Some(Involution::SFlip), None)
        }
        BorderedSurface::Other { genus, boundaries } => Err(Error::Unsupported(format!(
            "gridded doubles exist only for disks and annuli; genus {genus} with {boundaries} boundaries doubles to genus {}",
            doubled_genus(*genus, *boundaries)
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::RationalMap;

    fn uniform_sphere(rows: usize, cols: usize) -> MeasuredSurface {
        let grid = Grid::sphere(rows, cols, -8.0, 8.0).unwrap();
        let field = Field::Constant { value: 1.0 };
        MeasuredSurface::new(MetricModel::sphere(), 0, grid, DensitySource::Field { field }, None, None).unwrap()
    }

    #[test]
    fn sphere_area_and_mass() {
        let s = uniform_sphere(64, 16);
        assert!((s.total_area() - 4.0 * PI).abs() < 1e-12);
        assert!((s.total_mass() - 4.0 * PI).abs() < 1e-12);
        assert_eq!(s.measure_of(&Region::empty(s.num_faces())), 0.0);
    }

    #[test]
    fn square_map_mass() {
        let grid = Grid::sphere(320, 32, -16.0, 16.0).unwrap();
        let field = Field::RationalPullback { map: RationalMap::power(2) };
        let s = MeasuredSurface::new(MetricModel::sphere(), 0, grid, DensitySource::Field { field }, None, None).unwrap();
        assert!((s.total_mass() - 8.0 * PI).abs() < 1e-3 * 8.0 * PI);
    }

    #[test]
    fn disk_mass_matches_cap_area() {
        let s = uniform_sphere(160, 64);
        let p = Point::new(0.3, 1.0);
        let r: f64 = 0.7;
        let exact = TAU * (1.0 - r.cos());
        assert!((s.disk_mass(&p, r) - exact).abs() < 0.01 * exact);
    }

    #[test]
    fn pole_profile_is_exact() {
        let s = uniform_sphere(64, 16);
        let prof = s.radial_profile(&Point::zero_pole(), -8.0, 8.0, 1.05);
        // area below s: 4 pi / (1 + e^{-2s})
        let u: f64 = 0.5;
        let exact = 2.0 * TAU / (1.0 + (-2.0 * u).exp());
        assert!((prof.mass_below(u) - exact).abs() < 1e-2);
    }

    #[test]
    fn sphere_diameter() {
        let s = uniform_sphere(80, 32);
        let d = s.diameter(&Region::full(s.num_faces())).unwrap();
        assert!((d - PI).abs() < 0.05 * PI, "{d}");
    }

    #[test]
    fn clean_predicates() {
        let grid = Grid::sphere(40, 16, -5.0, 5.0).unwrap();
        let field = Field::Constant { value: 1.0 };
        let s = MeasuredSurface::new(
            MetricModel::sphere(),
            0,
            grid,
            DensitySource::Field { field },
            Some(Involution::ThetaFlip),
            None,
        )
        .unwrap();
        let band = s.disk_region(&Point::new(0.0, 0.0), 0.5);
        assert!(s.is_clean(&band));
        let inside = s.disk_region(&Point::new(0.0, 0.5 * PI), 0.3);
        assert!(s.is_clean(&inside));
        let crossing = s.disk_region(&Point::new(0.0, 0.3), 0.8);
        assert!(!s.is_clean(&crossing));
    }

    #[test]
    fn doubles() {
        let disk = BorderedSurface::Disk { field: Field::Constant { value: 1.0 }, rows: 40, cols: 16, s_min: -6.0, s_max: 6.0 };
        let s = double(&disk).unwrap();
        assert_eq!(s.genus, 0);
        assert_eq!(s.involution, Some(Involution::ThetaFlip));
        let ann = BorderedSurface::Annulus { field: Field::Constant { value: 1.0 }, modulus: 3.0, rows: 24, cols: 16 };
        let t = double(&ann).unwrap();
        assert_eq!(t.genus, 1);
        assert_eq!(doubled_genus(0, 3), 2);
        assert!(double(&BorderedSurface::Other { genus: 0, boundaries: 3 }).is_err());
    }
}
