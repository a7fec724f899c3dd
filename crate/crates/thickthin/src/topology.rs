//! Cell-complex topology of grid masks.
//!
//! The grid is a `rows x cols` array of square cells, periodic in `theta` and
//! optionally in `s`, plus special faces glued along full rows of edges
//! (polar caps, or the opaque exterior of a collar model). A region is a
//! mask over all faces; its closure is a 2-complex whose Euler
//! characteristic is `V - E + sum chi(face)`.

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A face glued along whole rows of horizontal edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecialFace {
    /// Euler characteristic of the face as a compact surface.
    pub chi: i64,
    /// Genus carried by the face.
    pub genus: u32,
    /// `(edge row, adjacent cell row)` pairs along which the face is glued.
    pub rings: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellComplex {
    pub rows: usize,
    pub cols: usize,
    pub periodic_s: bool,
    pub specials: Vec<SpecialFace>,
}

/// Topology of one connected component of a region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentTopology {
    pub faces: Vec<usize>,
    pub euler: i64,
    pub boundaries: usize,
    pub genus: u32,
}

impl ComponentTopology {
    pub fn b1(&self) -> usize {
        if self.boundaries == 0 {
            2 * self.genus as usize
        } else {
            2 * self.genus as usize + self.boundaries - 1
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionTopology {
    pub components: Vec<ComponentTopology>,
}

impl RegionTopology {
    pub fn b1(&self) -> usize {
        self.components.iter().map(|c| c.b1()).sum()
    }

    pub fn euler(&self) -> i64 {
        self.components.iter().map(|c| c.euler).sum()
    }
}

impl CellComplex {
    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn num_faces(&self) -> usize {
        self.num_cells() + self.specials.len()
    }

    fn vertex_rows(&self) -> usize {
        if self.periodic_s {
            self.rows
        } else {
            self.rows + 1
        }
    }

    fn num_vertices(&self) -> usize {
        self.vertex_rows() * self.cols
    }

    fn num_edges(&self) -> usize {
        self.vertex_rows() * self.cols + self.rows * self.cols
    }

    fn vrow(&self, i: usize) -> usize {
        if self.periodic_s {
            i % self.rows
        } else {
            i
        }
    }

    fn vertex(&self, i: usize, j: usize) -> usize {
        self.vrow(i) * self.cols + j % self.cols
    }

    fn hedge(&self, i: usize, j: usize) -> usize {
        self.vrow(i) * self.cols + j % self.cols
    }

    fn vedge(&self, i: usize, j: usize) -> usize {
        self.vertex_rows() * self.cols + i * self.cols + j % self.cols
    }

    pub fn cell(&self, i: usize, j: usize) -> usize {
        i * self.cols + j % self.cols
    }

    /// Faces sharing at least a vertex with `f` (8-neighbourhood).
    pub fn neighbors(&self, f: usize) -> Vec<usize> {
        let (r, c) = (self.rows, self.cols);
        let mut out = Vec::with_capacity(8);
        if f < self.num_cells() {
            let (i, j) = (f / c, f % c);
            for di in [-1i64, 0, 1] {
                let ii = i as i64 + di;
                let ii = if self.periodic_s {
                    ii.rem_euclid(r as i64) as usize
                } else if ii < 0 || ii >= r as i64 {
                    continue;
                } else {
                    ii as usize
                };
                for dj in [c - 1, 0, 1] {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let g = ii * c + (j + dj) % c;
                    if g != f && !out.contains(&g) {
                        out.push(g);
                    }
                }
            }
            for (k, sp) in self.specials.iter().enumerate() {
                if sp.rings.iter().any(|&(_, cr)| cr == i) {
                    out.push(self.num_cells() + k);
                }
            }
        } else {
            let sp = &self.specials[f - self.num_cells()];
            for &(_, cr) in &sp.rings {
                out.extend((0..c).map(|j| cr * c + j));
            }
        }
        out
    }

    /// Faces on the two sides of every edge.
    fn edge_faces(&self, e: usize) -> [Option<usize>; 2] {
        let (r, c) = (self.rows, self.cols);
        let nh = self.vertex_rows() * c;
        if e < nh {
            let (i, j) = (e / c, e % c);
            let below = if i > 0 {
                Some((i - 1) * c + j)
            } else if self.periodic_s {
                Some((r - 1) * c + j)
            } else {
                None
            };
            let above = if i < r { Some(i * c + j) } else { None };
            let mut out = [below, above];
            for (k, sp) in self.specials.iter().enumerate() {
                if sp.rings.iter().any(|&(er, _)| er == i) {
                    let face = Some(self.num_cells() + k);
                    if out[0].is_none() {
                        out[0] = face;
                    } else if out[1].is_none() {
                        out[1] = face;
                    }
                }
            }
            out
        } else {
            let k = e - nh;
            let (i, j) = (k / c, k % c);
            [Some(i * c + (j + c - 1) % c), Some(i * c + j)]
        }
    }

    fn closure(&self, f: usize, verts: &mut Vec<usize>, edges: &mut Vec<usize>) {
        let c = self.cols;
        if f < self.num_cells() {
            let (i, j) = (f / c, f % c);
            verts.extend([self.vertex(i, j), self.vertex(i, j + 1), self.vertex(i + 1, j), self.vertex(i + 1, j + 1)]);
            edges.extend([self.hedge(i, j), self.hedge(i + 1, j), self.vedge(i, j), self.vedge(i, j + 1)]);
        } else {
            for &(er, _) in &self.specials[f - self.num_cells()].rings {
                for j in 0..c {
                    verts.push(self.vertex(er, j));
                    edges.push(self.hedge(er, j));
                }
            }
        }
    }

    fn edge_vertices(&self, e: usize) -> (usize, usize) {
        let c = self.cols;
        let nh = self.vertex_rows() * c;
        if e < nh {
            let (i, j) = (e / c, e % c);
            (self.vertex(i, j), self.vertex(i, j + 1))
        } else {
            let k = e - nh;
            let (i, j) = (k / c, k % c);
            (self.vertex(i, j), self.vertex(i + 1, j))
        }
    }

    fn face_chi(&self, f: usize) -> i64 {
        if f < self.num_cells() {
            1
        } else {
            self.specials[f - self.num_cells()].chi
        }
    }

    fn face_genus(&self, f: usize) -> u32 {
        if f < self.num_cells() {
            0
        } else {
            self.specials[f - self.num_cells()].genus
        }
    }

    /// Connected components of a mask under 8-neighbour adjacency, ordered by
    /// smallest face index.
    pub fn components(&self, mask: &[bool]) -> Vec<Vec<usize>> {
        let n = self.num_faces();
        let mut uf = UnionFind::<usize>::new(n);
        for f in 0..n {
            if !mask[f] {
                continue;
            }
            for g in self.neighbors(f) {
                if g > f && mask[g] {
                    uf.union(f, g);
                }
            }
        }
        let mut root_slot: Vec<Option<usize>> = vec![None; n];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        for (f, &inside) in mask.iter().enumerate().take(n) {
            if !inside {
                continue;
            }
            let r = uf.find(f);
            match root_slot[r] {
                Some(k) => comps[k].push(f),
                None => {
                    root_slot[r] = Some(comps.len());
                    comps.push(vec![f]);
                }
            }
        }
        comps
    }

    /// Components, Euler characteristics, boundary circles and genera.
    pub fn region_topology(&self, mask: &[bool]) -> Result<RegionTopology> {
        let comps = self.components(mask);
        let mut out = Vec::with_capacity(comps.len());
        let mut vstamp = vec![usize::MAX; self.num_vertices()];
        let mut estamp = vec![usize::MAX; self.num_edges()];
        for (k, faces) in comps.into_iter().enumerate() {
            let mut in_comp = vec![false; self.num_faces()];
            faces.iter().for_each(|&f| in_comp[f] = true);
            let (mut verts, mut edges) = (Vec::new(), Vec::new());
            let mut chi_faces = 0i64;
            let mut genus_faces = 0u32;
            for &f in &faces {
                self.closure(f, &mut verts, &mut edges);
                chi_faces += self.face_chi(f);
                genus_faces += self.face_genus(f);
            }
            let mut nv = 0i64;
            for v in verts {
                if vstamp[v] != k {
                    vstamp[v] = k;
                    nv += 1;
                }
            }
            let mut ne = 0i64;
            let mut boundary_edges = Vec::new();
            for e in edges {
                if estamp[e] == k {
                    continue;
                }
                estamp[e] = k;
                ne += 1;
                let sides = self.edge_faces(e);
                let inside = sides.iter().filter(|s| s.is_some_and(|f| in_comp[f])).count();
                if inside == 1 {
                    boundary_edges.push(e);
                }
            }
            let euler = nv - ne + chi_faces;
            let boundaries = self.count_cycles(&boundary_edges)?;
            let twice_genus = 2 - euler - boundaries as i64;
            if twice_genus < 0 || twice_genus % 2 != 0 {
                return Err(Error::Refinement(format!(
                    "component {k} has inconsistent topology: chi={euler}, boundaries={boundaries}"
                )));
            }
            let genus = (twice_genus / 2) as u32;
            if genus < genus_faces {
                return Err(Error::Refinement(format!("component {k} lost genus carried by special faces")));
            }
            out.push(ComponentTopology { faces, euler, boundaries, genus });
        }
        Ok(RegionTopology { components: out })
    }

    fn count_cycles(&self, edges: &[usize]) -> Result<usize> {
        if edges.is_empty() {
            return Ok(0);
        }
        let mut degree = std::collections::BTreeMap::<usize, usize>::new();
        let mut ids = std::collections::BTreeMap::<usize, usize>::new();
        for &e in edges {
            let (a, b) = self.edge_vertices(e);
            for v in [a, b] {
                *degree.entry(v).or_insert(0) += 1;
                let next = ids.len();
                ids.entry(v).or_insert(next);
            }
        }
        if let Some((v, d)) = degree.iter().find(|(_, &d)| d != 2) {
            return Err(Error::Refinement(format!("non-manifold boundary at vertex {v} (degree {d})")));
        }
        let mut uf = UnionFind::<usize>::new(ids.len());
        for &e in edges {
            let (a, b) = self.edge_vertices(e);
            uf.union(ids[&a], ids[&b]);
        }
        let mut roots: Vec<usize> = (0..ids.len()).map(|i| uf.find(i)).collect();
        roots.sort_unstable();
        roots.dedup();
        Ok(roots.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(rows: usize, cols: usize) -> CellComplex {
        CellComplex {
            rows,
            cols,
            periodic_s: false,
            specials: vec![
                SpecialFace { chi: 1, genus: 0, rings: vec![(0, 0)] },
                SpecialFace { chi: 1, genus: 0, rings: vec![(rows, rows - 1)] },
            ],
        }
    }

    #[test]
    fn full_sphere_and_torus() {
        let s = sphere(6, 8);
        let t = s.region_topology(&vec![true; s.num_faces()]).unwrap();
        assert_eq!(t.components.len(), 1);
        assert_eq!(t.components[0].euler, 2);
        assert_eq!(t.components[0].genus, 0);
        let torus = CellComplex { rows: 6, cols: 8, periodic_s: true, specials: vec![] };
        let t = torus.region_topology(&[true; 48]).unwrap();
        assert_eq!(t.components[0].euler, 0);
        assert_eq!(t.components[0].genus, 1);
        assert_eq!(t.b1(), 2);
    }

    #[test]
    fn annulus_and_disk() {
        let s = sphere(10, 8);
        let mut mask = vec![false; s.num_faces()];
        for i in 3..6 {
            for j in 0..8 {
                mask[s.cell(i, j)] = true;
            }
        }
        let t = s.region_topology(&mask).unwrap();
        assert_eq!(t.components.len(), 1);
        assert_eq!(t.components[0].boundaries, 2);
        assert_eq!(t.b1(), 1);
        let mut disk = vec![false; s.num_faces()];
        disk[s.num_cells()] = true;
        for i in 0..3 {
            for j in 0..8 {
                disk[s.cell(i, j)] = true;
            }
        }
        let t = s.region_topology(&disk).unwrap();
        assert_eq!(t.components[0].euler, 1);
        assert_eq!(t.b1(), 0);
    }

    #[test]
    fn pinch_requests_refinement() {
        let s = sphere(6, 8);
        let mut mask = vec![false; s.num_faces()];
        mask[s.cell(2, 2)] = true;
        mask[s.cell(3, 3)] = true;
        assert!(matches!(s.region_topology(&mask), Err(Error::Refinement(_))));
    }
}
