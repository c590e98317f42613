//! Matched fine and coarse uniform Cartesian meshes on the unit square.
//!
//! Fine nodes are numbered row by row, `id = j * (nx + 1) + i`, where `i`
//! indexes x and `j` indexes y. Fine cells follow the same layout with
//! `nx` cells per row. Coarse nodes, elements and edges use the analogous
//! numbering on the `m x m` coarse grid.

use crate::{Error, Result};

/// Uniform fine quadrilateral mesh of `[0,1]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FineGrid {
    nx: usize,
    h: f64,
    boundary: Vec<bool>,
}

impl FineGrid {
    pub fn new(nx: usize) -> Result<Self> {
        if nx == 0 {
            return Err(Error::InvalidConfig("nx must be positive".into()));
        }
        let np = nx + 1;
        let boundary = (0..np * np)
            .map(|id| {
                let (i, j) = (id % np, id / np);
                i == 0 || j == 0 || i == nx || j == nx
            })
            .collect();
        Ok(Self {
            nx,
            h: 1.0 / nx as f64,
            boundary,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.nx + 1)
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.nx
    }

    pub fn node_id(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_ij(&self, id: usize) -> (usize, usize) {
        (id % (self.nx + 1), id / (self.nx + 1))
    }

    pub fn node_coords(&self, id: usize) -> [f64; 2] {
        let (i, j) = self.node_ij(id);
        [i as f64 * self.h, j as f64 * self.h]
    }

    pub fn cell_id(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_ij(&self, id: usize) -> (usize, usize) {
        (id % self.nx, id / self.nx)
    }

    /// Counterclockwise node ids of a cell, starting at the lower-left corner.
    pub fn cell_nodes(&self, cell: usize) -> [usize; 4] {
        let (i, j) = self.cell_ij(cell);
        [
            self.node_id(i, j),
            self.node_id(i + 1, j),
            self.node_id(i + 1, j + 1),
            self.node_id(i, j + 1),
        ]
    }

    pub fn cell_midpoint(&self, cell: usize) -> [f64; 2] {
        let (i, j) = self.cell_ij(cell);
        [(i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&n| self.boundary[n]).collect()
    }

    /// The whole domain as a patch.
    pub fn full_patch(&self) -> Patch {
        Patch {
            x0: 0,
            x1: self.nx,
            y0: 0,
            y1: self.nx,
        }
    }
}

/// Axis-aligned block of fine cells `[x0, x1) x [y0, y1)` (in cell indices).
///
/// The patch owns a local node numbering: lexicographic by (y, x) over the
/// `(x1 - x0 + 1) * (y1 - y0 + 1)` nodes of its closure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Patch {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl Patch {
    pub fn cells_x(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn cells_y(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn num_cells(&self) -> usize {
        self.cells_x() * self.cells_y()
    }

    pub fn num_nodes(&self) -> usize {
        (self.cells_x() + 1) * (self.cells_y() + 1)
    }

    /// Local node index of global node `(i, j)`, if it lies in the closure.
    pub fn local_node(&self, i: usize, j: usize) -> Option<usize> {
        if i < self.x0 || i > self.x1 || j < self.y0 || j > self.y1 {
            return None;
        }
        Some((j - self.y0) * (self.cells_x() + 1) + (i - self.x0))
    }

    /// Global `(i, j)` of a local node.
    pub fn node_ij(&self, local: usize) -> (usize, usize) {
        let w = self.cells_x() + 1;
        (self.x0 + local % w, self.y0 + local / w)
    }

    pub fn contains_cell(&self, i: usize, j: usize) -> bool {
        i >= self.x0 && i < self.x1 && j >= self.y0 && j < self.y1
    }

    /// Global cell ids in row-major order.
    pub fn cells<'a>(&'a self, fine: &'a FineGrid) -> impl Iterator<Item = usize> + 'a {
        (self.y0..self.y1).flat_map(move |j| (self.x0..self.x1).map(move |i| fine.cell_id(i, j)))
    }

    /// Local node ids (counterclockwise) of a global cell inside the patch.
    pub fn local_cell_nodes(&self, fine: &FineGrid, cell: usize) -> [usize; 4] {
        let (i, j) = fine.cell_ij(cell);
        let w = self.cells_x() + 1;
        let base = (j - self.y0) * w + (i - self.x0);
        [base, base + 1, base + w + 1, base + w]
    }

    pub fn area(&self, h: f64) -> f64 {
        self.num_cells() as f64 * h * h
    }

    pub fn global_nodes(&self, fine: &FineGrid) -> Vec<usize> {
        (0..self.num_nodes())
            .map(|l| {
                let (i, j) = self.node_ij(l);
                fine.node_id(i, j)
            })
            .collect()
    }

    pub fn is_patch_boundary(&self, local: usize) -> bool {
        let (i, j) = self.node_ij(local);
        i == self.x0 || i == self.x1 || j == self.y0 || j == self.y1
    }
}

/// Coarse subdomain on which local spectral problems are posed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subdomain {
    /// Neighborhood `omega_i` of coarse node `i`.
    Neighborhood(usize),
    /// Coarse element `K`.
    Element(usize),
}

impl Subdomain {
    pub fn id(&self) -> usize {
        match *self {
            Subdomain::Neighborhood(i) | Subdomain::Element(i) => i,
        }
    }
}

/// Fine nodes of a subdomain with a per-node flag marking the subdomain boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubdomainNodes {
    pub nodes: Vec<usize>,
    pub on_boundary: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeOrientation {
    /// Edge along `x = const`; its normal points in +x.
    Vertical,
    /// Edge along `y = const`; its normal points in +y.
    Horizontal,
}

/// A coarse-grid edge.
///
/// `minus` is the coarse element on the left (vertical edge) or below
/// (horizontal edge); `plus` is on the other side. On the domain boundary
/// one of them is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseEdge {
    pub orientation: EdgeOrientation,
    pub minus: Option<usize>,
    pub plus: Option<usize>,
    /// Consecutive fine node pairs tiling the edge, in increasing coordinate.
    pub segments: Vec<[usize; 2]>,
    /// For each segment, the fine cell on the minus and plus sides.
    pub segment_cells: Vec<[Option<usize>; 2]>,
}

impl CoarseEdge {
    pub fn is_boundary(&self) -> bool {
        self.minus.is_none() || self.plus.is_none()
    }
}

/// Uniform coarse grid whose elements are `r x r` blocks of fine cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGrid {
    m: usize,
    ratio: usize,
    h_coarse: f64,
    edges: Vec<CoarseEdge>,
}

impl CoarseGrid {
    pub fn m(&self) -> usize {
        self.m
    }

    /// Fine cells per coarse cell side.
    pub fn ratio(&self) -> usize {
        self.ratio
    }

    #[allow(non_snake_case)]
    pub fn H(&self) -> f64 {
        self.h_coarse
    }

    pub fn num_nodes(&self) -> usize {
        (self.m + 1) * (self.m + 1)
    }

    pub fn num_elements(&self) -> usize {
        self.m * self.m
    }

    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % (self.m + 1), node / (self.m + 1))
    }

    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.node_ij(node);
        [i as f64 * self.h_coarse, j as f64 * self.h_coarse]
    }

    pub fn element_ij(&self, k: usize) -> (usize, usize) {
        (k % self.m, k / self.m)
    }

    /// Counterclockwise coarse vertices of element `k`.
    pub fn element_vertices(&self, k: usize) -> [usize; 4] {
        let (i, j) = self.element_ij(k);
        let w = self.m + 1;
        [j * w + i, j * w + i + 1, (j + 1) * w + i + 1, (j + 1) * w + i]
    }

    pub fn element_patch(&self, k: usize) -> Patch {
        let (i, j) = self.element_ij(k);
        let r = self.ratio;
        Patch {
            x0: i * r,
            x1: (i + 1) * r,
            y0: j * r,
            y1: (j + 1) * r,
        }
    }

    /// Fine cell ids making up coarse element `k`.
    pub fn element_cells(&self, fine: &FineGrid, k: usize) -> Vec<usize> {
        self.element_patch(k).cells(fine).collect()
    }

    /// Coarse elements whose closure contains coarse node `i`.
    pub fn neighborhood(&self, node: usize) -> Vec<usize> {
        let (ni, nj) = self.node_ij(node);
        let mut out = Vec::with_capacity(4);
        for ej in nj.saturating_sub(1)..=nj.min(self.m - 1) {
            for ei in ni.saturating_sub(1)..=ni.min(self.m - 1) {
                out.push(ej * self.m + ei);
            }
        }
        out
    }

    pub fn neighborhood_patch(&self, node: usize) -> Patch {
        let (ni, nj) = self.node_ij(node);
        let r = self.ratio;
        Patch {
            x0: ni.saturating_sub(1) * r,
            x1: (ni + 1).min(self.m) * r,
            y0: nj.saturating_sub(1) * r,
            y1: (nj + 1).min(self.m) * r,
        }
    }

    pub fn patch(&self, tau: Subdomain) -> Patch {
        match tau {
            Subdomain::Neighborhood(i) => self.neighborhood_patch(i),
            Subdomain::Element(k) => self.element_patch(k),
        }
    }

    pub fn subdomain_fine_nodes(&self, fine: &FineGrid, tau: Subdomain) -> SubdomainNodes {
        let p = self.patch(tau);
        SubdomainNodes {
            nodes: p.global_nodes(fine),
            on_boundary: (0..p.num_nodes()).map(|l| p.is_patch_boundary(l)).collect(),
        }
    }

    pub fn edges(&self) -> &[CoarseEdge] {
        &self.edges
    }

    /// Coarse element containing fine cell `(i, j)`.
    pub fn element_of_cell(&self, i: usize, j: usize) -> usize {
        (j / self.ratio) * self.m + i / self.ratio
    }

    /// Coarse nodes adjacent to `node` (including itself) whose neighborhoods
    /// overlap it with positive area.
    pub fn overlapping_nodes(&self, node: usize) -> Vec<usize> {
        let (ni, nj) = self.node_ij(node);
        let mut out = Vec::with_capacity(9);
        for j in nj.saturating_sub(1)..=(nj + 1).min(self.m) {
            for i in ni.saturating_sub(1)..=(ni + 1).min(self.m) {
                out.push(j * (self.m + 1) + i);
            }
        }
        out
    }

    /// Coarse elements sharing an edge with `k`, plus `k` itself.
    pub fn edge_adjacent_elements(&self, k: usize) -> Vec<usize> {
        let (i, j) = self.element_ij(k);
        let mut out = vec![k];
        if i > 0 {
            out.push(k - 1);
        }
        if i + 1 < self.m {
            out.push(k + 1);
        }
        if j > 0 {
            out.push(k - self.m);
        }
        if j + 1 < self.m {
            out.push(k + self.m);
        }
        out.sort_unstable();
        out
    }
}

fn build_edges(fine: &FineGrid, m: usize, r: usize) -> Vec<CoarseEdge> {
    let mut edges = Vec::with_capacity(2 * m * (m + 1));
    let elem = |i: isize, j: isize| -> Option<usize> {
        if i < 0 || j < 0 || i >= m as isize || j >= m as isize {
            None
        } else {
            Some(j as usize * m + i as usize)
        }
    };
    let nx = fine.nx() as isize;
    let cell = |i: isize, j: isize| -> Option<usize> {
        if i < 0 || j < 0 || i >= nx || j >= nx {
            None
        } else {
            Some(fine.cell_id(i as usize, j as usize))
        }
    };
    // Vertical edges: x = a * H, spanning coarse row b.
    for b in 0..m {
        for a in 0..=m {
            let x = a * r;
            let segments = (b * r..(b + 1) * r)
                .map(|y| [fine.node_id(x, y), fine.node_id(x, y + 1)])
                .collect();
            let segment_cells = (b * r..(b + 1) * r)
                .map(|y| [cell(x as isize - 1, y as isize), cell(x as isize, y as isize)])
                .collect();
            edges.push(CoarseEdge {
                orientation: EdgeOrientation::Vertical,
                minus: elem(a as isize - 1, b as isize),
                plus: elem(a as isize, b as isize),
                segments,
                segment_cells,
            });
        }
    }
    // Horizontal edges: y = b * H, spanning coarse column a.
    for b in 0..=m {
        for a in 0..m {
            let y = b * r;
            let segments = (a * r..(a + 1) * r)
                .map(|x| [fine.node_id(x, y), fine.node_id(x + 1, y)])
                .collect();
            let segment_cells = (a * r..(a + 1) * r)
                .map(|x| [cell(x as isize, y as isize - 1), cell(x as isize, y as isize)])
                .collect();
            edges.push(CoarseEdge {
                orientation: EdgeOrientation::Horizontal,
                minus: elem(a as isize, b as isize - 1),
                plus: elem(a as isize, b as isize),
                segments,
                segment_cells,
            });
        }
    }
    edges
}

/// Build matched fine (`nx x nx`) and coarse (`m x m`) grids.
pub fn build_grids(nx: usize, m: usize) -> Result<(FineGrid, CoarseGrid)> {
    if m == 0 || nx == 0 {
        return Err(Error::InvalidConfig("nx and m must be positive".into()));
    }
    if nx % m != 0 {
        return Err(Error::InvalidConfig(format!(
            "coarse size m={m} does not divide nx={nx}"
        )));
    }
    if nx < 2 * m {
        return Err(Error::InvalidConfig(format!(
            "nx={nx} must be at least 2*m={}",
            2 * m
        )));
    }
    let fine = FineGrid::new(nx)?;
    let ratio = nx / m;
    let edges = build_edges(&fine, m, ratio);
    let coarse = CoarseGrid {
        m,
        ratio,
        h_coarse: 1.0 / m as f64,
        edges,
    };
    Ok((fine, coarse))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sized_grids() {
        let (fine, coarse) = build_grids(100, 10).unwrap();
        assert_eq!(coarse.num_nodes(), 121);
        assert_eq!(coarse.num_elements(), 100);
        assert_eq!(fine.num_nodes(), 101 * 101);
        assert_eq!(fine.num_cells(), 10_000);
    }

    #[test]
    fn small_grids_count() {
        let (fine, coarse) = build_grids(4, 2).unwrap();
        assert_eq!(coarse.num_nodes(), 9);
        for k in 0..coarse.num_elements() {
            assert_eq!(coarse.element_cells(&fine, k).len(), 4);
        }
        let (fine, coarse) = build_grids(16, 4).unwrap();
        assert_eq!(coarse.num_nodes(), 25);
        for k in 0..coarse.num_elements() {
            assert_eq!(coarse.element_cells(&fine, k).len(), 16);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(build_grids(10, 3), Err(Error::InvalidConfig(_))));
        assert!(build_grids(3, 3).is_err());
    }

    #[test]
    fn neighborhood_sizes() {
        let (_, coarse) = build_grids(20, 4).unwrap();
        let w = coarse.m() + 1;
        assert_eq!(coarse.neighborhood(w + 1).len(), 4);
        assert_eq!(coarse.neighborhood(2).len(), 2);
        assert_eq!(coarse.neighborhood(0).len(), 1);
        assert_eq!(coarse.neighborhood(w * w - 1).len(), 1);
    }

    #[test]
    fn subdomain_node_counts() {
        let (fine, coarse) = build_grids(100, 10).unwrap();
        let k = coarse.subdomain_fine_nodes(&fine, Subdomain::Element(37));
        assert_eq!(k.nodes.len(), 121);
        let w = coarse.subdomain_fine_nodes(&fine, Subdomain::Neighborhood(5 * 11 + 5));
        assert_eq!(w.nodes.len(), 441);
        let again = coarse.subdomain_fine_nodes(&fine, Subdomain::Neighborhood(5 * 11 + 5));
        assert_eq!(w, again);
        assert_eq!(w.on_boundary.iter().filter(|&&b| b).count(), 80);
        // lexicographic by (y, x)
        let coords: Vec<_> = w.nodes.iter().map(|&n| fine.node_coords(n)).collect();
        assert!(coords.windows(2).all(|p| (p[0][1], p[0][0]) < (p[1][1], p[1][0])));
    }

    #[test]
    fn partition_and_cover() {
        let (fine, coarse) = build_grids(24, 4).unwrap();
        let mut owner = vec![0usize; fine.num_cells()];
        let mut hoods = vec![0usize; fine.num_cells()];
        for k in 0..coarse.num_elements() {
            for c in coarse.element_cells(&fine, k) {
                owner[c] += 1;
            }
        }
        assert!(owner.iter().all(|&c| c == 1));
        for i in 0..coarse.num_nodes() {
            for c in coarse.neighborhood_patch(i).cells(&fine) {
                hoods[c] += 1;
            }
        }
        assert!(hoods.iter().all(|&c| (1..=4).contains(&c)));
        let covered: std::collections::BTreeSet<_> =
            (0..coarse.num_nodes()).flat_map(|i| coarse.neighborhood(i)).collect();
        assert_eq!(covered.len(), coarse.num_elements());
    }

    #[test]
    fn edges_tile_and_adjacency() {
        let (fine, coarse) = build_grids(30, 5).unwrap();
        assert_eq!(coarse.edges().len(), 2 * 5 * 6);
        for e in coarse.edges() {
            let len: f64 = e
                .segments
                .iter()
                .map(|s| {
                    let a = fine.node_coords(s[0]);
                    let b = fine.node_coords(s[1]);
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
                })
                .sum();
            assert!((len - coarse.H()).abs() < 1e-12);
            for w in e.segments.windows(2) {
                assert_eq!(w[0][1], w[1][0]);
            }
            if !e.is_boundary() {
                assert_ne!(e.minus, e.plus);
                assert!(e.segment_cells.iter().all(|c| c[0].is_some() && c[1].is_some()));
            }
        }
        let interior = coarse.edges().iter().filter(|e| !e.is_boundary()).count();
        assert_eq!(interior, 2 * 5 * 4);
    }

    #[test]
    fn boundary_and_ccw() {
        let fine = FineGrid::new(3).unwrap();
        assert_eq!(fine.boundary_nodes().len(), 12);
        let n = fine.cell_nodes(fine.cell_id(1, 1));
        let p: Vec<_> = n.iter().map(|&i| fine.node_coords(i)).collect();
        // signed area positive for counterclockwise order
        let mut area = 0.0;
        for k in 0..4 {
            let (a, b) = (p[k], p[(k + 1) % 4]);
            area += a[0] * b[1] - b[0] * a[1];
        }
        assert!(area > 0.0);
    }
}
