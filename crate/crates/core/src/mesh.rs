//! Structured quadrilateral grids for the macroscopic rectangle and the
//! cross-shaped periodicity cell.
//!
//! Both grids are built from a uniform lattice. The macro grid covers the
//! whole lattice, the cell grid keeps only the lattice squares inside
//! `Y^s = ((1/3,2/3) x (0,1)) u ((0,1) x (1/3,2/3))`.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// Tolerance used when matching coordinates (periodic pairing, side tests).
pub const COORD_TOL: f64 = 1e-12;

/// Boundary tag of a face, one per subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    ElastDirichlet,
    ElastNeumann,
    DiffDirichlet,
    DiffNeumann,
    /// Interior boundary `Γ` of the perforated cell.
    CellInterior,
    CellPeriodic,
}

/// Which boundary-condition layout a macro grid carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemVariant {
    /// Elastic Dirichlet on the lateral sides, diffusive Dirichlet on the top.
    MixedModel,
    /// Dirichlet everywhere for both subproblems.
    PureDirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    /// End points in counterclockwise order of the owning cell.
    pub nodes: [usize; 2],
    pub cell: usize,
    pub side: Side,
    pub elasticity: BoundaryTag,
    pub diffusion: BoundaryTag,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridKind {
    Macro { lower: [f64; 2], upper: [f64; 2], refinement: u32 },
    Cell { refinement: u32 },
}

/// Quadrilateral grid with boundary tags and periodic metadata.
///
/// Cells list their vertices counterclockwise starting at the lower-left
/// corner. Grids are immutable after construction.
#[derive(Debug, Clone)]
pub struct StructuredGrid {
    vertices: Vec<[f64; 2]>,
    cells: Vec<[usize; 4]>,
    boundary_faces: Vec<BoundaryFace>,
    periodic_pairs: Vec<(usize, usize)>,
    h: f64,
    spacing: [f64; 2],
    kind: GridKind,
    lattice_dims: [usize; 2],
    lattice_nodes: Vec<Option<usize>>,
    lattice_origin: [f64; 2],
    variant: Option<ProblemVariant>,
}

impl StructuredGrid {
    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn cells(&self) -> &[[usize; 4]] {
        &self.cells
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary_faces
    }

    /// `(master, slave)` node pairs; empty for macro grids.
    pub fn periodic_pairs(&self) -> &[(usize, usize)] {
        &self.periodic_pairs
    }

    /// Mesh size: the diagonal of one cell.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Edge lengths `(dx, dy)` of every cell.
    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn variant(&self) -> Option<ProblemVariant> {
        self.variant
    }

    pub fn num_nodes(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn is_cell_grid(&self) -> bool {
        matches!(self.kind, GridKind::Cell { .. })
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        let [a, b, c, d] = self.cells[cell].map(|i| self.vertices[i]);
        // shoelace
        0.5 * ((a[0] * b[1] - b[0] * a[1])
            + (b[0] * c[1] - c[0] * b[1])
            + (c[0] * d[1] - d[0] * c[1])
            + (d[0] * a[1] - a[0] * d[1]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_cells()).map(|c| self.cell_area(c)).sum()
    }

    /// Node at lattice position `(i, j)`, if that lattice point belongs to the grid.
    pub fn node_at_lattice(&self, i: usize, j: usize) -> Option<usize> {
        let [nx, ny] = self.lattice_dims;
        if i > nx || j > ny {
            return None;
        }
        self.lattice_nodes[j * (nx + 1) + i]
    }

    /// Node whose coordinates match `p` up to [`COORD_TOL`]-scaled rounding.
    pub fn node_near(&self, p: [f64; 2]) -> Option<usize> {
        let fi = (p[0] - self.lattice_origin[0]) / self.spacing[0];
        let fj = (p[1] - self.lattice_origin[1]) / self.spacing[1];
        let (ri, rj) = (fi.round(), fj.round());
        if (fi - ri).abs() > 1e-8 || (fj - rj).abs() > 1e-8 || ri < 0.0 || rj < 0.0 {
            return None;
        }
        self.node_at_lattice(ri as usize, rj as usize)
    }

    /// Lattice dimensions in cells, `(nx, ny)`.
    pub fn lattice_dims(&self) -> [usize; 2] {
        self.lattice_dims
    }

    /// Cell containing `p` and the reference coordinates of `p` in it.
    /// Points on shared edges resolve to the cell with the lower index.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 2])> {
        let [nx, ny] = self.lattice_dims;
        let fi = (p[0] - self.lattice_origin[0]) / self.spacing[0];
        let fj = (p[1] - self.lattice_origin[1]) / self.spacing[1];
        let eps = 1e-10;
        if fi < -eps || fj < -eps || fi > nx as f64 + eps || fj > ny as f64 + eps {
            return None;
        }
        let ci = (fi.floor().max(0.0) as usize).min(nx - 1);
        let cj = (fj.floor().max(0.0) as usize).min(ny - 1);
        let cell = match self.kind {
            GridKind::Macro { .. } => cj * nx + ci,
            GridKind::Cell { .. } => {
                // cells are sparse on the lattice; search by lower-left node
                let ll = self.node_at_lattice(ci, cj)?;
                self.cells.iter().position(|c| c[0] == ll)?
            }
        };
        let xi = 2.0 * (fi - ci as f64) - 1.0;
        let eta = 2.0 * (fj - cj as f64) - 1.0;
        Some((cell, [xi.clamp(-1.0, 1.0), eta.clamp(-1.0, 1.0)]))
    }

    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Nodes lying on boundary faces whose tag for the given subproblem is `tag`.
    pub fn nodes_with_tag(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .boundary_faces
            .iter()
            .filter(|f| f.elasticity == tag || f.diffusion == tag)
            .flat_map(|f| f.nodes)
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    /// Same grid with vertex coordinates replaced; used for warped output.
    pub fn with_vertices(&self, vertices: Vec<[f64; 2]>) -> StructuredGrid {
        assert_eq!(vertices.len(), self.vertices.len());
        StructuredGrid { vertices, ..self.clone() }
    }
}

/// Uniformly refined grid of the rectangle `[lower, upper]` with
/// `2^refinement` cells per side.
pub fn build_macro_grid(lower: [f64; 2], upper: [f64; 2], refinement: u32) -> Result<StructuredGrid> {
    if !(lower[0] < upper[0] && lower[1] < upper[1]) {
        return Err(Error::InvalidInput(format!(
            "macro bounds must satisfy lower < upper componentwise, got {lower:?} and {upper:?}"
        )));
    }
    let n = 1usize << refinement;
    let dx = (upper[0] - lower[0]) / n as f64;
    let dy = (upper[1] - lower[1]) / n as f64;

    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            // snap the last row/column so the bounds are hit exactly
            let x = if i == n { upper[0] } else { lower[0] + i as f64 * dx };
            let y = if j == n { upper[1] } else { lower[1] + j as f64 * dy };
            vertices.push([x, y]);
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut cells = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            cells.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }

    let mut boundary_faces = Vec::with_capacity(4 * n);
    for i in 0..n {
        boundary_faces.push(face([id(i, 0), id(i + 1, 0)], i, Side::Bottom));
    }
    for j in 0..n {
        boundary_faces.push(face([id(n, j), id(n, j + 1)], j * n + n - 1, Side::Right));
    }
    for i in (0..n).rev() {
        boundary_faces.push(face([id(i + 1, n), id(i, n)], (n - 1) * n + i, Side::Top));
    }
    for j in (0..n).rev() {
        boundary_faces.push(face([id(0, j + 1), id(0, j)], j * n, Side::Left));
    }

    Ok(StructuredGrid {
        lattice_nodes: (0..vertices.len()).map(Some).collect(),
        vertices,
        cells,
        boundary_faces,
        periodic_pairs: Vec::new(),
        h: dx.hypot(dy),
        spacing: [dx, dy],
        kind: GridKind::Macro { lower, upper, refinement },
        lattice_dims: [n, n],
        lattice_origin: lower,
        variant: None,
    })
}

fn face(nodes: [usize; 2], cell: usize, side: Side) -> BoundaryFace {
    BoundaryFace {
        nodes,
        cell,
        side,
        elasticity: BoundaryTag::ElastNeumann,
        diffusion: BoundaryTag::DiffNeumann,
    }
}

/// Cross-shaped cell `Y^s` made of five squares of side 1/3, each split
/// into `2^refinement x 2^refinement` cells.
pub fn build_cell_grid(refinement: u32) -> Result<StructuredGrid> {
    let m = 1usize << refinement;
    build_lattice_cell_grid(3 * m, refinement, false, |i, j| {
        let (bi, bj) = (i / m, j / m);
        bi == 1 || bj == 1
    })
}

/// Full unit square `Y` with `3 * 2^refinement` cells per side and periodic
/// pairing, i.e. a cell without perforation.
pub fn build_unperforated_cell_grid(refinement: u32) -> Result<StructuredGrid> {
    let m = 1usize << refinement;
    build_lattice_cell_grid(3 * m, refinement, true, |_, _| true)
}

fn build_lattice_cell_grid(
    n: usize,
    refinement: u32,
    corners: bool,
    contains: impl Fn(usize, usize) -> bool,
) -> Result<StructuredGrid> {
    let spacing = 1.0 / n as f64;
    let coord = |i: usize| if i == n { 1.0 } else { i as f64 * spacing };

    let mut occupied = HashSet::new();
    for j in 0..n {
        for i in 0..n {
            if contains(i, j) {
                occupied.insert((i, j));
            }
        }
    }
    let mut lattice_nodes = vec![None; (n + 1) * (n + 1)];
    let mut vertices = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            let touches = [(0, 0), (1, 0), (0, 1), (1, 1)].iter().any(|&(di, dj)| {
                i >= di && j >= dj && i - di < n && j - dj < n && occupied.contains(&(i - di, j - dj))
            });
            if touches {
                lattice_nodes[j * (n + 1) + i] = Some(vertices.len());
                vertices.push([coord(i), coord(j)]);
            }
        }
    }
    let node = |i: usize, j: usize| lattice_nodes[j * (n + 1) + i].expect("lattice node of an occupied cell");

    let mut cells = Vec::new();
    let mut boundary_faces = Vec::new();
    for j in 0..n {
        for i in 0..n {
            if !occupied.contains(&(i, j)) {
                continue;
            }
            let c = cells.len();
            cells.push([node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)]);
            let sides = [
                (Side::Bottom, j == 0 || !occupied.contains(&(i, j - 1)), [node(i, j), node(i + 1, j)], j == 0),
                (Side::Right, i + 1 == n || !occupied.contains(&(i + 1, j)), [node(i + 1, j), node(i + 1, j + 1)], i + 1 == n),
                (Side::Top, j + 1 == n || !occupied.contains(&(i, j + 1)), [node(i + 1, j + 1), node(i, j + 1)], j + 1 == n),
                (Side::Left, i == 0 || !occupied.contains(&(i - 1, j)), [node(i, j + 1), node(i, j)], i == 0),
            ];
            for (side, on_boundary, nodes, on_unit_face) in sides {
                if on_boundary {
                    let tag = if on_unit_face { BoundaryTag::CellPeriodic } else { BoundaryTag::CellInterior };
                    boundary_faces.push(BoundaryFace { nodes, cell: c, side, elasticity: tag, diffusion: tag });
                }
            }
        }
    }

    // pair {y1=0} with {y1=1} and {y2=0} with {y2=1}; with `corners` the
    // corner nodes form the chain (0,0) -> (0,1) -> (1,1) and (0,0) -> (1,0)
    let mut periodic_pairs = Vec::new();
    let mut on_unit_face = vec![0u8; vertices.len()];
    for k in 0..=n {
        if let (Some(m), Some(s)) = (lattice_nodes[k * (n + 1)], lattice_nodes[k * (n + 1) + n]) {
            periodic_pairs.push((m, s));
            on_unit_face[m] += 1;
            on_unit_face[s] += 1;
        }
    }
    for k in 0..if corners { n } else { n + 1 } {
        if let (Some(m), Some(s)) = (lattice_nodes[k], lattice_nodes[n * (n + 1) + k]) {
            periodic_pairs.push((m, s));
            on_unit_face[m] += 1;
            on_unit_face[s] += 1;
        }
    }
    if let Some(v) = on_unit_face.iter().position(|&c| c > 1).filter(|_| !corners) {
        return Err(Error::InvalidInput(format!(
            "node {v} at {:?} lies on two faces of the unit cell; corner periodicity is not supported",
            vertices[v]
        )));
    }
    for &(m, s) in &periodic_pairs {
        let d = [vertices[s][0] - vertices[m][0], vertices[s][1] - vertices[m][1]];
        let is_e1 = (d[0] - 1.0).abs() < COORD_TOL && d[1].abs() < COORD_TOL;
        let is_e2 = d[0].abs() < COORD_TOL && (d[1] - 1.0).abs() < COORD_TOL;
        debug_assert!(is_e1 || is_e2, "periodic pair ({m},{s}) is not a lattice shift");
    }

    Ok(StructuredGrid {
        vertices,
        cells,
        boundary_faces,
        periodic_pairs,
        h: spacing * std::f64::consts::SQRT_2,
        spacing: [spacing, spacing],
        kind: GridKind::Cell { refinement },
        lattice_dims: [n, n],
        lattice_nodes,
        lattice_origin: [0.0, 0.0],
        variant: None,
    })
}

/// Tags the faces of a macro grid for the elasticity and diffusion subproblems.
pub fn classify_boundary(grid: &StructuredGrid, variant: ProblemVariant) -> Result<StructuredGrid> {
    if grid.is_cell_grid() || !grid.periodic_pairs.is_empty() {
        return Err(Error::InvalidInput("boundary classification applies to macro grids only".into()));
    }
    let mut out = grid.clone();
    for f in &mut out.boundary_faces {
        let (elasticity, diffusion) = match variant {
            ProblemVariant::PureDirichlet => (BoundaryTag::ElastDirichlet, BoundaryTag::DiffDirichlet),
            ProblemVariant::MixedModel => {
                let e = match f.side {
                    Side::Left | Side::Right => BoundaryTag::ElastDirichlet,
                    _ => BoundaryTag::ElastNeumann,
                };
                let d = if f.side == Side::Top { BoundaryTag::DiffDirichlet } else { BoundaryTag::DiffNeumann };
                (e, d)
            }
        };
        f.elasticity = elasticity;
        f.diffusion = diffusion;
    }
    out.variant = Some(variant);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macro_grid_sizes_match_refinement() {
        let g = build_macro_grid([-0.5, -0.5], [0.5, 0.5], 4).unwrap();
        assert_eq!(g.num_cells(), 256);
        assert!((g.h() - 8.839e-2).abs() < 5e-6);
        let g0 = build_macro_grid([-0.5, -0.5], [0.5, 0.5], 0).unwrap();
        assert_eq!(g0.num_cells(), 1);
        assert!((g0.h() - 1.414).abs() < 5e-4);
        let unit = build_macro_grid([0.0, 0.0], [1.0, 1.0], 1).unwrap();
        assert_eq!(unit.num_cells(), 4);
        for c in 0..4 {
            assert!((unit.cell_area(c) - 0.25).abs() < 1e-15);
        }
        assert!((unit.total_area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn h_halves_under_refinement() {
        for r in 0..6 {
            let a = build_macro_grid([-0.5, -0.5], [0.5, 0.5], r).unwrap();
            let b = build_macro_grid([-0.5, -0.5], [0.5, 0.5], r + 1).unwrap();
            assert_eq!(a.h(), 2.0 * b.h());
            let ca = build_cell_grid(r).unwrap();
            let cb = build_cell_grid(r + 1).unwrap();
            assert_eq!(ca.h(), 2.0 * cb.h());
        }
    }

    #[test]
    fn rejects_inverted_bounds() {
        assert!(build_macro_grid([0.0, 0.0], [0.0, 1.0], 1).is_err());
    }

    #[test]
    fn cross_area_is_five_ninths() {
        for r in 0..=6 {
            let g = build_cell_grid(r).unwrap();
            assert_eq!(g.num_cells(), 5 * 4usize.pow(r));
            assert!((g.total_area() - 5.0 / 9.0).abs() < 1e-13, "r={r}");
        }
    }

    #[test]
    fn cell_vertices_are_counterclockwise() {
        let g = build_cell_grid(2).unwrap();
        for c in 0..g.num_cells() {
            assert!(g.cell_area(c) > 0.0);
        }
    }

    #[test]
    fn periodic_pairs_on_bottom_face_match_segment_nodes() {
        let g = build_cell_grid(2).unwrap();
        assert_eq!(g.num_cells(), 80);
        let on_bottom = g.vertices().iter().filter(|v| v[1] == 0.0).count();
        let pairs_bottom = g.periodic_pairs().iter().filter(|(m, _)| g.vertices()[*m][1] == 0.0).count();
        assert_eq!(on_bottom, pairs_bottom);
        // segment (1/3,2/3) x {0} has 2^2 cells, hence 5 nodes
        assert_eq!(on_bottom, 5);
        let on_left = g.vertices().iter().filter(|v| v[0] == 0.0).count();
        let pairs_left = g.periodic_pairs().iter().filter(|(m, _)| g.vertices()[*m][0] == 0.0).count();
        assert_eq!(on_left, pairs_left);
    }

    #[test]
    fn periodic_pairs_are_lattice_shifts() {
        for r in 0..5 {
            let g = build_cell_grid(r).unwrap();
            for &(m, s) in g.periodic_pairs() {
                let d = [g.vertices()[s][0] - g.vertices()[m][0], g.vertices()[s][1] - g.vertices()[m][1]];
                let e1 = (d[0] - 1.0).abs() < COORD_TOL && d[1].abs() < COORD_TOL;
                let e2 = d[0].abs() < COORD_TOL && (d[1] - 1.0).abs() < COORD_TOL;
                assert!(e1 ^ e2);
            }
        }
    }

    #[test]
    fn no_node_is_master_and_slave() {
        let g = build_cell_grid(3).unwrap();
        let masters: HashSet<usize> = g.periodic_pairs().iter().map(|p| p.0).collect();
        let slaves: HashSet<usize> = g.periodic_pairs().iter().map(|p| p.1).collect();
        assert!(masters.is_disjoint(&slaves));
        assert_eq!(slaves.len(), g.periodic_pairs().len());
    }

    #[test]
    fn cell_faces_off_the_unit_square_are_interior() {
        let g = build_cell_grid(1).unwrap();
        for f in g.boundary_faces() {
            let [a, b] = f.nodes.map(|n| g.vertices()[n]);
            let on_unit = (a[0] == b[0] && (a[0] == 0.0 || a[0] == 1.0)) || (a[1] == b[1] && (a[1] == 0.0 || a[1] == 1.0));
            let expected = if on_unit { BoundaryTag::CellPeriodic } else { BoundaryTag::CellInterior };
            assert_eq!(f.elasticity, expected);
            assert_eq!(f.diffusion, expected);
        }
        // the cross boundary: 4 periodic end faces of 2 edges each, the rest Γ
        let periodic = g.boundary_faces().iter().filter(|f| f.elasticity == BoundaryTag::CellPeriodic).count();
        assert_eq!(periodic, 8);
    }

    #[test]
    fn mixed_model_tags() {
        let g = build_macro_grid([-0.5, -0.5], [0.5, 0.5], 2).unwrap();
        let g = classify_boundary(&g, ProblemVariant::MixedModel).unwrap();
        let faces = g.boundary_faces();
        assert_eq!(faces.len(), 16);
        assert_eq!(faces.iter().filter(|f| f.elasticity == BoundaryTag::ElastDirichlet).count(), 8);
        assert_eq!(faces.iter().filter(|f| f.diffusion == BoundaryTag::DiffDirichlet).count(), 4);
        for f in faces.iter().filter(|f| f.diffusion == BoundaryTag::DiffDirichlet) {
            for n in f.nodes {
                assert_eq!(g.vertices()[n][1], 0.5);
            }
        }
    }

    #[test]
    fn pure_dirichlet_has_no_neumann_faces() {
        let g = build_macro_grid([-0.5, -0.5], [0.5, 0.5], 3).unwrap();
        let g = classify_boundary(&g, ProblemVariant::PureDirichlet).unwrap();
        assert!(g
            .boundary_faces()
            .iter()
            .all(|f| f.elasticity == BoundaryTag::ElastDirichlet && f.diffusion == BoundaryTag::DiffDirichlet));
    }

    #[test]
    fn classify_rejects_cell_grid() {
        let g = build_cell_grid(1).unwrap();
        assert!(classify_boundary(&g, ProblemVariant::MixedModel).is_err());
    }

    #[test]
    fn locate_and_lookup() {
        let g = build_macro_grid([-0.5, -0.5], [0.5, 0.5], 2).unwrap();
        let (c, xi) = g.locate([0.0, 0.0]).unwrap();
        assert_eq!(c, 10);
        assert_eq!(xi, [-1.0, -1.0]);
        assert!(g.locate([0.6, 0.0]).is_none());
        assert_eq!(g.node_near([0.5, 0.5]), Some(24));
        let cg = build_cell_grid(1).unwrap();
        assert!(cg.node_near([0.0, 0.0]).is_none());
        assert!(cg.node_near([0.5, 0.5]).is_some());
        let (cc, _) = cg.locate([0.5, 0.1]).unwrap();
        assert!(cg.cell_area(cc) > 0.0);
        assert!(cg.locate([0.1, 0.1]).is_none());
    }
}
