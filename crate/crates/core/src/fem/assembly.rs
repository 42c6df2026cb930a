//! Galerkin assembly of Q1 operators on structured grids.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::quadrature::{ElementValues, QuadPoint, QuadratureRule};
use crate::fem::sparse::{CsrMatrix, CsrPattern, SparseOperator};
use crate::mesh::StructuredGrid;
use crate::tensor::{min_eigenvalue_sym, Mat2, Tensor4Sym};

/// Eigenvalues at or below this count as non-positive.
pub const SPD_TOL: f64 = 1e-14;

/// Grid, quadrature data and precomputed scatter positions for scalar
/// (one dof per node) and vector (two dofs per node, interleaved) fields.
#[derive(Debug, Clone)]
pub struct Assembler {
    grid: Arc<StructuredGrid>,
    values: Arc<ElementValues>,
    scalar_pattern: Arc<CsrPattern>,
    vector_pattern: Arc<CsrPattern>,
    scalar_slots: Vec<[usize; 16]>,
    vector_slots: Vec<[usize; 64]>,
}

impl Assembler {
    pub fn new(grid: Arc<StructuredGrid>) -> Self {
        let values = Arc::new(ElementValues::new(&grid, &QuadratureRule::gauss_2x2()));
        let scalar_pattern = Arc::new(CsrPattern::from_entries(
            grid.num_nodes(),
            grid.cells().iter().flat_map(|c| c.iter().flat_map(move |&a| c.iter().map(move |&b| (a, b)))),
        ));
        let vector_pattern = Arc::new(CsrPattern::from_entries(
            2 * grid.num_nodes(),
            grid.cells().iter().flat_map(|c| {
                vector_dofs(c).into_iter().flat_map(move |a| vector_dofs(c).into_iter().map(move |b| (a, b)))
            }),
        ));
        let scalar_slots = grid
            .cells()
            .iter()
            .map(|c| std::array::from_fn(|k| scalar_pattern.find(c[k / 4], c[k % 4]).expect("element entry")))
            .collect();
        let vector_slots = grid
            .cells()
            .iter()
            .map(|c| {
                let d = vector_dofs(c);
                std::array::from_fn(|k| vector_pattern.find(d[k / 8], d[k % 8]).expect("element entry"))
            })
            .collect();
        Assembler { grid, values, scalar_pattern, vector_pattern, scalar_slots, vector_slots }
    }

    pub fn grid(&self) -> &Arc<StructuredGrid> {
        &self.grid
    }

    pub fn element_values(&self) -> &Arc<ElementValues> {
        &self.values
    }

    pub fn scalar_pattern(&self) -> &Arc<CsrPattern> {
        &self.scalar_pattern
    }

    pub fn vector_pattern(&self) -> &Arc<CsrPattern> {
        &self.vector_pattern
    }

    /// Positions of the 4x4 element block of element `e` in the scalar pattern.
    pub fn scalar_slots(&self, e: usize) -> &[usize; 16] {
        &self.scalar_slots[e]
    }

    /// Matrix of `∫ (coeff ∇φ_j) · ∇φ_i`; `coeff(element, point)`.
    pub fn diffusion(&self, coeff: impl Fn(usize, usize) -> Mat2) -> Result<CsrMatrix> {
        let mut values = vec![0.0; self.scalar_pattern.nnz()];
        for e in 0..self.grid.num_cells() {
            for (q, p) in self.values.element(e).iter().enumerate() {
                let d = coeff(e, q);
                let lam = min_eigenvalue_sym(&d);
                let asym = (d[(0, 1)] - d[(1, 0)]).abs();
                if !(lam > SPD_TOL) || asym > SPD_TOL * d.norm().max(1.0) {
                    return Err(Error::NotPositiveDefiniteCoefficient { element: e, point: q, min_eigenvalue: lam });
                }
                add_diffusion_block(&mut values, &self.scalar_slots[e], p, &d, 1.0);
            }
        }
        Ok(CsrMatrix::from_values(self.scalar_pattern.clone(), values))
    }

    /// Matrix of `∫ weight φ_i φ_j`; `weight(element, point)`.
    pub fn weighted_mass(&self, weight: impl Fn(usize, usize) -> f64) -> Result<CsrMatrix> {
        let mut values = vec![0.0; self.scalar_pattern.nnz()];
        for e in 0..self.grid.num_cells() {
            for (q, p) in self.values.element(e).iter().enumerate() {
                let w = weight(e, q);
                if !(w > 0.0) {
                    return Err(Error::NonPositiveWeight { element: e, point: q, value: w });
                }
                add_mass_block(&mut values, &self.scalar_slots[e], p, w);
            }
        }
        Ok(CsrMatrix::from_values(self.scalar_pattern.clone(), values))
    }

    /// Matrix of `∫ A e(u) : e(v)` on interleaved 2-vector dofs.
    pub fn elasticity(&self, tensor: &Tensor4Sym) -> CsrMatrix {
        let mut values = vec![0.0; self.vector_pattern.nnz()];
        let c = tensor.components();
        for e in 0..self.grid.num_cells() {
            let slots = &self.vector_slots[e];
            for p in self.values.element(e) {
                for a in 0..4 {
                    for b in 0..4 {
                        for m in 0..2 {
                            for n in 0..2 {
                                let mut s = 0.0;
                                for j in 0..2 {
                                    for l in 0..2 {
                                        s += c[m][j][n][l] * p.grads[a][j] * p.grads[b][l];
                                    }
                                }
                                values[slots[(2 * a + m) * 8 + 2 * b + n]] += p.weight * s;
                            }
                        }
                    }
                }
            }
        }
        CsrMatrix::from_values(self.vector_pattern.clone(), values)
    }

    /// Load vector `∫ f φ_i` for a scalar source sampled at quadrature points.
    pub fn scalar_load(&self, f: impl Fn(usize, usize, &QuadPoint) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.num_nodes()];
        for (e, cell) in self.grid.cells().iter().enumerate() {
            for (q, p) in self.values.element(e).iter().enumerate() {
                let v = f(e, q, p) * p.weight;
                if v != 0.0 {
                    for a in 0..4 {
                        out[cell[a]] += v * p.shape[a];
                    }
                }
            }
        }
        out
    }

    /// Load vector `∫ f · φ_i` for a 2-vector source.
    pub fn vector_load(&self, f: impl Fn(usize, usize, &QuadPoint) -> [f64; 2]) -> Vec<f64> {
        let mut out = vec![0.0; 2 * self.grid.num_nodes()];
        for (e, cell) in self.grid.cells().iter().enumerate() {
            for (q, p) in self.values.element(e).iter().enumerate() {
                let v = f(e, q, p);
                if v != [0.0, 0.0] {
                    for a in 0..4 {
                        out[2 * cell[a]] += v[0] * p.weight * p.shape[a];
                        out[2 * cell[a] + 1] += v[1] * p.weight * p.shape[a];
                    }
                }
            }
        }
        out
    }

    /// `∫ φ_a` per node.
    pub fn node_integrals(&self) -> Vec<f64> {
        self.scalar_load(|_, _, _| 1.0)
    }
}

fn vector_dofs(c: &[usize; 4]) -> [usize; 8] {
    std::array::from_fn(|k| 2 * c[k / 2] + k % 2)
}

#[inline]
pub(crate) fn add_diffusion_block(values: &mut [f64], slots: &[usize; 16], p: &QuadPoint, d: &Mat2, scale: f64) {
    let w = p.weight * scale;
    for a in 0..4 {
        let ga = p.grads[a];
        // (D ∇φ_b) · ∇φ_a
        let da = [d[(0, 0)] * ga[0] + d[(1, 0)] * ga[1], d[(0, 1)] * ga[0] + d[(1, 1)] * ga[1]];
        for b in 0..4 {
            let gb = p.grads[b];
            values[slots[a * 4 + b]] += w * (da[0] * gb[0] + da[1] * gb[1]);
        }
    }
}

#[inline]
pub(crate) fn add_mass_block(values: &mut [f64], slots: &[usize; 16], p: &QuadPoint, weight: f64) {
    let w = p.weight * weight;
    for a in 0..4 {
        for b in 0..4 {
            values[slots[a * 4 + b]] += w * p.shape[a] * p.shape[b];
        }
    }
}

/// Diffusion operator `∫ (coeff ∇φ_j) · ∇φ_i` on a grid.
pub fn assemble_diffusion(grid: &Arc<StructuredGrid>, coeff: impl Fn(usize, usize) -> Mat2) -> Result<SparseOperator> {
    Ok(SparseOperator::new(Assembler::new(grid.clone()).diffusion(coeff)?))
}

/// Elasticity operator `∫ A e(u) : e(v)` on a grid.
pub fn assemble_elasticity(grid: &Arc<StructuredGrid>, tensor: &Tensor4Sym) -> SparseOperator {
    SparseOperator::new(Assembler::new(grid.clone()).elasticity(tensor))
}

/// Weighted mass operator `∫ weight φ_i φ_j` on a grid.
pub fn assemble_weighted_mass(grid: &Arc<StructuredGrid>, weight: impl Fn(usize, usize) -> f64) -> Result<SparseOperator> {
    Ok(SparseOperator::new(Assembler::new(grid.clone()).weighted_mass(weight)?))
}
