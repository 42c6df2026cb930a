//! Elasticity cell problems and the effective stiffness tensor.
//!
//! The correctors solve, for each symmetric unit strain `E_rs`,
//!
//! ```text
//! -div_y A (E_rs + e_y(chi_rs)) = 0  in Y^s,   A (E_rs + e_y(chi_rs)) n = 0  on Γ,
//! chi_rs periodic,  ∫ chi_rs = 0,
//! ```
//!
//! and the effective tensor is `A*_ijrs = ∫ A_ijkl (E_rs + e_y(chi_rs))_kl dy`.

use std::sync::Arc;

use log::debug;

use crate::error::{Error, Result, SolveError};
use crate::fem::{Assembler, Condensation, ConstraintSet, MeanZero, SparseOperator};
use crate::mesh::StructuredGrid;
use crate::tensor::{unit_strain, Mat2, Tensor4Sym, SYM_PAIRS};

/// A periodic cell grid with its quadrature data and node weights.
#[derive(Debug)]
pub struct CellDomain {
    assembler: Assembler,
    node_weights: Vec<f64>,
    area: f64,
}

impl CellDomain {
    pub fn new(grid: Arc<StructuredGrid>) -> Result<Arc<Self>> {
        if !grid.is_cell_grid() {
            return Err(Error::InvalidInput("cell problems need a periodic cell grid".into()));
        }
        let assembler = Assembler::new(grid);
        let node_weights = assembler.node_integrals();
        let area = assembler.element_values().all().iter().map(|p| p.weight).sum();
        Ok(Arc::new(CellDomain { assembler, node_weights, area }))
    }

    pub fn grid(&self) -> &Arc<StructuredGrid> {
        self.assembler.grid()
    }

    pub fn assembler(&self) -> &Assembler {
        &self.assembler
    }

    /// `∫ φ_a dy` per node.
    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    /// `|Y^s|` by quadrature.
    pub fn area(&self) -> f64 {
        self.area
    }

    /// Number of quadrature points over the whole cell.
    pub fn num_points(&self) -> usize {
        self.assembler.element_values().len()
    }

    /// Periodic, mean-zero constraints for a field with `components` per node.
    pub fn constraints(&self, components: usize) -> Result<ConstraintSet> {
        let mut cs = ConstraintSet::new();
        cs.add_periodic_pairs(self.grid(), components)?;
        cs.set_mean_zero(MeanZero { node_weights: self.node_weights.clone(), components });
        Ok(cs)
    }
}

/// Correctors `chi_11, chi_12, chi_22` (interleaved nodal 2-vectors);
/// `chi_21` is `chi_12`.
#[derive(Debug, Clone)]
pub struct ElasticCellSolutions {
    domain: Arc<CellDomain>,
    fields: [Vec<f64>; 3],
    /// `∇_y chi_rs` per cell quadrature point, `[rs][m][k] = ∂chi^m / ∂y_k`.
    gradients: Vec<[[[f64; 2]; 2]; 3]>,
}

impl ElasticCellSolutions {
    pub fn domain(&self) -> &Arc<CellDomain> {
        &self.domain
    }

    pub fn grid(&self) -> &Arc<StructuredGrid> {
        self.domain.grid()
    }

    /// Nodal field of `chi_ij` (zero-based indices, `chi_10` aliases `chi_01`).
    pub fn field(&self, i: usize, j: usize) -> &[f64] {
        &self.fields[pair_index(i, j)]
    }

    /// `∇_y chi_ij` at cell quadrature point `p`.
    pub fn gradient(&self, i: usize, j: usize, p: usize) -> [[f64; 2]; 2] {
        self.gradients[p][pair_index(i, j)]
    }

    pub fn gradients_at(&self, p: usize) -> &[[[f64; 2]; 2]; 3] {
        &self.gradients[p]
    }
}

fn pair_index(i: usize, j: usize) -> usize {
    assert!(i < 2 && j < 2, "tensor index out of range");
    i + j
}

/// Solves the three elasticity cell problems with one shared factorization.
pub fn solve_elastic_cells(domain: &Arc<CellDomain>, a: &Tensor4Sym) -> Result<ElasticCellSolutions> {
    if a.minor_asymmetry() > 1e-12 * a.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max) {
        return Err(Error::InvalidInput("stiffness tensor lacks minor symmetry".into()));
    }
    let assembler = domain.assembler();
    let grid = domain.grid();
    let k = assembler.elasticity(a);
    let cond = Condensation::new(k.pattern(), &domain.constraints(2)?)?;
    let op = SparseOperator::new(cond.condense_matrix(&k));

    let rhs: Vec<Vec<f64>> = SYM_PAIRS
        .iter()
        .map(|&(r, s)| {
            let e = unit_strain(r, s);
            let affine: Vec<f64> = grid
                .vertices()
                .iter()
                .flat_map(|y| [e[(0, 0)] * y[0] + e[(0, 1)] * y[1], e[(1, 0)] * y[0] + e[(1, 1)] * y[1]])
                .collect();
            let load: Vec<f64> = k.matvec(&affine).into_iter().map(|v| -v).collect();
            cond.condense_vector(&load)
        })
        .collect();
    let refs: Vec<&[f64]> = rhs.iter().map(Vec::as_slice).collect();
    let reduced = op.solve_many(&refs, true).map_err(|e| match e {
        SolveError::NotPositiveDefinite => Error::solve("elasticity cell problem is singular beyond rigid translations (broken periodic pairing?)", e),
        e => Error::solve("elasticity cell problem", e),
    })?;
    let zeros = vec![0.0; cond.fixed_dofs().len()];
    let fields: [Vec<f64>; 3] = std::array::from_fn(|n| cond.expand(&reduced[n], &zeros));

    let ev = assembler.element_values();
    let nq = ev.points_per_element();
    let gradients = (0..ev.len())
        .map(|p| std::array::from_fn(|n| ev.vector_gradient(grid, &fields[n], p / nq, p % nq)))
        .collect();
    debug!("solved elasticity cell problems on {} cells ({} reduced unknowns)", grid.num_cells(), cond.n_reduced());
    Ok(ElasticCellSolutions { domain: domain.clone(), fields, gradients })
}

/// `A*_ijrs = Σ_kl ∫ A_ijkl (E_rs + e_y(chi_rs))_kl dy`, without symmetrization.
pub fn effective_elasticity(chi: &ElasticCellSolutions, a: &Tensor4Sym) -> Tensor4Sym {
    let points = chi.domain.assembler().element_values().all();
    let mut c = [[[[0.0; 2]; 2]; 2]; 2];
    for r in 0..2 {
        for s in 0..2 {
            let e_rs = unit_strain(r, s);
            let mut avg = Mat2::zeros();
            for (p, qp) in points.iter().enumerate() {
                let g = chi.gradient(r, s, p);
                let strain = e_rs + Mat2::new(g[0][0], 0.5 * (g[0][1] + g[1][0]), 0.5 * (g[0][1] + g[1][0]), g[1][1]);
                avg += strain * qp.weight;
            }
            let stress = a.contract(&avg);
            for i in 0..2 {
                for j in 0..2 {
                    c[i][j][r][s] = stress[(i, j)];
                }
            }
        }
    }
    Tensor4Sym::from_components_unchecked(c)
}

/// Cell problems plus effective tensor, raw and symmetrized.
#[derive(Debug, Clone)]
pub struct ElasticHomogenization {
    pub chi: ElasticCellSolutions,
    pub a_star_raw: Tensor4Sym,
    pub a_star: Tensor4Sym,
    /// Largest `|A*_ijrs - A*_rsij|` before symmetrization.
    pub asymmetry: f64,
}

pub fn homogenize_elasticity(domain: &Arc<CellDomain>, a: &Tensor4Sym) -> Result<ElasticHomogenization> {
    let chi = solve_elastic_cells(domain, a)?;
    let a_star_raw = effective_elasticity(&chi, a);
    let asymmetry = a_star_raw.major_asymmetry();
    log::info!("effective stiffness major asymmetry {asymmetry:.3e} (symmetrized for macro use)");
    let a_star = a_star_raw.symmetrized();
    if !a_star.is_positive_on_symmetric() {
        return Err(Error::InvalidInput("effective stiffness is not positive on symmetric strains".into()));
    }
    Ok(ElasticHomogenization { chi, a_star_raw, a_star, asymmetry })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_cell_grid, build_unperforated_cell_grid};

    fn cross(r: u32) -> Arc<CellDomain> {
        CellDomain::new(Arc::new(build_cell_grid(r).unwrap())).unwrap()
    }

    /// Node index of the mirror image under `y ↦ map(y)`.
    fn mirror(grid: &StructuredGrid, map: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<usize> {
        grid.vertices().iter().map(|&y| grid.node_near(map(y)).expect("mirror node")).collect()
    }

    #[test]
    fn unperforated_cell_has_zero_correctors() {
        let d = CellDomain::new(Arc::new(build_unperforated_cell_grid(1).unwrap())).unwrap();
        let a = Tensor4Sym::isotropic(1.0, 1.0);
        let chi = solve_elastic_cells(&d, &a).unwrap();
        for (i, j) in SYM_PAIRS {
            assert!(chi.field(i, j).iter().all(|v| v.abs() < 1e-12));
        }
        let a_star = effective_elasticity(&chi, &a);
        for ((_, x), (_, y)) in a_star.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn correctors_are_periodic_and_mean_free() {
        let d = cross(2);
        let chi = solve_elastic_cells(&d, &Tensor4Sym::isotropic(1.0, 1.0)).unwrap();
        for (i, j) in SYM_PAIRS {
            let f = chi.field(i, j);
            for &(m, s) in d.grid().periodic_pairs() {
                assert_eq!(f[2 * m], f[2 * s]);
                assert_eq!(f[2 * m + 1], f[2 * s + 1]);
            }
            for c in 0..2 {
                let mean: f64 = d.node_weights().iter().enumerate().map(|(a, w)| w * f[2 * a + c]).sum();
                assert!(mean.abs() < 1e-12 * d.area());
            }
        }
        assert_eq!(chi.field(0, 1), chi.field(1, 0));
    }

    #[test]
    fn chi11_first_component_is_odd_under_reflection() {
        let d = cross(2);
        let chi = solve_elastic_cells(&d, &Tensor4Sym::isotropic(1.0, 1.0)).unwrap();
        let m = mirror(d.grid(), |y| [1.0 - y[0], y[1]]);
        let f = chi.field(0, 0);
        let scale = f.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        assert!(scale > 1e-3);
        for (a, &b) in m.iter().enumerate() {
            // periodic images at y1 = 0 and y1 = 1 coincide, so compare modulo the lattice
            assert!((f[2 * a] + f[2 * b]).abs() < 1e-10 * scale, "node {a}");
            assert!((f[2 * a + 1] - f[2 * b + 1]).abs() < 1e-10 * scale, "node {a}");
        }
    }

    #[test]
    fn effective_tensor_properties_on_coarse_cross() {
        let d = cross(3);
        let h = homogenize_elasticity(&d, &Tensor4Sym::isotropic(1.0, 1.0)).unwrap();
        assert!(h.asymmetry < 1e-10);
        assert!(h.a_star.is_positive_on_symmetric());
        assert!(h.a_star.get(0, 0, 0, 0) < 5.0 / 9.0 * 3.0);
        // cubic symmetry of the cross
        assert!((h.a_star.get(0, 0, 0, 0) - h.a_star.get(1, 1, 1, 1)).abs() < 1e-10);
        assert!(h.a_star.get(0, 0, 0, 1).abs() < 1e-10);
        assert!((h.a_star.get(0, 0, 0, 0) - 0.952656).abs() / 0.952656 < 0.03);
    }

    #[test]
    fn cauchy_under_cell_refinement() {
        let a = Tensor4Sym::isotropic(1.0, 1.0);
        let vals: Vec<Tensor4Sym> = (1..=4).map(|r| homogenize_elasticity(&cross(r), &a).unwrap().a_star).collect();
        let diff = |x: &Tensor4Sym, y: &Tensor4Sym| x.iter().zip(y.iter()).map(|((_, p), (_, q))| (p - q).abs()).fold(0.0, f64::max);
        let d: Vec<f64> = vals.windows(2).map(|w| diff(&w[0], &w[1])).collect();
        assert!(d[1] < d[0] && d[2] < d[1], "{d:?}");
    }
}
