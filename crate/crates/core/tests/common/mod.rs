#![allow(dead_code)]

use std::io::Write;
use std::sync::Arc;

use twoscale::diffusion::DiffusionCellSolver;
use twoscale::elasticity::{homogenize_elasticity, CellDomain, ElasticHomogenization};
use twoscale::macro_sim::ProblemData;
use twoscale::mesh::{build_cell_grid, build_macro_grid, classify_boundary, ProblemVariant, StructuredGrid};
use twoscale::tensor::{Mat2, Tensor4Sym};

pub fn d_hat() -> Mat2 {
    Mat2::identity() * 0.5
}

pub fn cross_cell(refinement: u32) -> (ElasticHomogenization, Arc<DiffusionCellSolver>) {
    let domain = CellDomain::new(Arc::new(build_cell_grid(refinement).unwrap())).unwrap();
    let h = homogenize_elasticity(&domain, &Tensor4Sym::isotropic(1.0, 1.0)).unwrap();
    let solver = Arc::new(DiffusionCellSolver::new(Arc::new(h.chi.clone()), d_hat(), 1e-8).unwrap());
    (h, solver)
}

pub fn model_data(h: &ElasticHomogenization) -> ProblemData {
    ProblemData::model(h.a_star, d_hat(), 5.0 / 9.0)
}

pub fn unit_square(refinement: u32, variant: ProblemVariant) -> Arc<StructuredGrid> {
    Arc::new(classify_boundary(&build_macro_grid([-0.5, -0.5], [0.5, 0.5], refinement).unwrap(), variant).unwrap())
}

/// One verdict line on stderr, written past the test harness capture so it
/// shows up in every run.
pub fn report(criterion: &str, pass: bool, detail: &str) {
    let line = format!("ACCEPTANCE {} {criterion}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}
