//! Finite element building blocks: sparse storage and solvers, quadrature,
//! constraints and Q1 assembly.

pub mod assembly;
pub mod constraints;
pub mod quadrature;
pub mod sparse;

pub use assembly::{assemble_diffusion, assemble_elasticity, assemble_weighted_mass, Assembler};
pub use constraints::{apply_constraints, remove_weighted_mean, Condensation, ConstrainedSystem, ConstraintSet, MeanZero};
pub use quadrature::{ElementValues, QuadPoint, QuadratureRule};
pub use sparse::{CsrMatrix, CsrPattern, SolveStats, SolverKind, SparseOperator};
