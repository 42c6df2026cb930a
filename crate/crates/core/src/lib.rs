//! Two-scale simulation of diffusion through a periodically perforated,
//! deforming elastic medium.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops over tensor components read closer to the formulas
#![allow(clippy::needless_range_loop)]

pub mod app;
pub mod config;
pub mod diffusion;
pub mod elasticity;
pub mod error;
pub mod fem;
pub mod kinematics;
pub mod macro_sim;
pub mod mesh;
pub mod output;
pub mod studies;
pub mod tensor;
pub mod vtk;

pub use error::{DegenerateDeformation, Error, Result, SolveError};
