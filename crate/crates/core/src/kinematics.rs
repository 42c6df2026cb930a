//! Leading-order deformation gradient `F0`, its determinant `J0`, and the
//! pulled-back diffusion tensor `D0 = J0 F0^{-1} D̂ F0^{-T}` on the cell.

use crate::elasticity::ElasticCellSolutions;
use crate::error::{DegenerateDeformation, Result};
use crate::tensor::{det_2x2, inverse_2x2, Mat2};

/// Default lower bound on `det F0`.
pub const DEFAULT_J_MIN: f64 = 1e-8;

/// Macroscopic displacement gradient `G = ∇_x u` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroGradientSample {
    pub g: Mat2,
}

impl MacroGradientSample {
    pub fn new(g: Mat2) -> Self {
        MacroGradientSample { g }
    }

    /// From `G[m][k] = ∂u^m / ∂x_k`.
    pub fn from_array(g: [[f64; 2]; 2]) -> Self {
        MacroGradientSample { g: Mat2::new(g[0][0], g[0][1], g[1][0], g[1][1]) }
    }

    /// `e_x(u) = (G + G^T) / 2`
    pub fn strain(&self) -> Mat2 {
        (self.g + self.g.transpose()) * 0.5
    }
}

/// `F0`, `J0`, `D0` at every cell quadrature point.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCoefficientField {
    pub f0: Vec<Mat2>,
    pub j0: Vec<f64>,
    pub d0: Vec<Mat2>,
}

/// `F0 = I + G + Σ_ij E_ij ∇_y chi_ij` at every cell quadrature point.
pub fn compute_f0(sample: &MacroGradientSample, chi: &ElasticCellSolutions) -> Vec<Mat2> {
    let e = sample.strain();
    // E_12 and E_21 both multiply chi_12
    let weights = [e[(0, 0)], e[(0, 1)] + e[(1, 0)], e[(1, 1)]];
    let base = Mat2::identity() + sample.g;
    let n = chi.domain().num_points();
    (0..n)
        .map(|p| {
            let grads = chi.gradients_at(p);
            let mut f = base;
            for (w, g) in weights.iter().zip(grads) {
                if *w != 0.0 {
                    f += Mat2::new(g[0][0], g[0][1], g[1][0], g[1][1]) * *w;
                }
            }
            f
        })
        .collect()
}

/// `J0 = det F0` and `D0 = J0 F0^{-1} D̂ F0^{-T}`; fails if `J0 <= j_min`
/// anywhere. `points` gives the cell coordinates for error reports.
pub fn compute_j0_d0(f0: Vec<Mat2>, d_hat: &Mat2, j_min: f64, points: &[[f64; 2]]) -> Result<CellCoefficientField> {
    let mut j0 = Vec::with_capacity(f0.len());
    let mut d0 = Vec::with_capacity(f0.len());
    for (p, f) in f0.iter().enumerate() {
        let j = det_2x2(f);
        if !(j > j_min) {
            return Err(DegenerateDeformation {
                j0: j,
                j_min,
                cell_point: p,
                y: points.get(p).copied().unwrap_or([f64::NAN; 2]),
                t: None,
                macro_point: None,
            }
            .into());
        }
        let inv = inverse_2x2(f).expect("nonzero determinant");
        let d = inv * d_hat * inv.transpose() * j;
        j0.push(j);
        d0.push(d);
    }
    Ok(CellCoefficientField { f0, j0, d0 })
}
