//! Fourth-order elasticity tensors in 2D and small 2x2 helpers.

use nalgebra::{Matrix2, Matrix3, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat2 = Matrix2<f64>;

/// Symmetric index pairs `(1,1), (1,2), (2,2)` in zero-based form.
pub const SYM_PAIRS: [(usize, usize); 3] = [(0, 0), (0, 1), (1, 1)];

/// `(e_i ⊗ e_j + e_j ⊗ e_i) / 2`
pub fn unit_strain(i: usize, j: usize) -> Mat2 {
    let mut e = Mat2::zeros();
    e[(i, j)] += 0.5;
    e[(j, i)] += 0.5;
    e
}

/// Inverse by the adjugate formula; `None` for a zero determinant.
pub fn inverse_2x2(m: &Mat2) -> Option<Mat2> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if det == 0.0 {
        return None;
    }
    Some(Mat2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
}

pub fn det_2x2(m: &Mat2) -> f64 {
    m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_eigenvalue_sym(m: &Mat2) -> f64 {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    0.5 * (a + d) - (0.25 * (a - d) * (a - d) + b * b).sqrt()
}

/// Elasticity tensor `A_ijkl` with minor and major symmetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor4Sym {
    c: [[[[f64; 2]; 2]; 2]; 2],
}

impl Tensor4Sym {
    const SYMMETRY_TOL: f64 = 1e-12;

    /// Validates minor and major symmetry to a relative 1e-12.
    pub fn new(c: [[[[f64; 2]; 2]; 2]; 2]) -> Result<Self> {
        let t = Tensor4Sym { c };
        let scale = t.max_abs().max(f64::MIN_POSITIVE);
        let minor = t.minor_asymmetry();
        let major = t.major_asymmetry();
        if minor > Self::SYMMETRY_TOL * scale {
            return Err(Error::InvalidInput(format!("tensor lacks minor symmetry (defect {minor:.3e})")));
        }
        if major > Self::SYMMETRY_TOL * scale {
            return Err(Error::InvalidInput(format!("tensor lacks major symmetry (defect {major:.3e})")));
        }
        Ok(t)
    }

    /// Stores components without the major-symmetry check; minor symmetry
    /// is still required. Used for computed effective tensors before
    /// symmetrization.
    pub fn from_components_unchecked(c: [[[[f64; 2]; 2]; 2]; 2]) -> Self {
        Tensor4Sym { c }
    }

    /// `A_ijkl = mu (δ_ik δ_jl + δ_il δ_jk) + lambda δ_ij δ_kl`
    pub fn isotropic(lambda: f64, mu: f64) -> Self {
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let mut c = [[[[0.0; 2]; 2]; 2]; 2];
        for (i, ci) in c.iter_mut().enumerate() {
            for (j, cij) in ci.iter_mut().enumerate() {
                for (k, cijk) in cij.iter_mut().enumerate() {
                    for (l, v) in cijk.iter_mut().enumerate() {
                        *v = mu * (d(i, k) * d(j, l) + d(i, l) * d(j, k)) + lambda * d(i, j) * d(k, l);
                    }
                }
            }
        }
        Tensor4Sym { c }
    }

    /// Zero-based component access.
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.c[i][j][k][l]
    }

    pub fn components(&self) -> &[[[[f64; 2]; 2]; 2]; 2] {
        &self.c
    }

    pub fn iter(&self) -> impl Iterator<Item = ([usize; 4], f64)> + '_ {
        (0..16).map(move |n| {
            let idx = [n >> 3 & 1, n >> 2 & 1, n >> 1 & 1, n & 1];
            (idx, self.c[idx[0]][idx[1]][idx[2]][idx[3]])
        })
    }

    fn max_abs(&self) -> f64 {
        self.iter().fold(0.0f64, |m, (_, v)| m.max(v.abs()))
    }

    pub fn minor_asymmetry(&self) -> f64 {
        self.iter()
            .map(|([i, j, k, l], v)| (v - self.c[j][i][k][l]).abs().max((v - self.c[i][j][l][k]).abs()))
            .fold(0.0, f64::max)
    }

    pub fn major_asymmetry(&self) -> f64 {
        self.iter().map(|([i, j, k, l], v)| (v - self.c[k][l][i][j]).abs()).fold(0.0, f64::max)
    }

    /// Average of the tensor and its major transpose.
    pub fn symmetrized(&self) -> Self {
        let mut c = self.c;
        for ([i, j, k, l], v) in self.iter() {
            c[i][j][k][l] = 0.5 * (v + self.c[k][l][i][j]);
        }
        Tensor4Sym { c }
    }

    /// `(A : E)_ij = Σ_kl A_ijkl E_kl`
    pub fn contract(&self, e: &Mat2) -> Mat2 {
        let mut s = Mat2::zeros();
        for ([i, j, k, l], v) in self.iter() {
            s[(i, j)] += v * e[(k, l)];
        }
        s
    }

    /// Mandel (orthonormal) 3x3 representation on `(11, 22, 12)`.
    pub fn mandel(&self) -> Matrix3<f64> {
        let r2 = std::f64::consts::SQRT_2;
        let idx = [(0, 0, 1.0), (1, 1, 1.0), (0, 1, r2)];
        Matrix3::from_fn(|a, b| {
            let (i, j, fa) = idx[a];
            let (k, l, fb) = idx[b];
            fa * fb * self.c[i][j][k][l]
        })
    }

    /// Eigenvalues of the quadratic form on symmetric matrices.
    pub fn mandel_eigenvalues(&self) -> [f64; 3] {
        let m = self.mandel();
        let sym = (m + m.transpose()) * 0.5;
        let e = SymmetricEigen::new(sym).eigenvalues;
        let mut out = [e[0], e[1], e[2]];
        out.sort_by(f64::total_cmp);
        out
    }

    pub fn is_positive_on_symmetric(&self) -> bool {
        self.mandel_eigenvalues()[0] > 0.0
    }

    /// Row-major table of all 16 components, full precision.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for ([i, j, k, l], v) in self.iter() {
            s.push_str(&format!("{} {} {} {} {:e}\n", i + 1, j + 1, k + 1, l + 1, v));
        }
        s
    }
}
