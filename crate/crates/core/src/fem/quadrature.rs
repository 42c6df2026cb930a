//! Q1 shape functions, Gauss rules and per-element quadrature data.

use crate::mesh::StructuredGrid;

/// Reference-square corner coordinates in counterclockwise order.
const CORNERS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Tensor 2x2 Gauss rule on `[-1, 1]^2`, exact for bicubic integrands.
    pub fn gauss_2x2() -> Self {
        let g = 1.0 / 3f64.sqrt();
        let points = vec![[-g, -g], [g, -g], [g, g], [-g, g]];
        QuadratureRule { points, weights: vec![1.0; 4] }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_2x2()
    }
}

pub fn shape_values(xi: [f64; 2]) -> [f64; 4] {
    CORNERS.map(|c| 0.25 * (1.0 + c[0] * xi[0]) * (1.0 + c[1] * xi[1]))
}

pub fn shape_derivatives(xi: [f64; 2]) -> [[f64; 2]; 4] {
    CORNERS.map(|c| [0.25 * c[0] * (1.0 + c[1] * xi[1]), 0.25 * c[1] * (1.0 + c[0] * xi[0])])
}

/// Determinant of the bilinear map of a quadrilateral at reference point `xi`.
pub fn jacobian_det(corners: &[[f64; 2]; 4], xi: [f64; 2]) -> f64 {
    let d = shape_derivatives(xi);
    let mut j = [[0.0; 2]; 2];
    for a in 0..4 {
        for r in 0..2 {
            for c in 0..2 {
                j[r][c] += corners[a][r] * d[a][c];
            }
        }
    }
    j[0][0] * j[1][1] - j[0][1] * j[1][0]
}

/// Geometry at one quadrature point of one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    /// Physical coordinates.
    pub x: [f64; 2],
    pub shape: [f64; 4],
    /// Physical gradients of the four shape functions.
    pub grads: [[f64; 2]; 4],
    /// Rule weight times Jacobian determinant.
    pub weight: f64,
}

/// Quadrature data for every element of a grid, indexed `element * nq + q`.
#[derive(Debug, Clone)]
pub struct ElementValues {
    points: Vec<QuadPoint>,
    nq: usize,
}

impl ElementValues {
    pub fn new(grid: &StructuredGrid, rule: &QuadratureRule) -> Self {
        let nq = rule.len();
        let mut points = Vec::with_capacity(grid.num_cells() * nq);
        for cell in grid.cells() {
            let corners = cell.map(|n| grid.vertices()[n]);
            for (xi, w) in rule.points.iter().zip(&rule.weights) {
                let shape = shape_values(*xi);
                let d = shape_derivatives(*xi);
                let mut j = [[0.0; 2]; 2];
                let mut x = [0.0; 2];
                for a in 0..4 {
                    for r in 0..2 {
                        x[r] += shape[a] * corners[a][r];
                        for c in 0..2 {
                            j[r][c] += corners[a][r] * d[a][c];
                        }
                    }
                }
                let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                assert!(det > 0.0, "element with non-positive Jacobian");
                let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
                // grad_x N = J^{-T} grad_xi N
                let grads = d.map(|g| [inv[0][0] * g[0] + inv[1][0] * g[1], inv[0][1] * g[0] + inv[1][1] * g[1]]);
                points.push(QuadPoint { x, shape, grads, weight: w * det });
            }
        }
        ElementValues { points, nq }
    }

    pub fn points_per_element(&self) -> usize {
        self.nq
    }

    pub fn num_elements(&self) -> usize {
        self.points.len() / self.nq
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn element(&self, e: usize) -> &[QuadPoint] {
        &self.points[e * self.nq..(e + 1) * self.nq]
    }

    pub fn all(&self) -> &[QuadPoint] {
        &self.points
    }

    /// Gradient of a scalar nodal field at quadrature point `q` of element `e`.
    pub fn scalar_gradient(&self, grid: &StructuredGrid, field: &[f64], e: usize, q: usize) -> [f64; 2] {
        let p = &self.points[e * self.nq + q];
        let cell = grid.cells()[e];
        let mut g = [0.0; 2];
        for a in 0..4 {
            let v = field[cell[a]];
            g[0] += v * p.grads[a][0];
            g[1] += v * p.grads[a][1];
        }
        g
    }

    /// `G[m][k] = d u^m / d x_k` of an interleaved 2-vector nodal field.
    pub fn vector_gradient(&self, grid: &StructuredGrid, field: &[f64], e: usize, q: usize) -> [[f64; 2]; 2] {
        let p = &self.points[e * self.nq + q];
        let cell = grid.cells()[e];
        let mut g = [[0.0; 2]; 2];
        for a in 0..4 {
            for m in 0..2 {
                let v = field[2 * cell[a] + m];
                g[m][0] += v * p.grads[a][0];
                g[m][1] += v * p.grads[a][1];
            }
        }
        g
    }

    pub fn scalar_value(&self, grid: &StructuredGrid, field: &[f64], e: usize, q: usize) -> f64 {
        let p = &self.points[e * self.nq + q];
        grid.cells()[e].iter().zip(&p.shape).map(|(&n, s)| field[n] * s).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_macro_grid;

    #[test]
    fn partition_of_unity() {
        for xi in [[0.3, -0.7], [1.0, 1.0], [-0.2, 0.9]] {
            let s: f64 = shape_values(xi).iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
            let d = shape_derivatives(xi);
            assert!(d.iter().map(|g| g[0]).sum::<f64>().abs() < 1e-15);
            assert!(d.iter().map(|g| g[1]).sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn gauss_rule_integrates_bicubic_exactly() {
        let rule = QuadratureRule::gauss_2x2();
        // x^3 y^2 + x y + 1 over [-1,1]^2 = 0 + 0 + 4
        let f = |p: [f64; 2]| p[0].powi(3) * p[1].powi(2) + p[0] * p[1] + 1.0;
        let s: f64 = rule.points.iter().zip(&rule.weights).map(|(p, w)| w * f(*p)).sum();
        assert!((s - 4.0).abs() < 1e-14);
        let g = |p: [f64; 2]| p[0].powi(2) * p[1].powi(2);
        let s2: f64 = rule.points.iter().zip(&rule.weights).map(|(p, w)| w * g(*p)).sum();
        assert!((s2 - 4.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn weights_sum_to_area_and_gradients_reproduce_linear_fields() {
        let grid = build_macro_grid([-0.5, -1.0], [1.5, 0.0], 2).unwrap();
        let ev = ElementValues::new(&grid, &QuadratureRule::gauss_2x2());
        let area: f64 = ev.all().iter().map(|p| p.weight).sum();
        assert!((area - 2.0).abs() < 1e-14);
        let field: Vec<f64> = grid.vertices().iter().map(|v| 2.0 * v[0] - 3.0 * v[1] + 1.0).collect();
        for e in 0..grid.num_cells() {
            for q in 0..4 {
                let g = ev.scalar_gradient(&grid, &field, e, q);
                assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] + 3.0).abs() < 1e-12);
                let x = ev.element(e)[q].x;
                assert!((ev.scalar_value(&grid, &field, e, q) - (2.0 * x[0] - 3.0 * x[1] + 1.0)).abs() < 1e-13);
            }
        }
    }
}
