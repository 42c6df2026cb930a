//! Compressed-row sparse matrices and the symmetric positive-definite solve.
//!
//! Direct solves go through a sparse Cholesky factorization. The symbolic
//! analysis lives on the [`CsrPattern`] and is shared by every matrix with
//! that pattern, so per-quadrature-point cell problems only pay for the
//! numeric factorization.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Side};

use crate::error::SolveError;

/// Relative tolerance for iterative solves and the residual acceptance test.
pub const SOLVE_TOL: f64 = 1e-10;

/// Sparsity pattern in compressed-row form with sorted column indices.
#[derive(Debug)]
pub struct CsrPattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    symbolic: OnceLock<Result<SymbolicLlt<usize>, SolveError>>,
}

impl CsrPattern {
    /// Builds a pattern from unsorted, possibly repeated `(row, col)` entries.
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, j) in entries {
            assert!(i < n && j < n, "entry ({i},{j}) out of bounds for n = {n}");
            rows[i].push(j);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(&r);
            row_ptr.push(col_idx.len());
        }
        CsrPattern { n, row_ptr, col_idx, symbolic: OnceLock::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Position of entry `(i, j)` in the value array.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        self.row(i).binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    fn symbolic_llt(&self) -> Result<SymbolicLlt<usize>, SolveError> {
        self.symbolic
            .get_or_init(|| {
                // a structurally symmetric CSR pattern is its own CSC transpose
                let sym = SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.row_ptr, None, &self.col_idx);
                SymbolicLlt::try_new(sym, Side::Lower).map_err(|_| SolveError::NotPositiveDefinite)
            })
            .clone()
    }
}

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pattern: Arc<CsrPattern>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<CsrPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        CsrMatrix { pattern, values }
    }

    pub fn from_values(pattern: Arc<CsrPattern>, values: Vec<f64>) -> Self {
        assert_eq!(pattern.nnz(), values.len());
        CsrMatrix { pattern, values }
    }

    pub fn identity(n: usize) -> Self {
        let pattern = Arc::new(CsrPattern::from_entries(n, (0..n).map(|i| (i, i))));
        CsrMatrix { pattern, values: vec![1.0; n] }
    }

    /// Sums duplicate triplets.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let pattern = Arc::new(CsrPattern::from_entries(n, triplets.iter().map(|t| (t.0, t.1))));
        let mut m = CsrMatrix::zeros(pattern);
        for &(i, j, v) in triplets {
            m.add(i, j, v);
        }
        m
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut t = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n);
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, &t)
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Adds `v` at `(i, j)`; panics if the entry is outside the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.pattern.find(i, j).unwrap_or_else(|| panic!("entry ({i},{j}) not in pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.find(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        let p = &self.pattern;
        for i in 0..p.n {
            let mut s = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                s += self.values[k] * x[p.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `self += alpha * other`; both matrices must share a pattern.
    pub fn axpy(&mut self, alpha: f64, other: &CsrMatrix) {
        assert!(Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern.col_idx == other.pattern.col_idx);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn symmetry_defect(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let p = &self.pattern;
        let mut worst = 0.0f64;
        for i in 0..p.n {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.col_idx[k];
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut d = vec![vec![0.0; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                row[self.pattern.col_idx[k]] = self.values[k];
            }
        }
        d
    }
}

/// Counters observable from tests and logs.
#[derive(Debug, Default)]
pub struct SolveStats {
    factorizations: AtomicUsize,
    solves: AtomicUsize,
    cg_iterations: AtomicUsize,
}

impl SolveStats {
    pub fn factorizations(&self) -> usize {
        self.factorizations.load(Ordering::Relaxed)
    }

    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn cg_iterations(&self) -> usize {
        self.cg_iterations.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Sparse Cholesky.
    Direct,
    /// Jacobi-preconditioned conjugate gradients.
    ConjugateGradient,
    /// Direct below `threshold` unknowns, CG above.
    Auto { threshold: usize },
}

impl Default for SolverKind {
    fn default() -> Self {
        SolverKind::Auto { threshold: 250_000 }
    }
}

/// Symmetric sparse operator with a lazily created, reusable factorization.
///
/// The matrix cannot be changed through a shared reference, so a cached
/// factorization always belongs to the current values.
#[derive(Debug)]
pub struct SparseOperator {
    matrix: CsrMatrix,
    kind: SolverKind,
    factor: Mutex<Option<Arc<Llt<usize, f64>>>>,
    stats: Arc<SolveStats>,
}

impl Clone for SparseOperator {
    fn clone(&self) -> Self {
        SparseOperator::new(self.matrix.clone()).with_solver(self.kind)
    }
}

impl SparseOperator {
    pub fn new(matrix: CsrMatrix) -> Self {
        SparseOperator { matrix, kind: SolverKind::default(), factor: Mutex::new(None), stats: Arc::default() }
    }

    pub fn with_solver(mut self, kind: SolverKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_stats(mut self, stats: Arc<SolveStats>) -> Self {
        self.stats = stats;
        self
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn stats(&self) -> &Arc<SolveStats> {
        &self.stats
    }

    /// Mutable access to the matrix; drops any cached factorization.
    pub fn matrix_mut(&mut self) -> &mut CsrMatrix {
        *self.factor.get_mut().expect("factor lock poisoned") = None;
        &mut self.matrix
    }

    pub fn into_matrix(self) -> CsrMatrix {
        self.matrix
    }

    fn use_direct(&self) -> bool {
        match self.kind {
            SolverKind::Direct => true,
            SolverKind::ConjugateGradient => false,
            SolverKind::Auto { threshold } => self.n() <= threshold,
        }
    }

    fn factorization(&self, reuse: bool) -> Result<Arc<Llt<usize, f64>>, SolveError> {
        let mut slot = self.factor.lock().expect("factor lock poisoned");
        if reuse {
            if let Some(f) = slot.as_ref() {
                return Ok(f.clone());
            }
        }
        let p = &self.matrix.pattern;
        let symbolic = p.symbolic_llt()?;
        let sym = SymbolicSparseColMatRef::new_checked(p.n, p.n, &p.row_ptr, None, &p.col_idx);
        let mat = SparseColMatRef::new(sym, &self.matrix.values);
        let llt = Llt::try_new_with_symbolic(symbolic, mat, Side::Lower).map_err(|_| SolveError::NotPositiveDefinite)?;
        self.stats.factorizations.fetch_add(1, Ordering::Relaxed);
        let llt = Arc::new(llt);
        *slot = Some(llt.clone());
        Ok(llt)
    }

    /// Solves `A x = b`. With `reuse`, an existing factorization is used
    /// instead of refactoring.
    pub fn solve(&self, rhs: &[f64], reuse: bool) -> Result<Vec<f64>, SolveError> {
        let mut out = self.solve_many(&[rhs], reuse)?;
        Ok(out.pop().expect("one solution per right-hand side"))
    }

    /// Solves for several right-hand sides with one factorization.
    pub fn solve_many(&self, rhs: &[&[f64]], reuse: bool) -> Result<Vec<Vec<f64>>, SolveError> {
        let n = self.n();
        for b in rhs {
            if b.len() != n {
                return Err(SolveError::DimensionMismatch { expected: n, found: b.len() });
            }
        }
        if n == 0 {
            return Ok(rhs.iter().map(|_| Vec::new()).collect());
        }
        let solutions = if self.use_direct() {
            let llt = self.factorization(reuse)?;
            let mut buf = vec![0.0; n * rhs.len()];
            for (k, b) in rhs.iter().enumerate() {
                buf[k * n..(k + 1) * n].copy_from_slice(b);
            }
            let view = MatMut::from_column_major_slice_mut(&mut buf, n, rhs.len());
            llt.solve_in_place(view);
            buf.chunks(n).map(<[f64]>::to_vec).collect::<Vec<_>>()
        } else {
            rhs.iter().map(|b| self.conjugate_gradient(b)).collect::<Result<Vec<_>, _>>()?
        };
        self.stats.solves.fetch_add(rhs.len(), Ordering::Relaxed);
        for (x, b) in solutions.iter().zip(rhs) {
            self.check_residual(x, b)?;
        }
        Ok(solutions)
    }

    fn check_residual(&self, x: &[f64], b: &[f64]) -> Result<(), SolveError> {
        let ax = self.matrix.matvec(x);
        let r = norm2(ax.iter().zip(b).map(|(a, b)| a - b));
        let tol = SOLVE_TOL * (1.0 + norm2(b.iter().copied()));
        if !(r <= tol) {
            return Err(SolveError::ResidualTooLarge { residual: r, tolerance: tol });
        }
        Ok(())
    }

    fn conjugate_gradient(&self, b: &[f64]) -> Result<Vec<f64>, SolveError> {
        let n = self.n();
        let diag = self.matrix.diagonal();
        if diag.iter().any(|&d| !(d > 0.0)) {
            return Err(SolveError::NotPositiveDefinite);
        }
        let bnorm = norm2(b.iter().copied());
        // a bit tighter than the acceptance test so the residual check passes
        let target = 0.1 * SOLVE_TOL * (1.0 + bnorm);
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz: f64 = dot(&r, &z);
        let mut ap = vec![0.0; n];
        let max_iter = 10 * n + 100;
        for it in 0..max_iter {
            if norm2(r.iter().copied()) <= target {
                self.stats.cg_iterations.fetch_add(it, Ordering::Relaxed);
                return Ok(x);
            }
            self.matrix.matvec_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(SolveError::NotPositiveDefinite);
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        self.stats.cg_iterations.fetch_add(max_iter, Ordering::Relaxed);
        Err(SolveError::NotConverged { iterations: max_iter, residual: norm2(r.iter().copied()) / (1.0 + bnorm) })
    }
}

/// Free-function form of [`SparseOperator::solve`].
pub fn solve(op: &SparseOperator, rhs: &[f64], reuse: bool) -> Result<Vec<f64>, SolveError> {
    op.solve(rhs, reuse)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}
