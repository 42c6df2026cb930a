//! Diffusion cell problems and the effective coefficients `J*`, `D*`.
//!
//! For a given macroscopic gradient the correctors `eta_i` solve
//!
//! ```text
//! -div_y D0 (e_i + ∇_y eta_i) = 0  in Y^s,   D0 (e_i + ∇_y eta_i) · n = 0  on Γ,
//! eta_i periodic,  ∫ eta_i = 0,
//! ```
//!
//! and `J* = ∫ J0`, `D*_ij = ∫ (D0 (e_j + ∇_y eta_j))_i`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::elasticity::{CellDomain, ElasticCellSolutions};
use crate::error::{Error, Result};
use crate::fem::assembly::add_diffusion_block;
use crate::fem::{Condensation, CsrMatrix, ElementValues, SparseOperator};
use crate::kinematics::{compute_f0, compute_j0_d0, CellCoefficientField, MacroGradientSample};
use crate::mesh::StructuredGrid;
use crate::tensor::{min_eigenvalue_sym, Mat2};

/// Effective coefficients at one macroscopic point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectivePointValue {
    pub j_star: f64,
    pub d_star: Mat2,
}

/// Scalar correctors `eta_1, eta_2` on the cell grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionCellSolutions {
    pub eta: [Vec<f64>; 2],
}

/// Everything needed to turn a macroscopic gradient into `J*`, `D*`.
///
/// The periodic/mean-zero condensation and the symbolic factorization of
/// the reduced pattern are shared by all points.
#[derive(Debug)]
pub struct DiffusionCellSolver {
    chi: Arc<ElasticCellSolutions>,
    condensation: Condensation,
    d_hat: Mat2,
    j_min: f64,
    points: Vec<[f64; 2]>,
    cell_solves: AtomicUsize,
}

impl DiffusionCellSolver {
    pub fn new(chi: Arc<ElasticCellSolutions>, d_hat: Mat2, j_min: f64) -> Result<Self> {
        if (d_hat[(0, 1)] - d_hat[(1, 0)]).abs() > 1e-14 * d_hat.norm() || !(min_eigenvalue_sym(&d_hat) > 0.0) {
            return Err(Error::InvalidInput(format!("reference diffusion tensor must be symmetric positive definite, got {d_hat:?}")));
        }
        if !(j_min > 0.0) {
            return Err(Error::InvalidInput(format!("j_min must be positive, got {j_min}")));
        }
        let domain = chi.domain().clone();
        let condensation = Condensation::new(domain.assembler().scalar_pattern(), &domain.constraints(1)?)?;
        let points = domain.assembler().element_values().all().iter().map(|p| p.x).collect();
        Ok(DiffusionCellSolver { chi, condensation, d_hat, j_min, points, cell_solves: AtomicUsize::new(0) })
    }

    pub fn domain(&self) -> &Arc<CellDomain> {
        self.chi.domain()
    }

    pub fn chi(&self) -> &Arc<ElasticCellSolutions> {
        &self.chi
    }

    pub fn d_hat(&self) -> Mat2 {
        self.d_hat
    }

    pub fn j_min(&self) -> f64 {
        self.j_min
    }

    /// Number of diffusion cell problems solved so far (pairs of right-hand sides).
    pub fn cell_solves(&self) -> usize {
        self.cell_solves.load(Ordering::Relaxed)
    }

    /// `F0`, `J0`, `D0` over the cell for one macroscopic gradient.
    pub fn coefficient_field(&self, sample: &MacroGradientSample) -> Result<CellCoefficientField> {
        compute_j0_d0(compute_f0(sample, &self.chi), &self.d_hat, self.j_min, &self.points)
    }

    /// Solves for `eta_1`, `eta_2` with one factorization.
    pub fn solve_cells(&self, field: &CellCoefficientField) -> Result<DiffusionCellSolutions> {
        let domain = self.domain();
        let asm = domain.assembler();
        let grid = domain.grid();
        let ev = asm.element_values();
        let nq = ev.points_per_element();
        let mut values = vec![0.0; asm.scalar_pattern().nnz()];
        let mut loads = [vec![0.0; grid.num_nodes()], vec![0.0; grid.num_nodes()]];
        for (e, cell) in grid.cells().iter().enumerate() {
            let slots = asm.scalar_slots(e);
            for (q, p) in ev.element(e).iter().enumerate() {
                let d = &field.d0[e * nq + q];
                add_diffusion_block(&mut values, slots, p, d, 1.0);
                for (i, load) in loads.iter_mut().enumerate() {
                    for a in 0..4 {
                        let g = p.grads[a];
                        load[cell[a]] -= p.weight * (d[(0, i)] * g[0] + d[(1, i)] * g[1]);
                    }
                }
            }
        }
        let full = CsrMatrix::from_values(asm.scalar_pattern().clone(), values);
        let op = SparseOperator::new(self.condensation.condense_matrix(&full));
        let rhs = loads.map(|l| self.condensation.condense_vector(&l));
        let reduced = op
            .solve_many(&[&rhs[0], &rhs[1]], true)
            .map_err(|e| Error::solve("diffusion cell problem", e))?;
        self.cell_solves.fetch_add(1, Ordering::Relaxed);
        let fixed = vec![0.0; self.condensation.fixed_dofs().len()];
        Ok(DiffusionCellSolutions { eta: [self.condensation.expand(&reduced[0], &fixed), self.condensation.expand(&reduced[1], &fixed)] })
    }

    /// `J* = ∫ J0`, `D*_ij = ∫ (D0 (e_j + ∇ eta_j))_i`.
    pub fn effective(&self, field: &CellCoefficientField, eta: &DiffusionCellSolutions) -> EffectivePointValue {
        let domain = self.domain();
        let grid = domain.grid();
        let ev = domain.assembler().element_values();
        let nq = ev.points_per_element();
        let mut j_star = 0.0;
        let mut d_star = Mat2::zeros();
        for (p, qp) in ev.all().iter().enumerate() {
            j_star += qp.weight * field.j0[p];
            let d = &field.d0[p];
            for j in 0..2 {
                let g = ev.scalar_gradient(grid, &eta.eta[j], p / nq, p % nq);
                let mut v = [g[0], g[1]];
                v[j] += 1.0;
                d_star[(0, j)] += qp.weight * (d[(0, 0)] * v[0] + d[(0, 1)] * v[1]);
                d_star[(1, j)] += qp.weight * (d[(1, 0)] * v[0] + d[(1, 1)] * v[1]);
            }
        }
        EffectivePointValue { j_star, d_star }
    }

    /// Full pipeline for one macroscopic gradient.
    pub fn effective_point(&self, sample: &MacroGradientSample) -> Result<EffectivePointValue> {
        let field = self.coefficient_field(sample)?;
        let eta = self.solve_cells(&field)?;
        Ok(self.effective(&field, &eta))
    }
}

/// Free-function form of [`DiffusionCellSolver::solve_cells`].
pub fn solve_diffusion_cells(solver: &DiffusionCellSolver, field: &CellCoefficientField) -> Result<DiffusionCellSolutions> {
    solver.solve_cells(field)
}

/// Cell-problem energy `∫ D0 (e_i + ∇ eta_i) · ∇ eta_i` per direction;
/// zero for exact Galerkin solutions.
pub fn corrector_energy_defect(domain: &CellDomain, field: &CellCoefficientField, eta: &DiffusionCellSolutions) -> [f64; 2] {
    let grid = domain.grid();
    let ev: &ElementValues = domain.assembler().element_values();
    let nq = ev.points_per_element();
    std::array::from_fn(|i| {
        ev.all()
            .iter()
            .enumerate()
            .map(|(p, qp)| {
                let g = ev.scalar_gradient(grid, &eta.eta[i], p / nq, p % nq);
                let mut v = g;
                v[i] += 1.0;
                let d = &field.d0[p];
                let flux = [d[(0, 0)] * v[0] + d[(0, 1)] * v[1], d[(1, 0)] * v[0] + d[(1, 1)] * v[1]];
                qp.weight * (flux[0] * g[0] + flux[1] * g[1])
            })
            .sum()
    })
}

/// `J*`, `D*` at every macro quadrature point (index `element * 4 + q`).
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveFieldState {
    pub t: f64,
    pub values: Vec<EffectivePointValue>,
}

impl EffectiveFieldState {
    pub fn uniform(t: f64, n: usize, value: EffectivePointValue) -> Self {
        EffectiveFieldState { t, values: vec![value; n] }
    }

    /// Per-element averages of `J*` and the four `D*` components.
    pub fn element_averages(&self, points_per_element: usize) -> Vec<[f64; 5]> {
        self.values
            .chunks(points_per_element)
            .map(|c| {
                let n = c.len() as f64;
                let mut s = [0.0; 5];
                for v in c {
                    s[0] += v.j_star;
                    s[1] += v.d_star[(0, 0)];
                    s[2] += v.d_star[(0, 1)];
                    s[3] += v.d_star[(1, 0)];
                    s[4] += v.d_star[(1, 1)];
                }
                s.map(|x| x / n)
            })
            .collect()
    }
}

/// Key identifying a macroscopic gradient for cache lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey([i64; 4]);

/// Exact bit pattern of `G` for `quantization == 0`, otherwise `G / quantization` rounded.
pub fn cache_key(sample: &MacroGradientSample, quantization: f64) -> CacheKey {
    let g = [sample.g[(0, 0)], sample.g[(0, 1)], sample.g[(1, 0)], sample.g[(1, 1)]];
    if quantization > 0.0 {
        CacheKey(g.map(|v| (v / quantization).round() as i64))
    } else {
        // +0.0 and -0.0 describe the same gradient
        CacheKey(g.map(|v| if v == 0.0 { 0 } else { v.to_bits() as i64 }))
    }
}

/// Controls how cell problems are shared between macro quadrature points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheOptions {
    pub enabled: bool,
    /// 0 means exact matching.
    pub quantization: f64,
    /// Entries kept across updates; the cache is cleared when exceeded.
    pub capacity: usize,
}

impl Default for CacheOptions {
    fn default() -> Self {
        CacheOptions { enabled: true, quantization: 0.0, capacity: 200_000 }
    }
}

/// Effective values keyed by gradient, shared across updates.
#[derive(Debug, Default)]
pub struct EffectiveCache {
    map: Mutex<HashMap<CacheKey, EffectivePointValue>>,
}

impl EffectiveCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.map.lock().expect("cache lock poisoned").clear();
    }
}

/// Work done by one [`update_effective_field`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateStats {
    pub points: usize,
    pub cache_hits: usize,
    pub cell_solves: usize,
}

/// Samples `∇u` at every macro quadrature point and computes `J*`, `D*`
/// there. Identical gradients share one cell solve when caching is
/// enabled; unique gradients are solved in parallel and written back in
/// quadrature-point order.
pub fn update_effective_field(
    solver: &DiffusionCellSolver,
    macro_grid: &StructuredGrid,
    macro_values: &ElementValues,
    u: &[f64],
    t: f64,
    cache: &EffectiveCache,
    options: CacheOptions,
) -> Result<(EffectiveFieldState, UpdateStats)> {
    if u.len() != 2 * macro_grid.num_nodes() {
        return Err(Error::InvalidInput(format!("displacement has {} entries, grid needs {}", u.len(), 2 * macro_grid.num_nodes())));
    }
    let nq = macro_values.points_per_element();
    let n = macro_values.len();
    let samples: Vec<MacroGradientSample> = (0..n)
        .map(|p| MacroGradientSample::from_array(macro_values.vector_gradient(macro_grid, u, p / nq, p % nq)))
        .collect();

    // group points by key; each group is solved once, at its first point
    let mut slot_of = Vec::with_capacity(n);
    let mut representatives: Vec<usize> = Vec::new();
    let mut cached: Vec<Option<EffectivePointValue>> = Vec::new();
    let mut hits = 0;
    {
        let store = cache.map.lock().expect("cache lock poisoned");
        let mut local: HashMap<CacheKey, usize> = HashMap::new();
        for (p, s) in samples.iter().enumerate() {
            if !options.enabled {
                slot_of.push(representatives.len());
                representatives.push(p);
                cached.push(None);
                continue;
            }
            let key = cache_key(s, options.quantization);
            let slot = *local.entry(key).or_insert_with(|| {
                representatives.push(p);
                cached.push(store.get(&key).copied());
                representatives.len() - 1
            });
            if cached[slot].is_some() {
                hits += 1;
            }
            slot_of.push(slot);
        }
    }

    let todo: Vec<usize> = (0..representatives.len()).filter(|&s| cached[s].is_none()).collect();
    let solved: Vec<Result<EffectivePointValue>> = todo
        .par_iter()
        .map(|&s| {
            let p = representatives[s];
            solver.effective_point(&samples[p]).map_err(|e| match e {
                Error::DegenerateDeformation(mut d) => {
                    d.t = Some(t);
                    d.macro_point = Some((p, macro_values.all()[p].x));
                    Error::DegenerateDeformation(d)
                }
                e => e.with_context(format!("cell problem at t = {t}, macro quadrature point {p}")),
            })
        })
        .collect();
    let mut values: Vec<EffectivePointValue> = vec![EffectivePointValue { j_star: 0.0, d_star: Mat2::zeros() }; representatives.len()];
    for (s, v) in cached.iter().enumerate() {
        if let Some(v) = v {
            values[s] = *v;
        }
    }
    for (&s, r) in todo.iter().zip(solved) {
        values[s] = r?;
    }

    if options.enabled && !todo.is_empty() {
        let mut store = cache.map.lock().expect("cache lock poisoned");
        if store.len() + todo.len() > options.capacity {
            store.clear();
        }
        for &s in &todo {
            store.insert(cache_key(&samples[representatives[s]], options.quantization), values[s]);
        }
    }

    let state = EffectiveFieldState { t, values: slot_of.iter().map(|&s| values[s]).collect() };
    Ok((state, UpdateStats { points: n, cache_hits: hits, cell_solves: todo.len() }))
}
