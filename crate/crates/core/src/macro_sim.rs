//! Time loop of the effective macroscopic system.
//!
//! Each step solves the quasi-static elasticity problem at the new time,
//! updates `J*`, `D*` from the displacement gradient, and advances the
//! concentration with a θ-scheme for `∂t(J* c) − div(D* ∇c) = J* f`.
//! The elasticity solve never sees the concentration.

use std::fmt;
use std::sync::Arc;

use log::{debug, info, warn};

use crate::diffusion::{update_effective_field, CacheOptions, DiffusionCellSolver, EffectiveCache, EffectiveFieldState, UpdateStats};
use crate::error::{Error, Result};
use crate::fem::assembly::{add_diffusion_block, add_mass_block};
use crate::fem::{Assembler, Condensation, ConstraintSet, CsrMatrix, SparseOperator};
use crate::mesh::{BoundaryTag, StructuredGrid};
use crate::tensor::{Mat2, Tensor4Sym};

pub type ScalarFn = Arc<dyn Fn(f64, [f64; 2]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64, [f64; 2]) -> [f64; 2] + Send + Sync>;
pub type InitialFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HVariant {
    /// Uniform lateral displacement on both lateral sides.
    ConstantFront,
    /// Lateral displacement shaped by a parabola vanishing at the corners;
    /// top and bottom clamped.
    Parabola,
}

/// Lateral displacement `±a (1 − cos 2πft) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HParams {
    pub amplitude: f64,
    pub frequency: f64,
    pub variant: HVariant,
}

impl Default for HParams {
    fn default() -> Self {
        HParams { amplitude: 0.25, frequency: 1.0, variant: HVariant::ConstantFront }
    }
}

const SIDE_TOL: f64 = 1e-12;

/// Dirichlet displacement at `x` on the boundary of the box `[lower, upper]`.
pub fn dirichlet_h_on(t: f64, x: [f64; 2], p: &HParams, lower: [f64; 2], upper: [f64; 2]) -> [f64; 2] {
    let s = p.amplitude * (1.0 - (2.0 * std::f64::consts::PI * p.frequency * t).cos()) / 2.0;
    let sign = if (x[0] - upper[0]).abs() <= SIDE_TOL {
        1.0
    } else if (x[0] - lower[0]).abs() <= SIDE_TOL {
        -1.0
    } else {
        return [0.0, 0.0];
    };
    let factor = match p.variant {
        HVariant::ConstantFront => 1.0,
        HVariant::Parabola => {
            let c = 0.5 * (lower[1] + upper[1]);
            let hw = 0.5 * (upper[1] - lower[1]);
            (hw * hw - (x[1] - c) * (x[1] - c)) / (hw * hw)
        }
    };
    [sign * s * factor, 0.0]
}

/// [`dirichlet_h_on`] for `Ω = (−1/2, 1/2)^2`.
pub fn dirichlet_h(t: f64, x: [f64; 2], p: &HParams) -> [f64; 2] {
    dirichlet_h_on(t, x, p, [-0.5, -0.5], [0.5, 0.5])
}

/// Coefficients, data functions and time-stepping parameters.
#[derive(Clone)]
pub struct ProblemData {
    /// Symmetrized effective stiffness.
    pub a_star: Tensor4Sym,
    pub d_hat: Mat2,
    pub f_elast: VectorFn,
    pub f_diff: ScalarFn,
    pub g: ScalarFn,
    pub c0: InitialFn,
    pub h: HParams,
    /// Replaces the `h` boundary data when set.
    pub elastic_dirichlet: Option<VectorFn>,
    pub theta: f64,
    pub dt: f64,
    /// `|Y^s|`, scales the elastic body force.
    pub solid_fraction: f64,
}

impl fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemData")
            .field("a_star", &self.a_star)
            .field("d_hat", &self.d_hat)
            .field("h", &self.h)
            .field("theta", &self.theta)
            .field("dt", &self.dt)
            .field("solid_fraction", &self.solid_fraction)
            .finish_non_exhaustive()
    }
}

impl ProblemData {
    /// Model problem: no body force or source, `g ≡ 1`, `c0 ≡ 0`, `θ = 1/2`, `Δt = 0.05`.
    pub fn model(a_star: Tensor4Sym, d_hat: Mat2, solid_fraction: f64) -> Self {
        ProblemData {
            a_star,
            d_hat,
            f_elast: Arc::new(|_, _| [0.0, 0.0]),
            f_diff: Arc::new(|_, _| 0.0),
            g: Arc::new(|_, _| 1.0),
            c0: Arc::new(|_| 0.0),
            h: HParams::default(),
            elastic_dirichlet: None,
            theta: 0.5,
            dt: 0.05,
            solid_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.dt > 0.0) {
            return bad(format!("time step must be positive, got {}", self.dt));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad(format!("theta must lie in [0, 1], got {}", self.theta));
        }
        if !(self.h.frequency > 0.0) {
            return bad(format!("frequency must be positive, got {}", self.h.frequency));
        }
        if !self.h.amplitude.is_finite() {
            return bad(format!("amplitude must be finite, got {}", self.h.amplitude));
        }
        if !self.a_star.is_positive_on_symmetric() {
            return bad("effective stiffness is not positive on symmetric strains".into());
        }
        Ok(())
    }
}

/// Nodal displacement (interleaved) and concentration at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    pub t: f64,
    pub u: Vec<f64>,
    pub c: Vec<f64>,
}

/// One row of `observables.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub t: f64,
    pub mass: f64,
    pub min_c: f64,
    pub max_c: f64,
    pub max_abs_u: f64,
}

/// Boundary sets, operators and factorizations that stay fixed over a run.
pub struct Simulation {
    assembler: Assembler,
    data: ProblemData,
    solver: Arc<DiffusionCellSolver>,
    cache: EffectiveCache,
    cache_options: CacheOptions,
    elastic_full: CsrMatrix,
    elastic_cond: Condensation,
    elastic_op: SparseOperator,
    elastic_fixed_nodes: Vec<usize>,
    diff_cond: Condensation,
    diff_fixed_nodes: Vec<usize>,
    bounds: ([f64; 2], [f64; 2]),
    cell_solves: usize,
}

impl fmt::Debug for Simulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Simulation").field("nodes", &self.grid().num_nodes()).field("data", &self.data).finish_non_exhaustive()
    }
}

impl Simulation {
    /// `grid` must carry boundary tags from `classify_boundary`.
    pub fn new(grid: Arc<StructuredGrid>, solver: Arc<DiffusionCellSolver>, data: ProblemData, cache_options: CacheOptions) -> Result<Self> {
        let diff_nodes = grid.nodes_with_tag(BoundaryTag::DiffDirichlet);
        Self::with_diffusion_dirichlet(grid, solver, data, cache_options, diff_nodes)
    }

    /// As [`Simulation::new`] with an explicit set of concentration Dirichlet nodes.
    pub fn with_diffusion_dirichlet(
        grid: Arc<StructuredGrid>,
        solver: Arc<DiffusionCellSolver>,
        data: ProblemData,
        cache_options: CacheOptions,
        diff_fixed_nodes: Vec<usize>,
    ) -> Result<Self> {
        data.validate()?;
        if grid.is_cell_grid() {
            return Err(Error::InvalidInput("the macroscopic problem needs a macro grid".into()));
        }
        let bounds = grid.bounds();
        let assembler = Assembler::new(grid.clone());

        let elastic_fixed_nodes = grid.nodes_with_tag(BoundaryTag::ElastDirichlet);
        let elastic_full = assembler.elasticity(&data.a_star);
        let mut ecs = ConstraintSet::new();
        for &n in &elastic_fixed_nodes {
            ecs.add_dirichlet(2 * n, 0.0)?;
            ecs.add_dirichlet(2 * n + 1, 0.0)?;
        }
        let elastic_cond = Condensation::new(elastic_full.pattern(), &ecs)?;
        let elastic_op = SparseOperator::new(elastic_cond.condense_matrix(&elastic_full));

        let mut dcs = ConstraintSet::new();
        for &n in &diff_fixed_nodes {
            dcs.add_dirichlet(n, 0.0)?;
        }
        let diff_cond = Condensation::new(assembler.scalar_pattern(), &dcs)?;
        Ok(Simulation {
            assembler,
            data,
            solver,
            cache: EffectiveCache::new(),
            cache_options,
            elastic_full,
            elastic_cond,
            elastic_op,
            elastic_fixed_nodes,
            diff_cond,
            diff_fixed_nodes,
            bounds,
            cell_solves: 0,
        })
    }

    pub fn grid(&self) -> &Arc<StructuredGrid> {
        self.assembler.grid()
    }

    pub fn assembler(&self) -> &Assembler {
        &self.assembler
    }

    pub fn data(&self) -> &ProblemData {
        &self.data
    }

    pub fn solver(&self) -> &Arc<DiffusionCellSolver> {
        &self.solver
    }

    /// Diffusion cell problems solved by this simulation so far.
    pub fn cell_solves(&self) -> usize {
        self.cell_solves
    }

    fn h_at(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        match &self.data.elastic_dirichlet {
            Some(f) => f(t, x),
            None => dirichlet_h_on(t, x, &self.data.h, self.bounds.0, self.bounds.1),
        }
    }

    /// Quasi-static displacement at time `t`.
    pub fn elastic_solve(&self, t: f64) -> Result<Vec<f64>> {
        let verts = self.grid().vertices();
        let fixed: Vec<f64> = self
            .elastic_cond
            .fixed_dofs()
            .iter()
            .map(|&d| self.h_at(t, verts[d / 2])[d % 2])
            .collect();
        let scale = self.data.solid_fraction;
        let f = &self.data.f_elast;
        let load = self.assembler.vector_load(|_, _, p| {
            let v = f(t, p.x);
            [scale * v[0], scale * v[1]]
        });
        let rhs = self.elastic_cond.condense_rhs(&self.elastic_full, &load, &fixed);
        let y = self.elastic_op.solve(&rhs, true).map_err(|e| {
            Error::solve(format!("macroscopic elasticity at t = {t} (insufficient Dirichlet data?)"), e)
        })?;
        Ok(self.elastic_cond.expand(&y, &fixed))
    }

    /// `J*`, `D*` at all macro quadrature points for displacement `u`.
    pub fn effective_field(&mut self, u: &[f64], t: f64) -> Result<(EffectiveFieldState, UpdateStats)> {
        let (state, stats) = update_effective_field(
            &self.solver,
            self.assembler.grid(),
            self.assembler.element_values(),
            u,
            t,
            &self.cache,
            self.cache_options,
        )?;
        self.cell_solves += stats.cell_solves;
        debug!("t = {t}: {} points, {} cell solves, {} cache hits", stats.points, stats.cell_solves, stats.cache_hits);
        Ok((state, stats))
    }

    fn diffusion_matrices(&self, eff: &EffectiveFieldState) -> Result<(Vec<f64>, Vec<f64>)> {
        let grid = self.grid();
        let ev = self.assembler.element_values();
        let nq = ev.points_per_element();
        let nnz = self.assembler.scalar_pattern().nnz();
        let mut mass = vec![0.0; nnz];
        let mut stiff = vec![0.0; nnz];
        for e in 0..grid.num_cells() {
            let slots = self.assembler.scalar_slots(e);
            for (q, p) in ev.element(e).iter().enumerate() {
                let v = &eff.values[e * nq + q];
                if !(v.j_star > 0.0) {
                    return Err(Error::NonPositiveWeight { element: e, point: q, value: v.j_star });
                }
                let d = (v.d_star + v.d_star.transpose()) * 0.5;
                add_mass_block(&mut mass, slots, p, v.j_star);
                add_diffusion_block(&mut stiff, slots, p, &d, 1.0);
            }
        }
        Ok((mass, stiff))
    }

    fn diffusion_load(&self, eff: &EffectiveFieldState, t: f64) -> Vec<f64> {
        let nq = self.assembler.element_values().points_per_element();
        let f = &self.data.f_diff;
        self.assembler.scalar_load(|e, q, p| eff.values[e * nq + q].j_star * f(t, p.x))
    }

    /// One θ-step from `(c, eff_k)` at `t_k` to `t_{k+1} = eff_k1.t`:
    /// `(M_{k+1}/Δt + θK_{k+1}) c_{k+1} = (M_k/Δt − (1−θ)K_k) c_k + θF_{k+1} + (1−θ)F_k`.
    pub fn diffusion_step(&self, c: &[f64], eff_k: &EffectiveFieldState, eff_k1: &EffectiveFieldState) -> Result<Vec<f64>> {
        let dt = eff_k1.t - eff_k.t;
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("time levels must increase, got {} -> {}", eff_k.t, eff_k1.t)));
        }
        let theta = self.data.theta;
        let (m0, k0) = self.diffusion_matrices(eff_k)?;
        let (m1, k1) = self.diffusion_matrices(eff_k1)?;
        let pattern = self.assembler.scalar_pattern().clone();
        let lhs = CsrMatrix::from_values(pattern.clone(), m1.iter().zip(&k1).map(|(m, k)| m / dt + theta * k).collect());
        let old = CsrMatrix::from_values(pattern, m0.iter().zip(&k0).map(|(m, k)| m / dt - (1.0 - theta) * k).collect());
        let mut rhs = old.matvec(c);
        if theta != 0.0 {
            for (r, f) in rhs.iter_mut().zip(self.diffusion_load(eff_k1, eff_k1.t)) {
                *r += theta * f;
            }
        }
        if theta != 1.0 {
            for (r, f) in rhs.iter_mut().zip(self.diffusion_load(eff_k, eff_k.t)) {
                *r += (1.0 - theta) * f;
            }
        }
        let verts = self.grid().vertices();
        let fixed: Vec<f64> = self.diff_cond.fixed_dofs().iter().map(|&n| (self.data.g)(eff_k1.t, verts[n])).collect();
        let reduced_rhs = self.diff_cond.condense_rhs(&lhs, &rhs, &fixed);
        let op = SparseOperator::new(self.diff_cond.condense_matrix(&lhs));
        let y = op.solve(&reduced_rhs, false).map_err(|e| Error::solve(format!("macroscopic diffusion step to t = {}", eff_k1.t), e))?;
        Ok(self.diff_cond.expand(&y, &fixed))
    }

    /// `∫ c J* dx` by quadrature.
    pub fn mass(&self, c: &[f64], eff: &EffectiveFieldState) -> f64 {
        mass_observable(&self.assembler, c, eff)
    }

    pub fn observables(&self, state: &MacroState, eff: &EffectiveFieldState) -> Observables {
        let (min_c, max_c) = state.c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let max_abs_u = state.u.chunks(2).map(|u| u[0].hypot(u[1])).fold(0.0, f64::max);
        Observables { t: state.t, mass: self.mass(&state.c, eff), min_c, max_c, max_abs_u }
    }

    /// State and effective field at `t = 0`.
    pub fn initial(&mut self) -> Result<(MacroState, EffectiveFieldState)> {
        let u = self.elastic_solve(0.0)?;
        let (eff, _) = self.effective_field(&u, 0.0)?;
        let c = self.grid().vertices().iter().map(|&x| (self.data.c0)(x)).collect();
        Ok((MacroState { t: 0.0, u, c }, eff))
    }

    /// Advances one step of length `Δt`.
    pub fn step(&mut self, state: &MacroState, eff: &EffectiveFieldState, k: usize) -> Result<(MacroState, EffectiveFieldState)> {
        let t1 = (k + 1) as f64 * self.data.dt;
        let ctx = |e: Error| if e.is_degenerate_deformation() { e } else { e.with_context(format!("time step {} (t = {t1})", k + 1)) };
        let u = self.elastic_solve(t1).map_err(ctx)?;
        let (eff1, _) = self.effective_field(&u, t1).map_err(ctx)?;
        let c = self.diffusion_step(&state.c, eff, &eff1).map_err(ctx)?;
        Ok((MacroState { t: t1, u, c }, eff1))
    }

    /// Runs to `t_end`, calling `observer` after the initial state and
    /// after every step.
    pub fn run(&mut self, t_end: f64, mut observer: impl FnMut(&Simulation, &MacroState, &EffectiveFieldState) -> Result<()>) -> Result<RunOutput> {
        let steps = step_count(t_end, self.data.dt)?;
        let (mut state, mut eff) = self.initial()?;
        let mut observables = vec![self.observables(&state, &eff)];
        observer(self, &state, &eff)?;
        for k in 0..steps {
            let (s, e) = self.step(&state, &eff, k)?;
            state = s;
            eff = e;
            let obs = self.observables(&state, &eff);
            debug!("t = {:.4}: M = {:.6e}, c in [{:.4}, {:.4}]", obs.t, obs.mass, obs.min_c, obs.max_c);
            observables.push(obs);
            observer(self, &state, &eff)?;
        }
        info!("finished {steps} steps, {} diffusion cell solves", self.cell_solves);
        Ok(RunOutput { observables, final_state: state, final_effective: eff, cell_solves: self.cell_solves })
    }
}

/// Number of uniform steps of length `dt` reaching `t_end`.
pub fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(t_end >= 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("need t_end >= 0 and dt > 0, got {t_end} and {dt}")));
    }
    let n = (t_end / dt).round();
    if (n * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::InvalidInput(format!("t_end = {t_end} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub observables: Vec<Observables>,
    pub final_state: MacroState,
    pub final_effective: EffectiveFieldState,
    pub cell_solves: usize,
}

/// `M = ∫ c J* dx`.
pub fn mass_observable(assembler: &Assembler, c: &[f64], eff: &EffectiveFieldState) -> f64 {
    let grid = assembler.grid();
    let ev = assembler.element_values();
    ev.all()
        .iter()
        .enumerate()
        .map(|(p, qp)| {
            let cell = grid.cells()[p / ev.points_per_element()];
            let cq: f64 = cell.iter().zip(&qp.shape).map(|(&n, s)| c[n] * s).sum();
            qp.weight * cq * eff.values[p].j_star
        })
        .sum()
}

/// Displacement `u` and its gradient at `x`.
pub fn sample_displacement(grid: &StructuredGrid, u: &[f64], x: [f64; 2]) -> Option<([f64; 2], [[f64; 2]; 2])> {
    let (cell, xi) = grid.locate(x)?;
    let nodes = grid.cells()[cell];
    let shape = crate::fem::quadrature::shape_values(xi);
    let dref = crate::fem::quadrature::shape_derivatives(xi);
    let [dx, dy] = grid.spacing();
    let mut val = [0.0; 2];
    let mut grad = [[0.0; 2]; 2];
    for a in 0..4 {
        for m in 0..2 {
            let v = u[2 * nodes[a] + m];
            val[m] += v * shape[a];
            grad[m][0] += v * dref[a][0] * 2.0 / dx;
            grad[m][1] += v * dref[a][1] * 2.0 / dy;
        }
    }
    Some((val, grad))
}

/// Micro displacement `u(x*) + ε (G y + Σ_ij G_ij chi_ij(y))` at every cell node.
pub fn reconstruct_corrector(
    macro_grid: &StructuredGrid,
    u: &[f64],
    chi: &crate::elasticity::ElasticCellSolutions,
    x_star: [f64; 2],
    epsilon: f64,
) -> Result<Vec<[f64; 2]>> {
    let (val, g) = sample_displacement(macro_grid, u, x_star)
        .ok_or_else(|| Error::InvalidInput(format!("anchor point {x_star:?} lies outside the macroscopic domain")))?;
    let e = [g[0][0], 0.5 * (g[0][1] + g[1][0]), g[1][1]];
    let weights = [e[0], 2.0 * e[1], e[2]];
    let fields = [chi.field(0, 0), chi.field(0, 1), chi.field(1, 1)];
    Ok(chi
        .grid()
        .vertices()
        .iter()
        .enumerate()
        .map(|(n, y)| {
            std::array::from_fn(|m| {
                let mut s = g[m][0] * y[0] + g[m][1] * y[1];
                for (w, f) in weights.iter().zip(fields) {
                    s += w * f[2 * n + m];
                }
                val[m] + epsilon * s
            })
        })
        .collect())
}

/// Grid moved to `x + u(x)`; concentration values carry over unchanged.
/// Logs a warning for every element whose warped image is not positively oriented.
pub fn push_forward(grid: &StructuredGrid, state: &MacroState) -> (StructuredGrid, Vec<f64>, usize) {
    let verts: Vec<[f64; 2]> = grid.vertices().iter().enumerate().map(|(n, x)| [x[0] + state.u[2 * n], x[1] + state.u[2 * n + 1]]).collect();
    let mut inverted = 0;
    for (e, cell) in grid.cells().iter().enumerate() {
        let p = cell.map(|n| verts[n]);
        let positive = (0..4).all(|k| {
            let (a, b, c) = (p[(k + 3) % 4], p[k], p[(k + 1) % 4]);
            (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) > 0.0
        });
        if !positive {
            inverted += 1;
            warn!("warped element {e} at t = {} has a non-positive Jacobian", state.t);
        }
    }
    (grid.with_vertices(verts), state.c.clone(), inverted)
}

impl Simulation {
    /// Nodes where `c` is prescribed.
    pub fn diffusion_dirichlet_nodes(&self) -> &[usize] {
        &self.diff_fixed_nodes
    }

    pub fn elastic_dirichlet_nodes(&self) -> &[usize] {
        &self.elastic_fixed_nodes
    }
}
