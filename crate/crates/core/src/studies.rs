//! Grid-convergence and parameter-sensitivity experiments.

use std::sync::Arc;

use log::info;
use rayon::prelude::*;

use crate::diffusion::{CacheOptions, DiffusionCellSolver};
use crate::error::{Error, Result};
use crate::fem::quadrature::shape_values;
use crate::fem::Assembler;
use crate::macro_sim::{HVariant, ProblemData, Simulation};
use crate::mesh::{build_macro_grid, classify_boundary, ProblemVariant, StructuredGrid};

/// Errors between cycle `i − 1` and `i`, and orders from cycle 2 on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRecord {
    pub cycle: usize,
    pub cells: usize,
    pub h: f64,
    pub u_l2: Option<f64>,
    pub u_h1: Option<f64>,
    pub c_l2: Option<f64>,
    pub c_h1: Option<f64>,
    pub eoc_u_l2: Option<f64>,
    pub eoc_u_h1: Option<f64>,
    pub eoc_c_l2: Option<f64>,
    pub eoc_c_h1: Option<f64>,
}

/// `log2(e_prev / e)`
pub fn eoc(prev: f64, current: f64) -> f64 {
    (prev / current).log2()
}

/// Problem data of a convergence study: the mixed model uses the constant
/// front with `c0 ≡ 0`; the pure Dirichlet variant uses the parabola with `c0 ≡ 1`.
pub fn study_data(variant: ProblemVariant, base: &ProblemData) -> ProblemData {
    let mut d = base.clone();
    match variant {
        ProblemVariant::MixedModel => {
            d.h.variant = HVariant::ConstantFront;
            d.c0 = Arc::new(|_| 0.0);
        }
        ProblemVariant::PureDirichlet => {
            d.h.variant = HVariant::Parabola;
            d.c0 = Arc::new(|_| 1.0);
        }
    }
    d
}

/// Interpolates nodal fields (`components` per node) of `coarse` onto the
/// nodes of `fine`; exact for nested uniform grids.
pub fn prolongate(coarse: &StructuredGrid, field: &[f64], components: usize, fine: &StructuredGrid) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(fine.num_nodes() * components);
    for x in fine.vertices() {
        let (cell, xi) = coarse
            .locate(*x)
            .ok_or_else(|| Error::InvalidInput(format!("fine node {x:?} lies outside the coarse grid")))?;
        let s = shape_values(xi);
        let nodes = coarse.cells()[cell];
        for m in 0..components {
            out.push((0..4).map(|a| s[a] * field[nodes[a] * components + m]).sum());
        }
    }
    Ok(out)
}

/// `(‖v‖_{L²}, ‖v‖_{H¹})` of a nodal field by quadrature; the H¹ norm
/// includes the L² part.
pub fn norms(assembler: &Assembler, v: &[f64], components: usize) -> (f64, f64) {
    let grid = assembler.grid();
    let mut l2 = 0.0;
    let mut grad = 0.0;
    let ev = assembler.element_values();
    let nq = ev.points_per_element();
    for (p, qp) in ev.all().iter().enumerate() {
        let cell = grid.cells()[p / nq];
        for m in 0..components {
            let mut val = 0.0;
            let mut g = [0.0; 2];
            for a in 0..4 {
                let x = v[cell[a] * components + m];
                val += x * qp.shape[a];
                g[0] += x * qp.grads[a][0];
                g[1] += x * qp.grads[a][1];
            }
            l2 += qp.weight * val * val;
            grad += qp.weight * (g[0] * g[0] + g[1] * g[1]);
        }
    }
    (l2.sqrt(), (l2 + grad).sqrt())
}

/// Solution of one cycle at the evaluation time.
#[derive(Debug, Clone)]
pub struct CycleSolution {
    pub grid: Arc<StructuredGrid>,
    pub u: Vec<f64>,
    pub c: Vec<f64>,
    pub cell_solves: usize,
}

/// Runs cycles `0..=max_cycle` on `(−1/2, 1/2)^2` and differences consecutive
/// solutions at `t_eval` on the finer grid.
pub fn run_convergence(
    solver: &Arc<DiffusionCellSolver>,
    base: &ProblemData,
    variant: ProblemVariant,
    max_cycle: usize,
    t_eval: f64,
    cache: CacheOptions,
    mut on_cycle: impl FnMut(&ConvergenceRecord, &CycleSolution),
) -> Result<Vec<ConvergenceRecord>> {
    if max_cycle < 2 {
        return Err(Error::InvalidInput(format!("a convergence study needs at least 3 cycles, max_cycle = {max_cycle}")));
    }
    let data = study_data(variant, base);
    let mut records: Vec<ConvergenceRecord> = Vec::new();
    let mut prev: Option<CycleSolution> = None;
    for cycle in 0..=max_cycle {
        let grid = Arc::new(classify_boundary(&build_macro_grid([-0.5, -0.5], [0.5, 0.5], cycle as u32)?, variant)?);
        let mut sim = Simulation::new(grid.clone(), solver.clone(), data.clone(), cache)?;
        let out = sim.run(t_eval, |_, _, _| Ok(())).map_err(|e| e.with_context(format!("convergence cycle {cycle}")))?;
        let sol = CycleSolution { grid: grid.clone(), u: out.final_state.u, c: out.final_state.c, cell_solves: out.cell_solves };
        let mut rec = ConvergenceRecord {
            cycle,
            cells: grid.num_cells(),
            h: grid.h(),
            u_l2: None,
            u_h1: None,
            c_l2: None,
            c_h1: None,
            eoc_u_l2: None,
            eoc_u_h1: None,
            eoc_c_l2: None,
            eoc_c_h1: None,
        };
        if let Some(p) = &prev {
            let asm = sim.assembler();
            let du: Vec<f64> = prolongate(&p.grid, &p.u, 2, &grid)?.iter().zip(&sol.u).map(|(a, b)| a - b).collect();
            let dc: Vec<f64> = prolongate(&p.grid, &p.c, 1, &grid)?.iter().zip(&sol.c).map(|(a, b)| a - b).collect();
            let (ul2, uh1) = norms(asm, &du, 2);
            let (cl2, ch1) = norms(asm, &dc, 1);
            rec.u_l2 = Some(ul2);
            rec.u_h1 = Some(uh1);
            rec.c_l2 = Some(cl2);
            rec.c_h1 = Some(ch1);
            if let Some(last) = records.last() {
                let order = |a: Option<f64>, b: f64| a.map(|a| eoc(a, b));
                rec.eoc_u_l2 = order(last.u_l2, ul2);
                rec.eoc_u_h1 = order(last.u_h1, uh1);
                rec.eoc_c_l2 = order(last.c_l2, cl2);
                rec.eoc_c_h1 = order(last.c_h1, ch1);
            }
        }
        info!(
            "cycle {cycle}: {} cells, {} cell solves, c L2 error {:?}, EOC {:?}",
            rec.cells, sol.cell_solves, rec.c_l2, rec.eoc_c_l2
        );
        on_cycle(&rec, &sol);
        records.push(rec);
        prev = Some(sol);
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    Amplitude,
    Frequency,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Amplitude => "amplitude",
            SweepParameter::Frequency => "frequency",
        }
    }

    /// Copy of `base` with this parameter set to `value`.
    pub fn apply(self, base: &ProblemData, value: f64) -> ProblemData {
        let mut d = base.clone();
        match self {
            SweepParameter::Amplitude => d.h.amplitude = value,
            SweepParameter::Frequency => d.h.frequency = value,
        }
        d
    }
}

/// `M(t)` series of one sweep run; `error` is set if the run failed.
#[derive(Debug)]
pub struct SweepRecord {
    pub parameter: SweepParameter,
    pub value: f64,
    pub series: Vec<(f64, f64)>,
    pub error: Option<Error>,
}

/// One full run per value, in parallel; records come back sorted by value.
/// A failing run is reported in its record and does not stop the others.
pub fn run_sensitivity(
    solver: &Arc<DiffusionCellSolver>,
    grid: &Arc<StructuredGrid>,
    base: &ProblemData,
    parameter: SweepParameter,
    values: &[f64],
    t_end: f64,
    cache: CacheOptions,
) -> Vec<SweepRecord> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .par_iter()
        .map(|&value| {
            let data = parameter.apply(base, value);
            let result = Simulation::new(grid.clone(), solver.clone(), data, cache).and_then(|mut sim| sim.run(t_end, |_, _, _| Ok(())));
            match result {
                Ok(out) => SweepRecord { parameter, value, series: out.observables.iter().map(|o| (o.t, o.mass)).collect(), error: None },
                Err(e) => SweepRecord { parameter, value, series: Vec::new(), error: Some(e) },
            }
        })
        .collect()
}
