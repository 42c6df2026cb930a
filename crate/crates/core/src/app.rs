//! Runs one configured job and writes its files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};

use crate::config::{Mode, RunConfig, SweepName};
use crate::diffusion::{CacheOptions, DiffusionCellSolver, EffectiveFieldState, EffectivePointValue};
use crate::elasticity::{homogenize_elasticity, CellDomain, ElasticHomogenization};
use crate::error::{Error, Result};
use crate::kinematics::MacroGradientSample;
use crate::macro_sim::{push_forward, MacroState, ProblemData, Simulation};
use crate::mesh::{build_cell_grid, build_macro_grid, classify_boundary, ProblemVariant, StructuredGrid};
use crate::output;
use crate::studies::{run_convergence, run_sensitivity, study_data, ConvergenceRecord, SweepRecord};
use crate::tensor::{Mat2, Tensor4Sym};
use crate::vtk::{write_vtk, Field};

/// Process exit status for an error: 2 configuration, 3 solver,
/// 4 degenerate deformation, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config { .. } => 2,
        Error::Solve { .. } | Error::NotPositiveDefiniteCoefficient { .. } | Error::NonPositiveWeight { .. } | Error::InconsistentConstraint { .. } => 3,
        Error::DegenerateDeformation(_) => 4,
        _ => 1,
    }
}

/// Homogenized coefficients of the undeformed cell.
pub struct CellSetup {
    pub a: Tensor4Sym,
    pub homogenization: ElasticHomogenization,
    pub solver: Arc<DiffusionCellSolver>,
    pub undeformed: EffectivePointValue,
    pub solid_fraction: f64,
}

pub fn prepare_cells(config: &RunConfig, refinement: u32) -> Result<CellSetup> {
    let p = &config.physics;
    let a = Tensor4Sym::isotropic(p.lambda, p.mu);
    let domain = CellDomain::new(Arc::new(build_cell_grid(refinement)?))?;
    let homogenization = homogenize_elasticity(&domain, &a)?;
    info!("cell r = {refinement}: A* asymmetry {:.3e}", homogenization.asymmetry);
    let d_hat = Mat2::new(p.d11, p.d12, p.d21, p.d22);
    let solver = Arc::new(DiffusionCellSolver::new(Arc::new(homogenization.chi.clone()), d_hat, p.j_min)?);
    let undeformed = solver.effective_point(&MacroGradientSample::new(Mat2::zeros()))?;
    let solid_fraction = if p.solid_fraction > 0.0 { p.solid_fraction } else { domain.area() };
    Ok(CellSetup { a, homogenization, solver, undeformed, solid_fraction })
}

/// Macroscopic data for `config` with the boundary layout of its variant.
pub fn problem_data(config: &RunConfig, cells: &CellSetup) -> ProblemData {
    let p = &config.physics;
    let mut d = ProblemData::model(cells.homogenization.a_star, Mat2::new(p.d11, p.d12, p.d21, p.d22), cells.solid_fraction);
    d.h.amplitude = p.amplitude;
    d.h.frequency = p.frequency;
    d.theta = p.theta;
    d.dt = p.dt;
    study_data(p.variant.into(), &d)
}

pub fn macro_grid(config: &RunConfig) -> Result<Arc<StructuredGrid>> {
    let g = &config.geometry;
    let variant: ProblemVariant = config.physics.variant.into();
    Ok(Arc::new(classify_boundary(&build_macro_grid(g.lower, g.upper, g.macro_refinement)?, variant)?))
}

pub fn cache_options(config: &RunConfig) -> CacheOptions {
    CacheOptions { enabled: config.cache.enabled, quantization: config.cache.quantization, ..CacheOptions::default() }
}

/// Files written and headline numbers of a finished job.
#[derive(Debug, Default)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub convergence: Vec<ConvergenceRecord>,
    pub sweep: Vec<SweepRecord>,
}

fn write_cell_outputs(dir: &Path, config: &RunConfig, cells: &CellSetup, summary: &mut RunSummary) -> Result<()> {
    let p = &config.physics;
    let path = dir.join("tensors.txt");
    output::write_tensor_table(
        &path,
        &cells.a,
        &cells.homogenization.a_star,
        &Mat2::new(p.d11, p.d12, p.d21, p.d22),
        &cells.undeformed.d_star,
        cells.undeformed.j_star,
    )?;
    summary.files.push(path);
    Ok(())
}

fn snapshot(dir: &Path, k: usize, sim: &Simulation, state: &MacroState, eff: &EffectiveFieldState) -> Result<Vec<PathBuf>> {
    let grid = sim.grid();
    let nq = sim.assembler().element_values().points_per_element();
    let avg = eff.element_averages(nq);
    let comp = |m: usize| avg.iter().map(|a| a[m]).collect::<Vec<f64>>();
    let (j, d11, d12, d21, d22) = (comp(0), comp(1), comp(2), comp(3), comp(4));
    let cell_data = [
        ("J_star", Field::Scalar(&j)),
        ("D_star_11", Field::Scalar(&d11)),
        ("D_star_12", Field::Scalar(&d12)),
        ("D_star_21", Field::Scalar(&d21)),
        ("D_star_22", Field::Scalar(&d22)),
    ];
    let t = state.t;
    let point_data = [("u", Field::Vector(&state.u)), ("c", Field::Scalar(&state.c))];
    let reference = dir.join(format!("solution_{k:05}.vtk"));
    write_vtk(&reference, grid, &format!("reference t = {t}"), &point_data, &cell_data)?;
    let (warped, cw, _) = push_forward(grid, state);
    let warped_path = dir.join(format!("warped_{k:05}.vtk"));
    write_vtk(&warped_path, &warped, &format!("deformed t = {t}"), &[("c", Field::Scalar(&cw))], &cell_data)?;
    Ok(vec![reference, warped_path])
}

/// Runs the job described by `config`, writing into `config.output.directory`.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let dir = PathBuf::from(&config.output.directory);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
    let mut summary = RunSummary::default();
    let resolved = dir.join("resolved_config");
    std::fs::write(&resolved, config.to_toml())?;
    summary.files.push(resolved);
    let schema = dir.join("schema.txt");
    output::write_schema(&schema)?;
    summary.files.push(schema);

    match config.mode {
        Mode::CellsOnly => {
            let cells = prepare_cells(config, config.geometry.cell_refinement)?;
            write_cell_outputs(&dir, config, &cells, &mut summary)?;
        }
        Mode::Simulate => {
            let cells = prepare_cells(config, config.geometry.cell_refinement)?;
            write_cell_outputs(&dir, config, &cells, &mut summary)?;
            let grid = macro_grid(config)?;
            let data = problem_data(config, &cells);
            let mut sim = Simulation::new(grid, cells.solver.clone(), data, cache_options(config))?;
            let stride = config.output.vtk_stride as usize;
            let mut step = 0usize;
            let mut vtk_files = Vec::new();
            let out = sim.run(config.physics.t_end, |sim, state, eff| {
                if stride > 0 && step.is_multiple_of(stride) {
                    vtk_files.extend(snapshot(&dir, step, sim, state, eff)?);
                }
                step += 1;
                Ok(())
            })?;
            info!("{} cell problems solved", out.cell_solves);
            let path = dir.join("observables.csv");
            output::write_observables(&path, &out.observables)?;
            summary.files.push(path);
            summary.files.extend(vtk_files);
        }
        Mode::Convergence => {
            let cells = prepare_cells(config, config.study.cell_refinement)?;
            let base = problem_data(config, &cells);
            let path = dir.join("convergence.csv");
            let records = run_convergence(
                &cells.solver,
                &base,
                config.physics.variant.into(),
                config.study.max_cycle as usize,
                config.study.t_eval,
                cache_options(config),
                |rec, _| info!("cycle {} done", rec.cycle),
            )?;
            output::write_convergence(&path, &records)?;
            summary.files.push(path);
            summary.convergence = records;
        }
        Mode::Sweep => {
            let cells = prepare_cells(config, config.geometry.cell_refinement)?;
            let base = problem_data(config, &cells);
            let grid = macro_grid(config)?;
            let parameter = config.study.sweep_parameter.into();
            let records = run_sensitivity(
                &cells.solver,
                &grid,
                &base,
                parameter,
                &config.study.sweep_values,
                config.physics.t_end,
                cache_options(config),
            );
            let width = config.geometry.upper[0] - config.geometry.lower[0];
            for r in &records {
                if config.study.sweep_parameter == SweepName::Amplitude {
                    info!("amplitude {}: max lateral extension {:.1}%", r.value, 200.0 * r.value / width);
                }
                if let Some(e) = &r.error {
                    warn!("{} = {} failed: {e}", parameter.name(), r.value);
                }
            }
            let path = dir.join(format!("sweep_{}.csv", parameter.name()));
            output::write_sweep(&path, &records)?;
            summary.files.push(path);
            summary.sweep = records;
            if let Some(pos) = summary.sweep.iter().position(|r| r.error.is_some()) {
                let r = &mut summary.sweep[pos];
                let e = r.error.take().expect("checked");
                return Err(e.with_context(format!("sweep run with {} = {}", parameter.name(), r.value)));
            }
        }
    }
    Ok(summary)
}
