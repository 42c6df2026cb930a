//! CSV files, their schema description, and the effective-tensor table.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::macro_sim::Observables;
use crate::studies::{ConvergenceRecord, SweepRecord};
use crate::tensor::{Mat2, Tensor4Sym};

pub const OBSERVABLES_HEADER: &str = "t,mass,min_c,max_c,max_abs_u";
pub const CONVERGENCE_HEADER: &str = "cycle,cells,h,u_l2,u_h1,c_l2,c_h1,eoc_u_l2,eoc_u_h1,eoc_c_l2,eoc_c_h1";
pub const SWEEP_HEADER: &str = "param_value,t,M";

/// Nine significant digits in scientific notation.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.8e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_else(|| "-".into())
}

/// Six significant digits, trailing zeros dropped; scientific below 1e-4.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    if x.abs() < 1e-4 || x.abs() >= 1e6 {
        return format!("{x:.5e}");
    }
    let decimals = (5 - x.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn observables_csv(rows: &[Observables]) -> String {
    let mut s = format!("{OBSERVABLES_HEADER}\n");
    for o in rows {
        let _ = writeln!(s, "{},{},{},{},{}", fmt_num(o.t), fmt_num(o.mass), fmt_num(o.min_c), fmt_num(o.max_c), fmt_num(o.max_abs_u));
    }
    s
}

/// Missing errors and orders are written as `-`.
pub fn convergence_csv(rows: &[ConvergenceRecord]) -> String {
    let mut s = format!("{CONVERGENCE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.cycle,
            r.cells,
            fmt_num(r.h),
            fmt_opt(r.u_l2),
            fmt_opt(r.u_h1),
            fmt_opt(r.c_l2),
            fmt_opt(r.c_h1),
            fmt_opt(r.eoc_u_l2),
            fmt_opt(r.eoc_u_h1),
            fmt_opt(r.eoc_c_l2),
            fmt_opt(r.eoc_c_h1)
        );
    }
    s
}

/// Long format, one row per run and time step. Failed runs contribute no rows.
pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in records {
        for (t, m) in &r.series {
            let _ = writeln!(s, "{},{},{}", fmt_num(r.value), fmt_num(*t), fmt_num(*m));
        }
    }
    s
}

pub fn schema_text() -> String {
    format!(
        "Numbers are written in scientific notation with 9 significant digits.\n\
         \n\
         observables.csv: one row per time step\n\
         columns: {OBSERVABLES_HEADER}\n\
         \x20 t          time\n\
         \x20 mass       integral of c J* over the reference domain\n\
         \x20 min_c      smallest nodal concentration\n\
         \x20 max_c      largest nodal concentration\n\
         \x20 max_abs_u  largest nodal displacement magnitude\n\
         \n\
         convergence.csv: one row per refinement cycle\n\
         columns: {CONVERGENCE_HEADER}\n\
         \x20 cycle      refinement level of the macro grid\n\
         \x20 cells      number of macro cells\n\
         \x20 h          cell diagonal\n\
         \x20 u_l2, u_h1, c_l2, c_h1          norm of the difference to the previous cycle\n\
         \x20 eoc_u_l2, eoc_u_h1, eoc_c_l2, eoc_c_h1  log2 of successive error ratios\n\
         \x20 '-' marks values that are not defined for the cycle\n\
         \n\
         sweep_<param>.csv: long format, one row per run and time step\n\
         columns: {SWEEP_HEADER}\n\
         \x20 param_value  value of the swept parameter\n\
         \x20 t            time\n\
         \x20 M            mass observable\n"
    )
}

/// Rows `i j k l  A_ijkl  A*_ijkl` followed by rows `i j  D̂_ij  D*_ij`,
/// indices starting at 1.
pub fn tensor_table(a: &Tensor4Sym, a_star: &Tensor4Sym, d_hat: &Mat2, d_star: &Mat2, j_star: f64) -> String {
    let mut s = String::from("# i j k l  A  A*\n");
    for ([i, j, k, l], v) in a_star.iter() {
        let _ = writeln!(s, "{} {} {} {}  {}  {}", i + 1, j + 1, k + 1, l + 1, fmt_sig6(a.get(i, j, k, l)), fmt_sig6(v));
    }
    s.push_str("# i j  D^  D*\n");
    for i in 0..2 {
        for j in 0..2 {
            let _ = writeln!(s, "{} {}  {}  {}", i + 1, j + 1, fmt_sig6(d_hat[(i, j)]), fmt_sig6(d_star[(i, j)]));
        }
    }
    let _ = writeln!(s, "# J*  {}", fmt_sig6(j_star));
    s
}

pub fn write_observables(path: &Path, rows: &[Observables]) -> Result<()> {
    write_file(path, &observables_csv(rows))
}

pub fn write_convergence(path: &Path, rows: &[ConvergenceRecord]) -> Result<()> {
    write_file(path, &convergence_csv(rows))
}

pub fn write_sweep(path: &Path, records: &[SweepRecord]) -> Result<()> {
    write_file(path, &sweep_csv(records))
}

pub fn write_schema(path: &Path) -> Result<()> {
    write_file(path, &schema_text())
}

pub fn write_tensor_table(path: &Path, a: &Tensor4Sym, a_star: &Tensor4Sym, d_hat: &Mat2, d_star: &Mat2, j_star: f64) -> Result<()> {
    write_file(path, &tensor_table(a, a_star, d_hat, d_star, j_star))
}
