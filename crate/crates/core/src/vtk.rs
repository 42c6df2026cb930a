//! Legacy-VTK ASCII output of quadrilateral grids.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::StructuredGrid;

const VTK_QUAD: u8 = 9;

/// Nodal or element data; vectors are stored interleaved with two components.
#[derive(Debug, Clone, Copy)]
pub enum Field<'a> {
    Scalar(&'a [f64]),
    Vector(&'a [f64]),
}

impl Field<'_> {
    fn entries(&self) -> usize {
        match self {
            Field::Scalar(v) => v.len(),
            Field::Vector(v) => v.len() / 2,
        }
    }
}

fn write_block(out: &mut String, fields: &[(&str, Field)], count: usize, what: &str) -> Result<()> {
    for (name, field) in fields {
        let ok = match field {
            Field::Scalar(v) => v.len() == count,
            Field::Vector(v) => v.len() == 2 * count,
        };
        if !ok || name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::InvalidInput(format!(
                "{what} field `{name}` has {} entries for {count} {what}s (or an invalid name)",
                field.entries()
            )));
        }
        match field {
            Field::Scalar(v) => {
                let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for x in v.iter() {
                    let _ = writeln!(out, "{x}");
                }
            }
            Field::Vector(v) => {
                let _ = writeln!(out, "VECTORS {name} double");
                for p in v.chunks_exact(2) {
                    let _ = writeln!(out, "{} {} 0", p[0], p[1]);
                }
            }
        }
    }
    Ok(())
}

/// Renders the grid and data as a legacy unstructured grid. Numbers use
/// the shortest round-trip representation, so equal input gives equal bytes.
pub fn render_vtk(grid: &StructuredGrid, title: &str, point_data: &[(&str, Field)], cell_data: &[(&str, Field)]) -> Result<String> {
    let nn = grid.num_nodes();
    let nc = grid.num_cells();
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0\n{}\nASCII\nDATASET UNSTRUCTURED_GRID", title.replace('\n', " "));
    let _ = writeln!(out, "POINTS {nn} double");
    for x in grid.vertices() {
        let _ = writeln!(out, "{} {} 0", x[0], x[1]);
    }
    let _ = writeln!(out, "CELLS {nc} {}", 5 * nc);
    for c in grid.cells() {
        let _ = writeln!(out, "4 {} {} {} {}", c[0], c[1], c[2], c[3]);
    }
    let _ = writeln!(out, "CELL_TYPES {nc}");
    for _ in 0..nc {
        let _ = writeln!(out, "{VTK_QUAD}");
    }
    if !point_data.is_empty() {
        let _ = writeln!(out, "POINT_DATA {nn}");
        write_block(&mut out, point_data, nn, "point")?;
    }
    if !cell_data.is_empty() {
        let _ = writeln!(out, "CELL_DATA {nc}");
        write_block(&mut out, cell_data, nc, "cell")?;
    }
    Ok(out)
}

pub fn write_vtk(path: &Path, grid: &StructuredGrid, title: &str, point_data: &[(&str, Field)], cell_data: &[(&str, Field)]) -> Result<()> {
    let text = render_vtk(grid, title, point_data, cell_data)?;
    std::fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}
