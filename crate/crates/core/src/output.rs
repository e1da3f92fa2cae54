//! Field and table writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mesh::HierMesh;
use crate::reference::Vec2;

/// Cell fields at one time level.
#[derive(Debug, Clone)]
pub struct CellFields<'a> {
    pub t: f64,
    pub pressure: &'a DVector<f64>,
    /// Velocity at element centroids.
    pub velocity: &'a [Vec2],
}

/// Legacy VTK unstructured grid, ASCII, one point triple per element.
pub fn vtk_string(mesh: &HierMesh, fields: &CellFields) -> String {
    let ne = mesh.num_elements();
    let mut s = String::new();
    writeln!(s, "# vtk DataFile Version 3.0").unwrap();
    writeln!(s, "pressure and velocity at t = {:.12e}", fields.t).unwrap();
    writeln!(s, "ASCII\nDATASET UNSTRUCTURED_GRID").unwrap();
    writeln!(s, "POINTS {} double", 3 * ne).unwrap();
    for e in 0..ne {
        for v in mesh.element_vertices(e) {
            writeln!(s, "{:.15e} {:.15e} 0", v.x, v.y).unwrap();
        }
    }
    writeln!(s, "CELLS {} {}", ne, 4 * ne).unwrap();
    for e in 0..ne {
        writeln!(s, "3 {} {} {}", 3 * e, 3 * e + 1, 3 * e + 2).unwrap();
    }
    writeln!(s, "CELL_TYPES {ne}").unwrap();
    for _ in 0..ne {
        s.push_str("5\n");
    }
    writeln!(s, "CELL_DATA {ne}").unwrap();
    writeln!(s, "SCALARS subdomain int 1\nLOOKUP_TABLE default").unwrap();
    for e in 0..ne {
        writeln!(s, "{}", mesh.element_subdomain(e)).unwrap();
    }
    writeln!(s, "SCALARS pressure double 1\nLOOKUP_TABLE default").unwrap();
    for p in fields.pressure.iter() {
        writeln!(s, "{p:.15e}").unwrap();
    }
    writeln!(s, "VECTORS velocity double").unwrap();
    for u in fields.velocity {
        writeln!(s, "{:.15e} {:.15e} 0", u.x, u.y).unwrap();
    }
    s
}

pub fn csv_string(mesh: &HierMesh, fields: &CellFields) -> String {
    let mut s = String::from("element,subdomain,cx,cy,area,pressure,ux,uy\n");
    for e in 0..mesh.num_elements() {
        let c = mesh.element_centroid(e);
        let u = fields.velocity[e];
        writeln!(
            s,
            "{e},{},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}",
            mesh.element_subdomain(e),
            c.x,
            c.y,
            mesh.element_area(e),
            fields.pressure[e],
            u.x,
            u.y
        )
        .unwrap();
    }
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Five significant digits in scientific notation.
pub fn sig5(v: f64) -> String {
    format!("{v:.4e}")
}
