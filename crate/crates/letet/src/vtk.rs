//! Legacy ASCII VTK unstructured grids with one point scalar.

use std::fmt::Write as _;
use std::path::Path;

use letet_core::explain::Heatmap;
use letet_core::mesh::{TetMesh, VertexField};

use crate::error::{io_err, Error, Result};

const VTK_TETRA: u8 = 10;

/// Renders `mesh` with the scalar field `field` named `name`.
pub fn write_vtk_scalar(mesh: &TetMesh, field: &VertexField, name: &str) -> Result<String> {
    field.check_against(mesh)?;
    if field.width() != 1 {
        return Err(Error::Usage(format!(
            "scalar field must have width 1, got {}",
            field.width()
        )));
    }
    if field.values().iter().any(|v| !v.is_finite()) {
        return Err(letet_core::Error::NonFinite("vertex field").into());
    }
    if name.is_empty() || name.contains(char::is_whitespace) {
        return Err(Error::Usage(format!("invalid scalar name '{name}'")));
    }
    let n = mesh.n_vertices();
    let t = mesh.n_tets();
    let mut out = String::with_capacity(64 * (n + t));
    out.push_str("# vtk DataFile Version 3.0\nletet\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {n} float");
    for p in mesh.vertices() {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    let _ = writeln!(out, "CELLS {t} {}", 5 * t);
    for tet in mesh.tets() {
        let _ = writeln!(out, "4 {} {} {} {}", tet[0], tet[1], tet[2], tet[3]);
    }
    let _ = writeln!(out, "CELL_TYPES {t}");
    for _ in 0..t {
        let _ = writeln!(out, "{VTK_TETRA}");
    }
    let _ = writeln!(out, "POINT_DATA {n}");
    let _ = writeln!(out, "SCALARS {name} float 1");
    out.push_str("LOOKUP_TABLE default\n");
    for v in field.values() {
        let _ = writeln!(out, "{v}");
    }
    Ok(out)
}

pub fn save_vtk_scalar(path: &Path, mesh: &TetMesh, field: &VertexField, name: &str) -> Result<()> {
    let text = write_vtk_scalar(mesh, field, name)?;
    std::fs::write(path, text).map_err(io_err(path))
}

/// Writes a Grad-CAM map as the point scalar `gradcam`.
pub fn export_heatmap(path: &Path, mesh: &TetMesh, heatmap: &Heatmap) -> Result<()> {
    let field = VertexField::scalar(heatmap.values.clone())?;
    save_vtk_scalar(path, mesh, &field, "gradcam")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_tet() -> TetMesh {
        TetMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            vec![[0, 1, 2, 3]],
        )
        .unwrap()
    }

    fn section<'a>(text: &'a str, keyword: &str) -> Vec<&'a str> {
        text.lines()
            .skip_while(|l| !l.starts_with(keyword))
            .skip(1)
            .take_while(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit() || c == '-'))
            .collect()
    }

    #[test]
    fn single_tet_cell_types() {
        let f = VertexField::scalar(vec![0.0; 4]).unwrap();
        let text = write_vtk_scalar(&unit_tet(), &f, "gradcam").unwrap();
        assert_eq!(section(&text, "CELL_TYPES"), vec!["10"]);
        assert!(text.contains("SCALARS gradcam float 1\nLOOKUP_TABLE default\n"));
    }

    #[test]
    fn constant_field_lines() {
        let f = VertexField::scalar(vec![1.0; 4]).unwrap();
        let text = write_vtk_scalar(&unit_tet(), &f, "s").unwrap();
        assert_eq!(section(&text, "LOOKUP_TABLE"), vec!["1"; 4]);
    }

    #[test]
    fn rejects_bad_fields() {
        let short = VertexField::scalar(vec![1.0; 3]).unwrap();
        assert!(write_vtk_scalar(&unit_tet(), &short, "s").is_err());
    }
}
