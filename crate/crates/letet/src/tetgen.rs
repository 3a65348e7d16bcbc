//! TetGen `.node` / `.ele` ASCII files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use letet_core::geom::Point3;
use letet_core::mesh::{validate_and_orient, MeshReport, TetMesh};

use crate::error::{io_err, Error, Result};

/// Parsed `.node` contents.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFile {
    pub vertices: Vec<Point3>,
    /// Index of the first point record (0 or 1).
    pub base: usize,
}

/// Data lines with comments stripped, paired with 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let content = line.split('#').next().unwrap_or("");
        let fields: Vec<&str> = content.split_whitespace().collect();
        (!fields.is_empty()).then_some((i + 1, fields))
    })
}

fn parse_usize(field: &str, line: usize, what: &str) -> Result<usize> {
    field
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} '{field}'")))
}

fn parse_header(fields: &[&str], line: usize, names: &[&str]) -> Result<Vec<usize>> {
    if fields.len() < names.len() {
        return Err(Error::parse(line, format!("header needs {} fields", names.len())));
    }
    names
        .iter()
        .zip(fields)
        .map(|(name, f)| parse_usize(f, line, name))
        .collect()
}

/// Reads a `.node` file: header `<#points> <dim> <#attrs> <#markers>`, then
/// `<index> <x> <y> <z> [attrs] [marker]`. The index base is taken from the
/// first record.
pub fn parse_node(text: &str) -> Result<NodeFile> {
    let mut recs = records(text);
    let (hline, header) = recs.next().ok_or_else(|| Error::parse(1, "missing header"))?;
    let h = parse_header(&header, hline, &["point count", "dimension"])?;
    let (count, dim) = (h[0], h[1]);
    if dim != 3 {
        return Err(Error::parse(hline, format!("dimension must be 3, got {dim}")));
    }
    let mut vertices = Vec::with_capacity(count);
    let mut base = 0;
    let mut last_line = hline;
    for (line, fields) in recs {
        last_line = line;
        if vertices.len() == count {
            return Err(Error::parse(
                line,
                format!("count mismatch: header declares {count} points but more records follow"),
            ));
        }
        if fields.len() < 4 {
            return Err(Error::parse(line, "point record needs an index and 3 coordinates"));
        }
        let index = parse_usize(fields[0], line, "point index")?;
        if vertices.is_empty() {
            if index > 1 {
                return Err(Error::parse(
                    line,
                    format!("first point index must be 0 or 1, got {index}"),
                ));
            }
            base = index;
        }
        if index != base + vertices.len() {
            return Err(Error::parse(
                line,
                format!("non-contiguous point index {index}, expected {}", base + vertices.len()),
            ));
        }
        let mut p = [0.0; 3];
        for (c, f) in p.iter_mut().zip(&fields[1..4]) {
            *c = f
                .parse::<f64>()
                .map_err(|_| Error::parse(line, format!("invalid coordinate '{f}'")))?;
            if !c.is_finite() {
                return Err(Error::parse(line, format!("non-finite coordinate '{f}'")));
            }
        }
        vertices.push(p);
    }
    if vertices.len() != count {
        return Err(Error::parse(
            last_line + 1,
            format!(
                "truncated file: count mismatch, header declares {count} points, found {}",
                vertices.len()
            ),
        ));
    }
    Ok(NodeFile { vertices, base })
}

/// Reads an `.ele` file with header `<#tets> <nodes per tet> <#attrs>` and
/// rebases vertex indices to 0 using `base`. Orientation is left as found.
pub fn parse_ele(text: &str, n_vertices: usize, base: usize) -> Result<Vec<[usize; 4]>> {
    let mut recs = records(text);
    let (hline, header) = recs.next().ok_or_else(|| Error::parse(1, "missing header"))?;
    let h = parse_header(&header, hline, &["tet count", "nodes per tet"])?;
    let (count, per) = (h[0], h[1]);
    if per != 4 {
        return Err(Error::parse(
            hline,
            format!("only 4-node tetrahedra are supported, got {per} nodes per tet"),
        ));
    }
    let mut tets = Vec::with_capacity(count);
    let mut first = None;
    let mut last_line = hline;
    for (line, fields) in recs {
        last_line = line;
        if tets.len() == count {
            return Err(Error::parse(
                line,
                format!("count mismatch: header declares {count} tets but more records follow"),
            ));
        }
        if fields.len() < 5 {
            return Err(Error::parse(line, "tet record needs an index and 4 vertex indices"));
        }
        let index = parse_usize(fields[0], line, "tet index")?;
        let start = *first.get_or_insert(index);
        if index != start + tets.len() {
            return Err(Error::parse(line, format!("non-contiguous tet index {index}")));
        }
        let mut tet = [0usize; 4];
        for (slot, f) in tet.iter_mut().zip(&fields[1..5]) {
            let v = parse_usize(f, line, "vertex index")?;
            if v < base || v - base >= n_vertices {
                return Err(Error::parse(
                    line,
                    format!("vertex index out of range: {v} (base {base}, {n_vertices} vertices)"),
                ));
            }
            *slot = v - base;
        }
        tets.push(tet);
    }
    if tets.len() != count {
        return Err(Error::parse(
            last_line + 1,
            format!(
                "truncated file: count mismatch, header declares {count} tets, found {}",
                tets.len()
            ),
        ));
    }
    Ok(tets)
}

/// 0-based `.node` text; coordinates use shortest round-trip formatting.
pub fn write_node(vertices: &[Point3]) -> String {
    let mut out = format!("{} 3 0 0\n", vertices.len());
    for (i, p) in vertices.iter().enumerate() {
        let _ = writeln!(out, "{i} {} {} {}", p[0], p[1], p[2]);
    }
    out
}

/// 0-based `.ele` text.
pub fn write_ele(tets: &[[usize; 4]]) -> String {
    let mut out = format!("{} 4 0\n", tets.len());
    for (i, t) in tets.iter().enumerate() {
        let _ = writeln!(out, "{i} {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    out
}

/// Companion `.ele` path for a `.node` path (or any path stem).
pub fn ele_path(node: &Path) -> PathBuf {
    node.with_extension("ele")
}

/// Reads a `.node`/`.ele` pair, then validates and orients the mesh.
pub fn read_mesh(node: &Path) -> Result<(TetMesh, MeshReport)> {
    let node_text = std::fs::read_to_string(node).map_err(io_err(node))?;
    let parsed = parse_node(&node_text).map_err(|e| Error::format(node, e))?;
    let ele = ele_path(node);
    let ele_text = std::fs::read_to_string(&ele).map_err(io_err(&ele))?;
    let tets = parse_ele(&ele_text, parsed.vertices.len(), parsed.base).map_err(|e| Error::format(&ele, e))?;
    let mesh = TetMesh::new(parsed.vertices, tets)?;
    Ok(validate_and_orient(&mesh)?)
}

/// Writes `<stem>.node` and `<stem>.ele`.
pub fn write_mesh(node: &Path, mesh: &TetMesh) -> Result<()> {
    std::fs::write(node, write_node(mesh.vertices())).map_err(io_err(node))?;
    let ele = ele_path(node);
    std::fs::write(&ele, write_ele(mesh.tets())).map_err(io_err(&ele))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_node() {
        let f = parse_node("1 3 0 0\n0 0 0 0\n").unwrap();
        assert_eq!(f.vertices, vec![[0.0; 3]]);
        assert_eq!(f.base, 0);
    }

    #[test]
    fn one_based_node() {
        let text = "# unit tet\n4 3 0 0\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1 # apex\n";
        let f = parse_node(text).unwrap();
        assert_eq!(f.base, 1);
        assert_eq!(f.vertices.len(), 4);
        let tets = parse_ele("1 4 0\n1 1 2 3 4\n", 4, 1).unwrap();
        assert_eq!(tets, vec![[0, 1, 2, 3]]);
    }

    #[test]
    fn count_mismatch_reports_line() {
        let err = parse_node("2 3 0 0\n0 0 0 0\n1 1 0 0\n2 0 1 0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("count mismatch"), "{msg}");
        assert!(msg.starts_with("line 4"), "{msg}");
    }

    #[test]
    fn bad_dimension_and_coordinates() {
        assert!(parse_node("1 2 0 0\n0 0 0\n")
            .unwrap_err()
            .to_string()
            .contains("dimension"));
        assert!(parse_node("1 3 0 0\n0 0 nan 0\n")
            .unwrap_err()
            .to_string()
            .contains("non-finite"));
        assert!(parse_node("2 3 0 0\n0 0 0 0\n2 0 0 0\n")
            .unwrap_err()
            .to_string()
            .contains("non-contiguous"));
        assert!(parse_node("3 3 0 0\n0 0 0 0\n")
            .unwrap_err()
            .to_string()
            .contains("truncated"));
    }

    #[test]
    fn ele_errors() {
        assert_eq!(parse_ele("1 4 0\n0 0 1 2 3\n", 4, 0).unwrap(), vec![[0, 1, 2, 3]]);
        let err = parse_ele("1 4 0\n0 0 1 2 5\n", 4, 0).unwrap_err().to_string();
        assert!(err.contains("vertex index out of range"), "{err}");
        assert!(parse_ele("1 10 0\n0 0 1 2 3 4 5 6 7 8 9\n", 10, 0).is_err());
        let two = parse_ele("2 4 0\n0 0 1 2 3\n1 1 2 3 4\n", 5, 0).unwrap();
        let mut distinct: Vec<usize> = two.iter().flatten().copied().collect();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!((two.len(), distinct.len()), (2, 5));
    }
}
