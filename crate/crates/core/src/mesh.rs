//! Tetrahedral meshes, per-vertex fields, orientation repair and normalization.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point3};

/// Volumetric mesh of tetrahedra over a shared vertex array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetMesh {
    vertices: Vec<Point3>,
    tets: Vec<[usize; 4]>,
}

impl TetMesh {
    /// Builds a mesh, checking sizes, index ranges, repeated vertices and finiteness.
    /// Orientation is not checked here; see [`validate_and_orient`].
    pub fn new(vertices: Vec<Point3>, tets: Vec<[usize; 4]>) -> Result<Self> {
        if vertices.len() < 4 || tets.is_empty() {
            return Err(Error::MeshTooSmall {
                n_vertices: vertices.len(),
                n_tets: tets.len(),
            });
        }
        for (v, p) in vertices.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFiniteVertex { vertex: v });
            }
        }
        let n = vertices.len();
        for (t, tet) in tets.iter().enumerate() {
            for (a, &index) in tet.iter().enumerate() {
                if index >= n {
                    return Err(Error::IndexOutOfRange {
                        tet: t,
                        index,
                        n_vertices: n,
                    });
                }
                if tet[..a].contains(&index) {
                    return Err(Error::RepeatedVertex { tet: t, vertex: index });
                }
            }
        }
        Ok(Self { vertices, tets })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn tet_points(&self, t: usize) -> [Point3; 4] {
        let tet = &self.tets[t];
        [
            self.vertices[tet[0]],
            self.vertices[tet[1]],
            self.vertices[tet[2]],
            self.vertices[tet[3]],
        ]
    }

    pub fn signed_volume(&self, t: usize) -> f64 {
        geom::signed_volume(&self.tet_points(t))
    }

    /// Total (signed) volume.
    pub fn volume(&self) -> f64 {
        (0..self.n_tets()).map(|t| self.signed_volume(t)).sum()
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.vertices {
            for c in 0..3 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        geom::dist(&lo, &hi)
    }

    /// Returns a copy with replaced vertex coordinates (same connectivity).
    pub fn with_vertices(&self, vertices: Vec<Point3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{} vertices for a mesh of {}",
                vertices.len(),
                self.vertices.len()
            )));
        }
        Self::new(vertices, self.tets.clone())
    }

    /// Relabels vertices: new vertex `perm[v]` is old vertex `v`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_vertices();
        if perm.len() != n {
            return Err(Error::ShapeMismatch(alloc::format!(
                "permutation of length {} for {n} vertices",
                perm.len()
            )));
        }
        let mut vertices = alloc::vec![[0.0; 3]; n];
        for (old, &new) in perm.iter().enumerate() {
            vertices[new] = self.vertices[old];
        }
        let tets = self
            .tets
            .iter()
            .map(|t| [perm[t[0]], perm[t[1]], perm[t[2]], perm[t[3]]])
            .collect();
        Self::new(vertices, tets)
    }

    /// True when every vertex is reachable from vertex 0 through shared tets.
    pub fn is_connected(&self) -> bool {
        let n = self.n_vertices();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for tet in &self.tets {
            for &v in &tet[1..] {
                let a = find(&mut parent, tet[0]);
                let b = find(&mut parent, v);
                if a != b {
                    parent[a] = b;
                }
            }
        }
        let root = find(&mut parent, 0);
        (0..n).all(|v| find(&mut parent, v) == root)
    }

    /// Flags vertices lying on a face that belongs to exactly one tet.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut faces: alloc::collections::BTreeMap<[usize; 3], u32> = alloc::collections::BTreeMap::new();
        for t in &self.tets {
            for skip in 0..4 {
                let mut f = [0; 3];
                let mut k = 0;
                for (j, &v) in t.iter().enumerate() {
                    if j != skip {
                        f[k] = v;
                        k += 1;
                    }
                }
                f.sort_unstable();
                *faces.entry(f).or_default() += 1;
            }
        }
        let mut out = alloc::vec![false; self.n_vertices()];
        for (f, _) in faces.iter().filter(|(_, &c)| c == 1) {
            for &v in f {
                out[v] = true;
            }
        }
        out
    }
}

/// One scalar or fixed-width vector per vertex, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexField {
    values: Vec<f64>,
    width: usize,
}

impl VertexField {
    pub fn new(values: Vec<f64>, width: usize) -> Result<Self> {
        if width == 0 || values.len() % width != 0 {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{} values do not split into rows of width {width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vertex field"));
        }
        Ok(Self { values, width })
    }

    pub fn scalar(values: Vec<f64>) -> Result<Self> {
        Self::new(values, 1)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.values[v * self.width..(v + 1) * self.width]
    }

    /// Checks the field belongs to `mesh`.
    pub fn check_against(&self, mesh: &TetMesh) -> Result<()> {
        if self.len() != mesh.n_vertices() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "field has {} rows, mesh has {} vertices",
                self.len(),
                mesh.n_vertices()
            )));
        }
        Ok(())
    }
}

/// Quality summary produced by [`validate_and_orient`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshReport {
    pub min_volume: f64,
    pub max_volume: f64,
    /// Smallest interior dihedral angle, radians.
    pub min_dihedral: f64,
    pub flipped: usize,
    pub duplicates_removed: usize,
}

/// Relative degeneracy threshold: |V| below this times diag³ is rejected.
pub const DEGENERACY_RATIO: f64 = 1e-12;

/// Reorders every tet to positive signed volume and removes duplicate tets.
pub fn validate_and_orient(mesh: &TetMesh) -> Result<(TetMesh, MeshReport)> {
    let diag = mesh.bounding_box_diagonal();
    let threshold = DEGENERACY_RATIO * diag * diag * diag;
    let mut seen = BTreeSet::new();
    let mut tets = Vec::with_capacity(mesh.n_tets());
    let mut report = MeshReport {
        min_volume: f64::INFINITY,
        max_volume: 0.0,
        min_dihedral: f64::INFINITY,
        flipped: 0,
        duplicates_removed: 0,
    };
    for (t, tet) in mesh.tets().iter().enumerate() {
        let volume = mesh.signed_volume(t);
        if volume.abs() < threshold || !volume.is_finite() {
            return Err(Error::DegenerateTet { tet: t, volume });
        }
        let mut key = *tet;
        key.sort_unstable();
        if !seen.insert(key) {
            report.duplicates_removed += 1;
            continue;
        }
        let oriented = if volume < 0.0 {
            report.flipped += 1;
            [tet[0], tet[1], tet[3], tet[2]]
        } else {
            *tet
        };
        report.min_volume = report.min_volume.min(volume.abs());
        report.max_volume = report.max_volume.max(volume.abs());
        let pts = [
            mesh.vertices[oriented[0]],
            mesh.vertices[oriented[1]],
            mesh.vertices[oriented[2]],
            mesh.vertices[oriented[3]],
        ];
        for angle in geom::dihedral_angles(&pts) {
            report.min_dihedral = report.min_dihedral.min(angle);
        }
        tets.push(oriented);
    }
    Ok((TetMesh::new(mesh.vertices.clone(), tets)?, report))
}

/// Translation and scale applied by [`normalize_mesh`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub centroid: Point3,
    pub scale: f64,
}

impl ScaleRecord {
    /// Maps a normalized point back to original coordinates.
    pub fn denormalize(&self, p: &Point3) -> Point3 {
        geom::add(&geom::scale(p, self.scale), &self.centroid)
    }
}

/// Centers points on their centroid and scales the farthest point to unit distance.
pub fn normalize_points(points: &[Point3]) -> Result<(Vec<Point3>, ScaleRecord)> {
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    let n = points.len() as f64;
    let mut centroid = [0.0; 3];
    for p in points {
        for c in 0..3 {
            centroid[c] += p[c];
        }
    }
    for c in &mut centroid {
        *c /= n;
    }
    let scale = points.iter().map(|p| geom::dist(p, &centroid)).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::CoincidentVertices);
    }
    let out = points
        .iter()
        .map(|p| geom::scale(&geom::sub(p, &centroid), 1.0 / scale))
        .collect();
    Ok((out, ScaleRecord { centroid, scale }))
}

pub fn normalize_mesh(mesh: &TetMesh) -> Result<(TetMesh, ScaleRecord)> {
    let (vertices, record) = normalize_points(mesh.vertices())?;
    Ok((mesh.with_vertices(vertices)?, record))
}
