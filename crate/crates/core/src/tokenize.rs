//! Patch tokens: nearest-landmark partition of the vertices and the radius
//! graph over patch centers.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point3};
use crate::landmarks::LandmarkSet;
use crate::nn::{Tape, Var};

/// Vertex-to-patch labels with per-patch centers and sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchAssignment {
    labels: Vec<usize>,
    centers: Vec<Point3>,
    sizes: Vec<usize>,
}

impl PatchAssignment {
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn centers(&self) -> &[Point3] {
        &self.centers
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_patches(&self) -> usize {
        self.centers.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.labels.len()
    }
}

/// Labels every vertex with its nearest landmark (ties to the lowest ordinal).
/// Patch centers are the landmark positions.
pub fn assign_patches(vertices: &[Point3], landmarks: &LandmarkSet) -> Result<PatchAssignment> {
    if landmarks.is_empty() {
        return Err(Error::Empty("landmark set"));
    }
    let centers = landmarks.positions().to_vec();
    let mut labels: Vec<usize> = vertices
        .iter()
        .map(|v| {
            let mut best = 0;
            let mut best_d = geom::dist2(v, &centers[0]);
            for (s, c) in centers.iter().enumerate().skip(1) {
                let d = geom::dist2(v, c);
                if d < best_d {
                    best = s;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    for (s, &v) in landmarks.indices().iter().enumerate() {
        if v >= labels.len() {
            return Err(Error::LandmarkMismatch {
                index: v,
                n_vertices: labels.len(),
            });
        }
        labels[v] = s;
    }
    let mut sizes = vec![0usize; centers.len()];
    for &l in &labels {
        sizes[l] += 1;
    }
    Ok(PatchAssignment { labels, centers, sizes })
}

/// Mean of node features per patch, recorded on the tape.
pub fn pool_patch_features<'a>(tape: &mut Tape<'a>, features: Var, assignment: &'a PatchAssignment) -> Result<Var> {
    tape.segment_mean(features, &assignment.labels, &assignment.sizes)
}

/// Directed edge list over patch centers: `(source → target)` for every pair
/// within the radius, both directions, plus a self-loop per node.
/// Sorted by `(target, source)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusGraph {
    n_nodes: usize,
    sources: Vec<usize>,
    targets: Vec<usize>,
}

impl RadiusGraph {
    /// Builds a graph from explicit edges, sorting them by (target, source).
    pub fn from_edges(n_nodes: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(s, t)) = edges.iter().find(|(s, t)| *s >= n_nodes || *t >= n_nodes) {
            return Err(Error::ShapeMismatch(alloc::format!(
                "edge ({s}, {t}) outside {n_nodes} nodes"
            )));
        }
        edges.sort_by_key(|&(s, t)| (t, s));
        edges.dedup();
        Ok(Self {
            n_nodes,
            sources: edges.iter().map(|e| e.0).collect(),
            targets: edges.iter().map(|e| e.1).collect(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.sources.len()
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// `(source, target)` pairs.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sources.iter().copied().zip(self.targets.iter().copied())
    }

    /// Fails with the first node that has no incoming edge.
    pub fn check_incoming(&self) -> Result<()> {
        let mut has = vec![false; self.n_nodes];
        for &t in &self.targets {
            has[t] = true;
        }
        match has.iter().position(|h| !h) {
            Some(node) => Err(Error::IsolatedToken(node)),
            None => Ok(()),
        }
    }

    /// Offsets `p_source − p_target` per edge, row-major `E × 3`.
    pub fn relative_positions(&self, centers: &[Point3]) -> Vec<f64> {
        self.edges()
            .flat_map(|(s, t)| geom::sub(&centers[s], &centers[t]))
            .collect()
    }
}

/// Connects centers within Euclidean distance `radius` (inclusive), with self-loops.
pub fn build_radius_graph(centers: &[Point3], radius: f64) -> Result<RadiusGraph> {
    if !(radius > 0.0) {
        return Err(Error::InvalidConfig(alloc::format!(
            "radius must be positive, got {radius}"
        )));
    }
    let r2 = radius * radius;
    let mut edges = Vec::new();
    for (t, ct) in centers.iter().enumerate() {
        for (s, cs) in centers.iter().enumerate() {
            if s == t || geom::dist2(cs, ct) <= r2 {
                edges.push((s, t));
            }
        }
    }
    RadiusGraph::from_edges(centers.len(), edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::LandmarkMethod;
    use crate::nn::Matrix;

    #[test]
    fn single_landmark_takes_everything() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let set = LandmarkSet::from_indices(&pts, vec![1], LandmarkMethod::Fps, 0).unwrap();
        let a = assign_patches(&pts, &set).unwrap();
        assert_eq!(a.labels(), &[0, 0, 0]);
        assert_eq!(a.sizes(), &[3]);
        assert_eq!(a.centers(), &[[1.0, 0.0, 0.0]]);
    }

    #[test]
    fn ties_go_to_lowest_ordinal() {
        // vertex 0 is equidistant from landmark ordinals 0 and 1 (vertices 2 and 1).
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [5.0, 0.0, 0.0]];
        let set = LandmarkSet::from_indices(&pts, vec![3, 2, 1], LandmarkMethod::Fps, 0).unwrap();
        let a = assign_patches(&pts, &set).unwrap();
        assert_eq!(a.labels()[0], 1);
        assert_eq!(a.labels(), &[1, 2, 1, 0]);
        assert_eq!(a.sizes().iter().sum::<usize>(), 4);
    }

    #[test]
    fn radius_graph_examples() {
        let near = build_radius_graph(&[[0.0; 3], [0.4, 0.0, 0.0]], 0.5).unwrap();
        assert_eq!(near.edges().collect::<Vec<_>>(), vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
        let far = build_radius_graph(&[[0.0; 3], [0.6, 0.0, 0.0]], 0.5).unwrap();
        assert_eq!(far.edges().collect::<Vec<_>>(), vec![(0, 0), (1, 1)]);
        far.check_incoming().unwrap();
        assert!(build_radius_graph(&[[0.0; 3]], 0.0).is_err());
    }

    #[test]
    fn isolated_token_detected() {
        let g = RadiusGraph::from_edges(2, vec![(0, 0)]).unwrap();
        assert_eq!(g.check_incoming(), Err(Error::IsolatedToken(1)));
    }

    #[test]
    fn pooling_mean() {
        let pts = vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [5.0, 0.0, 0.0]];
        let set = LandmarkSet::from_indices(&pts, vec![0, 2], LandmarkMethod::Fps, 0).unwrap();
        let a = assign_patches(&pts, &set).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[&[2.0, 1.0], &[4.0, 1.0], &[7.0, 7.0]]));
        let pooled = pool_patch_features(&mut tape, x, &a).unwrap();
        assert_eq!(tape.value(pooled).data(), &[3.0, 1.0, 7.0, 7.0]);
    }
}
