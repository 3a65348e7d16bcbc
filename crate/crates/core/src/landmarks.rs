//! Landmark (super node) selection.
//!
//! The geometry-aware selector treats a multi-scale heat-diffusion kernel
//! `k(i, j) = Σ_s Σ_m exp(−λ_m t_s) φ_m(i) φ_m(j)` as a Gaussian-process prior
//! over mesh vertices and greedily picks the vertex with the largest
//! posterior variance given the landmarks chosen so far. The greedy loop is
//! a pivoted Cholesky factorization: each pick adds one column and the
//! running diagonal holds `k(i,i) − k_iS K_SS⁻¹ k_Si` for every vertex.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::eigen::Eigenpairs;
use crate::error::{Error, Result};
use crate::geom::{self, Point3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandmarkMethod {
    GpDiffusion,
    Fps,
}

impl LandmarkMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            LandmarkMethod::GpDiffusion => "gp-diffusion",
            LandmarkMethod::Fps => "fps",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gp-diffusion" => Some(LandmarkMethod::GpDiffusion),
            "fps" => Some(LandmarkMethod::Fps),
            _ => None,
        }
    }
}

/// Selected super nodes, in selection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    indices: Vec<usize>,
    positions: Vec<Point3>,
    method: LandmarkMethod,
    seed: u64,
}

impl LandmarkSet {
    /// Builds a set against the mesh vertices, rederiving positions.
    pub fn from_indices(vertices: &[Point3], indices: Vec<usize>, method: LandmarkMethod, seed: u64) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("landmark set"));
        }
        let mut seen = vec![false; vertices.len()];
        for &i in &indices {
            if i >= vertices.len() {
                return Err(Error::LandmarkMismatch {
                    index: i,
                    n_vertices: vertices.len(),
                });
            }
            if core::mem::replace(&mut seen[i], true) {
                return Err(Error::DuplicateLandmark(i));
            }
        }
        let positions = indices.iter().map(|&i| vertices[i]).collect();
        Ok(Self {
            indices,
            positions,
            method,
            seed,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn method(&self) -> LandmarkMethod {
        self.method
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Same landmarks after relabeling vertices (new index `perm[v]` is old `v`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            indices: self.indices.iter().map(|&i| perm[i]).collect(),
            positions: self.positions.clone(),
            method: self.method,
            seed: self.seed,
        }
    }
}

/// Diffusion times and spectral truncation of the landmark prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionKernelSpec {
    pub scales: Vec<f64>,
    pub n_eigenpairs: usize,
}

impl Default for DiffusionKernelSpec {
    fn default() -> Self {
        Self {
            scales: vec![0.01, 0.1, 1.0],
            n_eigenpairs: 64,
        }
    }
}

impl DiffusionKernelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty()
            || self.scales.iter().any(|t| !(*t > 0.0) || !t.is_finite())
            || self.scales.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidConfig(
                "diffusion scales must be positive and ascending".into(),
            ));
        }
        if self.n_eigenpairs < 2 {
            return Err(Error::InvalidConfig(
                "diffusion kernel needs at least 2 eigenpairs".into(),
            ));
        }
        Ok(())
    }

    /// Per-eigenpair weights `Σ_s exp(−λ_m t_s)` over the truncated spectrum.
    fn weights(&self, eig: &Eigenpairs) -> Vec<f64> {
        let m = self.n_eigenpairs.min(eig.len());
        eig.values[..m]
            .iter()
            .map(|&lambda| self.scales.iter().map(|&t| libm::exp(-lambda * t)).sum())
            .collect()
    }
}

/// Kernel value between vertices `i` and `j`.
pub fn diffusion_kernel_value(i: usize, j: usize, eig: &Eigenpairs, spec: &DiffusionKernelSpec) -> f64 {
    spec.weights(eig)
        .iter()
        .zip(&eig.vectors)
        .map(|(w, phi)| w * phi[i] * phi[j])
        .sum()
}

/// Greedy GP selection with the posterior variance of each pick.
#[derive(Debug, Clone, PartialEq)]
pub struct GpSelection {
    pub landmarks: LandmarkSet,
    /// Posterior variance of each landmark when it was picked.
    pub variances: Vec<f64>,
    /// Posterior variance of every vertex after the last pick.
    pub residual_variances: Vec<f64>,
    /// Diagonal jitter used (0 unless the first attempt hit a singular kernel).
    pub jitter: f64,
}

const SINGULAR_RATIO: f64 = 1e-12;

/// Picks `n` landmarks by maximum posterior variance, ties to the lowest index.
pub fn gp_greedy_select(
    vertices: &[Point3],
    eig: &Eigenpairs,
    spec: &DiffusionKernelSpec,
    n: usize,
) -> Result<GpSelection> {
    spec.validate()?;
    let n_vertices = vertices.len();
    if eig.dim() != n_vertices {
        return Err(Error::ShapeMismatch(alloc::format!(
            "eigenvectors of length {} for {} vertices",
            eig.dim(),
            n_vertices
        )));
    }
    if n == 0 {
        return Err(Error::Empty("landmark count"));
    }
    if n > n_vertices {
        return Err(Error::TooMany {
            requested: n,
            available: n_vertices,
        });
    }
    let weights = spec.weights(eig);
    let diag: Vec<f64> = (0..n_vertices)
        .map(|i| {
            weights
                .iter()
                .zip(&eig.vectors)
                .map(|(w, phi)| w * phi[i] * phi[i])
                .sum()
        })
        .collect();
    let column = |p: usize| -> Vec<f64> {
        let mut col = vec![0.0; n_vertices];
        for (w, phi) in weights.iter().zip(&eig.vectors) {
            let a = w * phi[p];
            for (c, x) in col.iter_mut().zip(phi) {
                *c += a * x;
            }
        }
        col
    };

    match pivoted_greedy(&diag, &column, n, 0.0) {
        Ok((indices, variances, residual)) => Ok(GpSelection {
            landmarks: LandmarkSet::from_indices(vertices, indices, LandmarkMethod::GpDiffusion, 0)?,
            variances,
            residual_variances: residual,
            jitter: 0.0,
        }),
        Err(selected) => {
            let trace: f64 = selected.iter().map(|&i| diag[i]).sum();
            let jitter = 1e-10 * trace / selected.len().max(1) as f64;
            let (indices, variances, residual) =
                pivoted_greedy(&diag, &column, n, jitter).map_err(|s| Error::SingularKernel { selected: s.len() })?;
            Ok(GpSelection {
                landmarks: LandmarkSet::from_indices(vertices, indices, LandmarkMethod::GpDiffusion, 0)?,
                variances,
                residual_variances: residual,
                jitter,
            })
        }
    }
}

type Picks = (Vec<usize>, Vec<f64>, Vec<f64>);

/// Pivoted Cholesky greedy loop. On a numerically singular pivot returns the
/// indices selected so far as the error.
fn pivoted_greedy(
    diag: &[f64],
    column: &dyn Fn(usize) -> Vec<f64>,
    n: usize,
    jitter: f64,
) -> core::result::Result<Picks, Vec<usize>> {
    let n_vertices = diag.len();
    let scale = diag.iter().fold(0.0, |m: f64, d| m.max(*d)) + jitter;
    let mut residual: Vec<f64> = diag.iter().map(|d| d + jitter).collect();
    let mut chosen = vec![false; n_vertices];
    let mut factors: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut indices = Vec::with_capacity(n);
    let mut variances = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<usize> = None;
        for i in 0..n_vertices {
            if !chosen[i] && best.map_or(true, |b| residual[i] > residual[b]) {
                best = Some(i);
            }
        }
        let p = best.expect("n <= n_vertices");
        let pivot = residual[p];
        if !(pivot > SINGULAR_RATIO * scale) {
            return Err(indices);
        }
        let mut col = column(p);
        col[p] += jitter;
        for f in &factors {
            let fp = f[p];
            for (c, x) in col.iter_mut().zip(f) {
                *c -= fp * x;
            }
        }
        let root = libm::sqrt(pivot);
        col.iter_mut().for_each(|c| *c /= root);
        for (r, c) in residual.iter_mut().zip(&col) {
            *r -= c * c;
        }
        residual[p] = 0.0;
        chosen[p] = true;
        indices.push(p);
        variances.push(pivot);
        factors.push(col);
    }
    Ok((indices, variances, residual))
}

/// Farthest point sampling starting from the vertex of largest norm.
pub fn fps_select(vertices: &[Point3], n: usize, seed: u64) -> Result<LandmarkSet> {
    if n == 0 {
        return Err(Error::Empty("landmark count"));
    }
    if n > vertices.len() {
        return Err(Error::TooMany {
            requested: n,
            available: vertices.len(),
        });
    }
    let argmax = |values: &[f64], skip: &[bool]| -> usize {
        let mut best = usize::MAX;
        for (i, v) in values.iter().enumerate() {
            if !skip[i] && (best == usize::MAX || *v > values[best]) {
                best = i;
            }
        }
        best
    };
    let mut chosen = vec![false; vertices.len()];
    let norms: Vec<f64> = vertices.iter().map(|p| geom::dot(p, p)).collect();
    let first = argmax(&norms, &chosen);
    let mut indices = vec![first];
    chosen[first] = true;
    let mut nearest: Vec<f64> = vertices.iter().map(|p| geom::dist2(p, &vertices[first])).collect();
    while indices.len() < n {
        let next = argmax(&nearest, &chosen);
        chosen[next] = true;
        indices.push(next);
        for (d, p) in nearest.iter_mut().zip(vertices) {
            *d = d.min(geom::dist2(p, &vertices[next]));
        }
    }
    LandmarkSet::from_indices(vertices, indices, LandmarkMethod::Fps, seed)
}

/// `max_v min_s ‖v − p_s‖`.
pub fn coverage_radius(vertices: &[Point3], landmarks: &[usize]) -> f64 {
    let worst = vertices
        .iter()
        .map(|v| {
            landmarks
                .iter()
                .map(|&s| geom::dist2(v, &vertices[s]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    libm::sqrt(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segment(n: usize) -> Vec<Point3> {
        (0..n).map(|i| [i as f64, 0.0, 0.0]).collect()
    }

    #[test]
    fn fps_on_segment_picks_endpoints() {
        let pts = segment(7);
        let set = fps_select(&pts, 2, 3).unwrap();
        assert_eq!(set.indices(), &[6, 0]);
        assert_eq!(set.method(), LandmarkMethod::Fps);
        assert_eq!(set.seed(), 3);
        let all = fps_select(&pts, 7, 0).unwrap();
        let mut sorted = all.indices().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn fps_errors() {
        assert!(matches!(fps_select(&segment(3), 4, 0), Err(Error::TooMany { .. })));
        assert!(matches!(fps_select(&segment(3), 0, 0), Err(Error::Empty(_))));
    }

    #[test]
    fn landmark_set_checks() {
        let pts = segment(4);
        assert!(matches!(
            LandmarkSet::from_indices(&pts, vec![4], LandmarkMethod::Fps, 0),
            Err(Error::LandmarkMismatch {
                index: 4,
                n_vertices: 4
            })
        ));
        assert!(matches!(
            LandmarkSet::from_indices(&pts, vec![1, 1], LandmarkMethod::Fps, 0),
            Err(Error::DuplicateLandmark(1))
        ));
        assert!(matches!(
            LandmarkSet::from_indices(&pts, vec![], LandmarkMethod::Fps, 0),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn kernel_spec_validation() {
        assert!(DiffusionKernelSpec::default().validate().is_ok());
        let bad = DiffusionKernelSpec {
            scales: vec![1.0, 0.1],
            n_eigenpairs: 4,
        };
        assert!(bad.validate().is_err());
        let small = DiffusionKernelSpec {
            scales: vec![1.0],
            n_eigenpairs: 1,
        };
        assert!(small.validate().is_err());
    }

    #[test]
    fn coverage_of_segment() {
        let pts = segment(5);
        assert_eq!(coverage_radius(&pts, &[0]), 4.0);
        assert_eq!(coverage_radius(&pts, &[0, 4]), 2.0);
    }
}
