//! Discrete volumetric Laplace-Beltrami operator on tetrahedral meshes.
//!
//! The stiffness matrix is assembled from per-tet cotangent weights
//! `k_ij = l_kl · cot(θ_kl) / 6`, where `(k, l)` is the edge opposite `(i, j)`
//! and `θ_kl` the interior dihedral angle along it. This equals the linear
//! finite-element stiffness `∫ ∇φ_i · ∇φ_j`. With `W = diag(Σ_j k_ij)` the
//! operator is `A = W − K`, so `A·1 = 0`. The lumped mass `d_i` collects
//! adjacent tet volume, and the normalized Laplacian is either `D⁻¹A`
//! (random-walk) or the similar symmetric matrix `D^{-1/2} A D^{-1/2}`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point3, EDGE_PAIRS};
use crate::mesh::TetMesh;
use crate::sparse::SparseMatrix;

/// How per-vertex mass is lumped from adjacent tet volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassMode {
    /// `d_i = Σ_{t∋i} V_t / 4`.
    #[default]
    Quarter,
    /// `d_i = Σ_{t∋i} V_t`.
    FullVolume,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `D^{-1/2} A D^{-1/2}`.
    #[default]
    Symmetric,
    /// `D⁻¹ A`.
    RandomWalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LboConfig {
    pub mass_mode: MassMode,
    pub normalization: Normalization,
}

/// Per-tet stiffness matrix from cotangent weights.
pub fn element_stiffness(p: &[Point3; 4]) -> Result<[[f64; 4]; 4]> {
    let volume = geom::signed_volume(p);
    let longest = EDGE_PAIRS
        .iter()
        .map(|&((i, j), _)| geom::dist(&p[i], &p[j]))
        .fold(0.0, f64::max);
    if !(volume.abs() >= crate::mesh::DEGENERACY_RATIO * longest * longest * longest) {
        return Err(Error::DegenerateTet { tet: 0, volume });
    }
    let mut k = [[0.0; 4]; 4];
    for &((i, j), (a, b)) in EDGE_PAIRS.iter() {
        let (c, s) = geom::dihedral_cos_sin(&p[a], &p[b], &p[i], &p[j]);
        let w = geom::dist(&p[a], &p[b]) * (c / s) / 6.0;
        k[i][j] = -w;
        k[j][i] = -w;
        k[i][i] += w;
        k[j][j] += w;
    }
    Ok(k)
}

/// Assembles `A = W − K` over all tets.
pub fn assemble_stiffness(mesh: &TetMesh) -> Result<SparseMatrix> {
    let mut triplets = Vec::with_capacity(mesh.n_tets() * 16);
    for (t, tet) in mesh.tets().iter().enumerate() {
        let ke = element_stiffness(&mesh.tet_points(t)).map_err(|e| match e {
            Error::DegenerateTet { volume, .. } => Error::DegenerateTet { tet: t, volume },
            other => other,
        })?;
        for a in 0..4 {
            for b in 0..4 {
                triplets.push((tet[a], tet[b], ke[a][b]));
            }
        }
    }
    SparseMatrix::from_triplets(mesh.n_vertices(), mesh.n_vertices(), triplets)
}

/// Per-vertex lumped mass.
pub fn assemble_lumped_mass(mesh: &TetMesh, mode: MassMode) -> Result<Vec<f64>> {
    let mut mass = alloc::vec![0.0; mesh.n_vertices()];
    let share = match mode {
        MassMode::Quarter => 0.25,
        MassMode::FullVolume => 1.0,
    };
    for (t, tet) in mesh.tets().iter().enumerate() {
        let v = mesh.signed_volume(t).abs() * share;
        for &i in tet {
            mass[i] += v;
        }
    }
    if let Some(vertex) = mass.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::IsolatedVertex { vertex });
    }
    Ok(mass)
}

/// Normalizes the stiffness by the lumped mass.
pub fn normalized_laplacian(stiffness: &SparseMatrix, mass: &[f64], mode: Normalization) -> Result<SparseMatrix> {
    if mass.len() != stiffness.n_rows() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{} mass entries for a {}-row operator",
            mass.len(),
            stiffness.n_rows()
        )));
    }
    if let Some((vertex, &value)) = mass.iter().enumerate().find(|(_, m)| !(**m > 0.0)) {
        return Err(Error::NonPositiveMass { vertex, value });
    }
    Ok(match mode {
        Normalization::RandomWalk => {
            let inv: Vec<f64> = mass.iter().map(|m| 1.0 / m).collect();
            stiffness.scale_rows_cols(&inv, &alloc::vec![1.0; mass.len()])
        }
        Normalization::Symmetric => {
            let inv_sqrt: Vec<f64> = mass.iter().map(|m| 1.0 / libm::sqrt(*m)).collect();
            stiffness.scale_rows_cols(&inv_sqrt, &inv_sqrt)
        }
    })
}

/// Result of the power-iteration estimate of the largest eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaMax {
    /// Estimate including the safety margin.
    pub value: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit and the Gershgorin bound was returned.
    pub converged: bool,
}

pub const LAMBDA_MAX_MARGIN: f64 = 1.01;
const POWER_TOL: f64 = 1e-6;
const POWER_MAX_ITER: usize = 1000;

/// Largest-eigenvalue estimate by power iteration, inflated by 1%.
///
/// The start vector is `1 + diag(L)/max diag`, a function of the matrix
/// itself, so relabeling the vertices relabels every iterate.
pub fn estimate_lambda_max(l: &SparseMatrix) -> LambdaMax {
    let diag = l.diag();
    let dmax = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let mut x: Vec<f64> = if dmax > 0.0 {
        diag.iter().map(|d| 1.0 + d / dmax).collect()
    } else {
        alloc::vec![1.0; l.n_rows()]
    };
    let mut prev = 0.0;
    for it in 1..=POWER_MAX_ITER {
        let nx = norm(&x);
        let y = l.mul_vec(&x);
        let ny = norm(&y);
        if ny == 0.0 {
            return LambdaMax {
                value: dmax.max(f64::MIN_POSITIVE) * LAMBDA_MAX_MARGIN,
                iterations: it,
                converged: true,
            };
        }
        let est = ny / nx;
        if it > 1 && (est - prev).abs() < POWER_TOL * est {
            return LambdaMax {
                value: est * LAMBDA_MAX_MARGIN,
                iterations: it,
                converged: true,
            };
        }
        prev = est;
        x = y.into_iter().map(|v| v / ny).collect();
    }
    LambdaMax {
        value: l.gershgorin_bound() * LAMBDA_MAX_MARGIN,
        iterations: POWER_MAX_ITER,
        converged: false,
    }
}

fn norm(x: &[f64]) -> f64 {
    libm::sqrt(x.iter().map(|v| v * v).sum())
}

/// `(2/λ_max) L − I`, mapping the spectrum into `[−1, 1]`.
pub fn scale_laplacian(l: &SparseMatrix, lambda_max: f64) -> Result<SparseMatrix> {
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::InvalidConfig(alloc::format!(
            "lambda_max must be positive, got {lambda_max}"
        )));
    }
    Ok(l.affine_identity(2.0 / lambda_max, -1.0))
}

/// Stiffness, mass and derived operators for one mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LboBundle {
    pub stiffness: SparseMatrix,
    pub lumped_mass: Vec<f64>,
    pub laplacian: SparseMatrix,
    pub lambda_max: LambdaMax,
    pub scaled_laplacian: SparseMatrix,
    pub config: LboConfig,
    /// Edges whose assembled weight is negative (poorly shaped tets); kept as is.
    pub negative_weights: usize,
}

impl LboBundle {
    pub fn assemble(mesh: &TetMesh, config: LboConfig) -> Result<Self> {
        let stiffness = assemble_stiffness(mesh)?;
        let lumped_mass = assemble_lumped_mass(mesh, config.mass_mode)?;
        let laplacian = normalized_laplacian(&stiffness, &lumped_mass, config.normalization)?;
        let lambda_max = estimate_lambda_max(&laplacian);
        let scaled_laplacian = scale_laplacian(&laplacian, lambda_max.value)?;
        let negative_weights = (0..stiffness.n_rows())
            .map(|r| {
                let (cols, vals) = stiffness.row(r);
                cols.iter().zip(vals).filter(|(&c, &v)| c > r && v > 0.0).count()
            })
            .sum();
        Ok(Self {
            stiffness,
            lumped_mass,
            laplacian,
            lambda_max,
            scaled_laplacian,
            config,
            negative_weights,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.lumped_mass.len()
    }
}
