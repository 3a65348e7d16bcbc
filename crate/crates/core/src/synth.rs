//! Synthetic two-class tetrahedral ball dataset.
//!
//! Every sample starts from the same jittered, grid-stuffed ball. Class 1
//! receives an inward radial Gaussian dent at a seeded surface point shared
//! by the whole dataset, both
//! classes receive isotropic vertex noise, and each sample carries a scalar
//! biomarker drawn from a class-conditional unit-variance Gaussian.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point3};
use crate::mesh::{normalize_mesh, validate_and_orient, TetMesh};
use crate::model::{MeshSample, PrepConfig, RiskStratum};

/// One-sided 95% standard normal quantile.
pub const Z95: f64 = 1.644_853_626_951_472_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_per_class: usize,
    /// Cubes per axis across the diameter of the ball.
    pub grid_resolution: usize,
    pub bump_amplitude: f64,
    pub bump_radius: f64,
    pub biomarker_separation: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_per_class: 40,
            grid_resolution: 8,
            bump_amplitude: 0.15,
            bump_radius: 0.4,
            biomarker_separation: 1.5,
            noise_scale: 0.01,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_resolution < 4 {
            return Err(Error::InvalidConfig(format!(
                "grid_resolution must be at least 4, got {}",
                self.grid_resolution
            )));
        }
        if !(self.bump_amplitude > 0.0 && self.bump_amplitude < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "bump_amplitude must lie in (0, 0.5), got {}",
                self.bump_amplitude
            )));
        }
        for (name, v) in [("bump_radius", self.bump_radius), ("noise_scale", self.noise_scale)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.biomarker_separation >= 0.0) || !self.biomarker_separation.is_finite() {
            return Err(Error::InvalidConfig("biomarker_separation must be non-negative".into()));
        }
        if self.n_per_class == 0 {
            return Err(Error::InvalidConfig("n_per_class must be positive".into()));
        }
        Ok(())
    }

    /// Biomarker interval where both class-conditional 5–95% ranges overlap:
    /// `[sep/2 − z95, −sep/2 + z95]`, empty once `sep > 2·z95`.
    pub fn medium_band(&self) -> Option<(f64, f64)> {
        let lo = self.biomarker_separation / 2.0 - Z95;
        let hi = -self.biomarker_separation / 2.0 + Z95;
        (lo <= hi).then_some((lo, hi))
    }

    /// Stratum of a synthetic biomarker relative to [`SynthSpec::medium_band`].
    pub fn stratum(&self, biomarker: f64) -> RiskStratum {
        match self.medium_band() {
            Some((lo, hi)) if biomarker >= lo && biomarker <= hi => RiskStratum::Medium,
            Some((lo, _)) if biomarker < lo => RiskStratum::Low,
            None if biomarker < 0.0 => RiskStratum::Low,
            _ => RiskStratum::High,
        }
    }

    pub fn n_samples(&self) -> usize {
        2 * self.n_per_class
    }

    /// Label of dataset sample `index`: classes alternate, starting with 0.
    pub fn label_of(&self, index: usize) -> u8 {
        (index % 2) as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Stage {
    BaseMesh = 0,
    Deformation = 1,
    Noise = 2,
    Biomarker = 3,
}

/// Independent stream per (master seed, sample, stage).
fn stream(seed: u64, sample: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((sample << 4) | stage as u64);
    rng
}

/// Jittered grid-stuffed ball, oriented and normalized to the unit ball.
///
/// The cubes of a `resolution³` grid over `[−1, 1]³` whose centers lie in the
/// unit ball are each split into six tets around their main diagonal.
pub fn generate_ball_mesh(spec: &SynthSpec) -> Result<TetMesh> {
    spec.validate()?;
    let r = spec.grid_resolution;
    let h = 2.0 / r as f64;
    let coord = |i: usize| -1.0 + i as f64 * h;
    let mut ids: BTreeMap<[usize; 3], usize> = BTreeMap::new();
    let mut cubes = Vec::new();
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                let c = [coord(i) + h / 2.0, coord(j) + h / 2.0, coord(k) + h / 2.0];
                if geom::norm(&c) < 1.0 {
                    cubes.push([i, j, k]);
                    for corner in 0..8 {
                        let g = [i + (corner & 1), j + ((corner >> 1) & 1), k + ((corner >> 2) & 1)];
                        ids.insert(g, 0);
                    }
                }
            }
        }
    }
    let mut vertices = Vec::with_capacity(ids.len());
    for (n, (g, id)) in ids.iter_mut().enumerate() {
        *id = n;
        vertices.push([coord(g[0]), coord(g[1]), coord(g[2])]);
    }
    const AXIS_ORDERS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * cubes.len());
    for cube in &cubes {
        for order in AXIS_ORDERS {
            let mut g = *cube;
            let mut tet = [ids[&g], 0, 0, 0];
            for (step, &axis) in order.iter().enumerate() {
                g[axis] += 1;
                tet[step + 1] = ids[&g];
            }
            tets.push(tet);
        }
    }
    let mut rng = stream(spec.seed, u64::MAX >> 4, Stage::BaseMesh);
    let jitter = 0.1 * h;
    for v in &mut vertices {
        for c in v.iter_mut() {
            *c += rng.random_range(-jitter..=jitter);
        }
    }
    let mesh = TetMesh::new(vertices, tets)?;
    if !mesh.is_connected() {
        return Err(Error::Disconnected);
    }
    let (oriented, _) = validate_and_orient(&mesh)?;
    Ok(normalize_mesh(&oriented)?.0)
}

/// Displacement field of a dent at `center`.
pub fn bump_magnitude(v: &Point3, center: &Point3, spec: &SynthSpec) -> f64 {
    let r2 = spec.bump_radius * spec.bump_radius;
    spec.bump_amplitude * libm::exp(-geom::dist2(v, center) / r2)
}

/// Deformed copy of `base` with its dent mask.
///
/// Label 1 moves each vertex toward the origin by `bump_magnitude`; the mask
/// flags vertices moved by more than a tenth of the amplitude. Both labels
/// add Gaussian noise of standard deviation `noise_scale` per coordinate.
pub fn apply_class_deformation(
    base: &TetMesh,
    label: u8,
    spec: &SynthSpec,
    sample: u64,
) -> Result<(TetMesh, Vec<bool>)> {
    spec.validate()?;
    let mut vertices = base.vertices().to_vec();
    let mut mask = alloc::vec![false; vertices.len()];
    if label == 1 {
        let center = dent_center(base, spec);
        for (v, m) in vertices.iter_mut().zip(mask.iter_mut()) {
            let d = bump_magnitude(v, &center, spec);
            *m = d > 0.1 * spec.bump_amplitude;
            let n = geom::norm(v);
            if n > 0.0 {
                *v = geom::sub(v, &geom::scale(v, d / n));
            }
        }
    }
    let mut rng = stream(spec.seed, sample, Stage::Noise);
    let noise = Normal::new(0.0, spec.noise_scale).map_err(|_| Error::InvalidConfig("noise_scale".into()))?;
    for v in &mut vertices {
        for c in v.iter_mut() {
            *c += noise.sample(&mut rng);
        }
    }
    let deformed = base.with_vertices(vertices)?;
    for t in 0..deformed.n_tets() {
        if deformed.signed_volume(t) <= 0.0 {
            return Err(Error::AmplitudeTooLarge { tet: t });
        }
    }
    Ok((deformed, mask))
}

/// Stream index reserved for dataset-level draws, above any sample index.
const DATASET_STREAM: u64 = u64::MAX >> 4;

/// Dent center of a dataset, drawn once from `spec.seed`.
pub fn dent_center(base: &TetMesh, spec: &SynthSpec) -> Point3 {
    let mut rng = stream(spec.seed, DATASET_STREAM, Stage::Deformation);
    surface_point(base.vertices(), &mut rng)
}

/// Extreme vertex in a uniformly random direction.
fn surface_point(vertices: &[Point3], rng: &mut ChaCha8Rng) -> Point3 {
    let dir = loop {
        let d: Point3 = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        if geom::norm(&d) > 1e-6 {
            break d;
        }
    };
    *vertices
        .iter()
        .max_by(|a, b| geom::dot(a, &dir).total_cmp(&geom::dot(b, &dir)))
        .expect("mesh has vertices")
}

/// Class-conditional draw `N(±separation/2, 1)`, positive mean for label 1.
pub fn generate_biomarker(label: u8, spec: &SynthSpec, sample: u64) -> f64 {
    let mut rng = stream(spec.seed, sample, Stage::Biomarker);
    let mean = if label == 1 { 0.5 } else { -0.5 } * spec.biomarker_separation;
    let z: f64 = StandardNormal.sample(&mut rng);
    mean + z
}

/// A generated mesh before operator assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSample {
    pub index: u64,
    pub mesh: TetMesh,
    pub label: u8,
    pub biomarker: f64,
    pub stratum: RiskStratum,
    pub mask: Vec<bool>,
}

impl SynthSample {
    pub fn prepare(&self, prep: &PrepConfig) -> Result<MeshSample> {
        MeshSample::prepare(self.mesh.clone(), self.label, Some(self.biomarker), prep)
    }
}

/// Generates sample `index` with a given label on the shared base mesh.
/// The returned mesh is renormalized to the unit ball.
pub fn generate_sample(spec: &SynthSpec, base: &TetMesh, index: u64, label: u8) -> Result<SynthSample> {
    let (deformed, mask) = apply_class_deformation(base, label, spec, index)?;
    let (mesh, _) = normalize_mesh(&deformed)?;
    let biomarker = generate_biomarker(label, spec, index);
    Ok(SynthSample {
        index,
        mesh,
        label,
        biomarker,
        stratum: spec.stratum(biomarker),
        mask,
    })
}

/// All `2 · n_per_class` samples with alternating labels.
pub fn generate_dataset(spec: &SynthSpec) -> Result<Vec<SynthSample>> {
    let base = generate_ball_mesh(spec)?;
    (0..spec.n_samples())
        .map(|i| generate_sample(spec, &base, i as u64, spec.label_of(i)))
        .collect()
}

/// Extra label-1 samples indexed after the dataset, for attribution checks.
pub fn generate_heldout_positives(spec: &SynthSpec, count: usize) -> Result<Vec<SynthSample>> {
    let base = generate_ball_mesh(spec)?;
    let start = spec.n_samples() as u64;
    (0..count as u64)
        .map(|k| generate_sample(spec, &base, start + k, 1))
        .collect()
}

/// Generates and preprocesses the whole dataset.
pub fn build_dataset(spec: &SynthSpec, prep: &PrepConfig) -> Result<(Vec<SynthSample>, Vec<MeshSample>)> {
    let raw = generate_dataset(spec)?;
    let prepared = raw.iter().map(|s| s.prepare(prep)).collect::<Result<Vec<_>>>()?;
    Ok((raw, prepared))
}
