//! Dataset directories: `.node`/`.ele` pairs plus `manifest.json`.

use std::path::{Path, PathBuf};

use letet_core::mesh::{normalize_mesh, TetMesh};
use letet_core::model::{evaluation_from_logits, Evaluation, MeshSample, Model, PrepConfig, RiskStratum};
use letet_core::synth::{SynthSample, SynthSpec};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{Cache, CacheStatus};
use crate::error::{io_err, Error, Result};
use crate::formats::sha256_hex;
use crate::tetgen::{read_mesh, write_mesh};

pub const MANIFEST: &str = "manifest.json";
pub const DATASET_FORMAT: &str = "letet-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub name: String,
    pub label: u8,
    #[serde(default)]
    pub biomarker: Option<f64>,
    #[serde(default)]
    pub stratum: Option<RiskStratum>,
    /// Generator stream index for synthetic samples.
    #[serde(default)]
    pub index: Option<u64>,
    /// Vertices inside the planted deformation (synthetic label-1 samples).
    #[serde(default)]
    pub mask: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
        if m.format != DATASET_FORMAT {
            return Err(Error::format(
                &path,
                format!("unsupported dataset format '{}'", m.format),
            ));
        }
        if let Some(r) = m.samples.iter().find(|r| r.label > 1) {
            return Err(Error::format(&path, format!("sample {} has label {}", r.name, r.label)));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}

/// A mesh read from disk with its manifest record.
#[derive(Debug, Clone)]
pub struct RawSample {
    pub record: SampleRecord,
    pub mesh: TetMesh,
}

impl RawSample {
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.mesh.n_vertices()];
        for &i in &self.record.mask {
            if i < m.len() {
                m[i] = true;
            }
        }
        m
    }
}

pub fn sample_name(i: usize) -> String {
    format!("sample_{i:04}")
}

/// Writes generated samples and their manifest into `dir`.
pub fn write_synth_dataset(dir: &Path, spec: &SynthSpec, samples: &[SynthSample]) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = sample_name(i);
        write_mesh(&dir.join(format!("{name}.node")), &s.mesh)?;
        records.push(SampleRecord {
            name,
            label: s.label,
            biomarker: Some(s.biomarker),
            stratum: Some(s.stratum),
            index: Some(s.index),
            mask: s.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect(),
        });
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        synth: Some(spec.clone()),
        samples: records,
    };
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest.to_json()).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn node_path(dir: &Path, record: &SampleRecord) -> PathBuf {
    dir.join(format!("{}.node", record.name))
}

/// Reads, validates and normalizes every mesh listed in the manifest.
pub fn load_dataset(dir: &Path, jobs: usize) -> Result<(DatasetManifest, Vec<RawSample>)> {
    let manifest = DatasetManifest::load(dir)?;
    let samples = with_pool(jobs, || {
        manifest
            .samples
            .par_iter()
            .map(|r| {
                let (mesh, _) = read_mesh(&node_path(dir, r))?;
                let (mesh, _) = normalize_mesh(&mesh)?;
                Ok(RawSample {
                    record: r.clone(),
                    mesh,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok((manifest, samples))
}

/// Runs `f` on a pool of `jobs` threads (0 means rayon's default).
pub fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Operator assembly, landmarking and tokenization for every sample, in order.
pub fn prepare_samples(
    raw: &[RawSample],
    prep: &PrepConfig,
    cache: Option<&Cache>,
    jobs: usize,
) -> Result<Vec<MeshSample>> {
    let out = with_pool(jobs, || {
        raw.par_iter()
            .map(|r| {
                let (lbo, landmarks) = match cache {
                    Some(c) => {
                        let (lbo, lm, status) = c.load_or_compute(&r.mesh, prep)?;
                        if status == CacheStatus::Hit {
                            info!(
                                "{}: cache hit, skipping operator and landmark computation",
                                r.record.name
                            );
                        }
                        (lbo, lm)
                    }
                    None => {
                        let lbo = letet_core::lbo::LboBundle::assemble(&r.mesh, prep.lbo)?;
                        let lm = letet_core::model::select_landmarks(&r.mesh, &lbo, prep)?;
                        (lbo, lm)
                    }
                };
                Ok(MeshSample::from_parts(
                    r.mesh.clone(),
                    lbo,
                    landmarks,
                    r.record.label,
                    r.record.biomarker,
                    prep.radius,
                )?)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(out)
}

/// Parallel evaluation with read-only parameters; results match the sequential path.
pub fn evaluate_parallel(model: &Model, samples: &[&MeshSample], jobs: usize) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(letet_core::Error::Empty("evaluation set").into());
    }
    let logits = with_pool(jobs, || {
        samples
            .par_iter()
            .map(|s| model.logit(s))
            .collect::<std::result::Result<Vec<_>, _>>()
    })?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    Ok(evaluation_from_logits(&logits, &labels))
}
