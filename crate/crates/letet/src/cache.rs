//! On-disk cache of assembled operators and landmark selections.

use std::path::{Path, PathBuf};

use letet_core::landmarks::LandmarkSet;
use letet_core::lbo::LboBundle;
use letet_core::mesh::TetMesh;
use letet_core::model::{select_landmarks, PrepConfig};
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Result};
use crate::formats::sha256_hex;
use crate::tetgen::{write_ele, write_node};

/// Environment variable naming the cache directory.
pub const CACHE_ENV: &str = "LETET_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
    /// An entry existed but could not be used.
    Recomputed,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    lbo: LboBundle,
    landmarks: LandmarkSet,
}

#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// `$LETET_CACHE_DIR`, or `default` when unset.
    pub fn from_env(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) => Self::new(dir),
            None => Self::new(default),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Content key over the mesh and every preprocessing setting.
    pub fn key(mesh: &TetMesh, prep: &PrepConfig) -> String {
        let mut bytes = write_node(mesh.vertices()).into_bytes();
        bytes.extend(write_ele(mesh.tets()).into_bytes());
        bytes.extend(serde_json::to_vec(prep).expect("prep config serializes"));
        sha256_hex(&bytes)
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Cached operator and landmarks, computing and storing them on a miss.
    /// Unreadable or mismatched entries are recomputed with a warning.
    pub fn load_or_compute(&self, mesh: &TetMesh, prep: &PrepConfig) -> Result<(LboBundle, LandmarkSet, CacheStatus)> {
        let key = Self::key(mesh, prep);
        let path = self.path(&key);
        let mut status = CacheStatus::Miss;
        if path.exists() {
            match std::fs::read_to_string(&path)
                .ok()
                .and_then(|t| serde_json::from_str::<Entry>(&t).ok())
            {
                Some(e) if e.key == key && e.lbo.n_vertices() == mesh.n_vertices() => {
                    debug!("cache hit {}", path.display());
                    return Ok((e.lbo, e.landmarks, CacheStatus::Hit));
                }
                _ => {
                    warn!("corrupted cache entry {}, recomputing", path.display());
                    status = CacheStatus::Recomputed;
                }
            }
        }
        let lbo = LboBundle::assemble(mesh, prep.lbo)?;
        let landmarks = select_landmarks(mesh, &lbo, prep)?;
        std::fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let entry = Entry { key, lbo, landmarks };
        let text = serde_json::to_string(&entry).expect("cache entry serializes");
        std::fs::write(&path, text).map_err(io_err(&path))?;
        Ok((entry.lbo, entry.landmarks, status))
    }
}
