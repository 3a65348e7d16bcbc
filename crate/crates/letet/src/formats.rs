//! Landmark sidecars, checkpoints, run manifests and metrics tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use letet_core::geom::Point3;
use letet_core::landmarks::{LandmarkMethod, LandmarkSet};
use letet_core::model::{Metrics, Model, ModelState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(io_err(path))?))
}

/// Landmark sidecar: `method`, `seed` and `count` lines, then one index per line.
pub fn write_landmarks(set: &LandmarkSet) -> String {
    let mut out = format!(
        "method {}\nseed {}\ncount {}\n",
        set.method().as_str(),
        set.seed(),
        set.len()
    );
    for i in set.indices() {
        let _ = writeln!(out, "{i}");
    }
    out
}

pub fn parse_landmarks(text: &str, vertices: &[Point3]) -> Result<LandmarkSet> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut field = |key: &str| -> Result<(usize, String)> {
        let (line, l) = lines
            .next()
            .ok_or_else(|| Error::parse(0, format!("missing '{key}' line")))?;
        let rest = l
            .strip_prefix(key)
            .ok_or_else(|| Error::parse(line, format!("expected '{key}'")))?;
        Ok((line, rest.trim().to_string()))
    };
    let (line, method) = field("method")?;
    let method =
        LandmarkMethod::parse(&method).ok_or_else(|| Error::parse(line, format!("unknown method '{method}'")))?;
    let (line, seed) = field("seed")?;
    let seed: u64 = seed.parse().map_err(|_| Error::parse(line, "invalid seed"))?;
    let (line, count) = field("count")?;
    let count: usize = count.parse().map_err(|_| Error::parse(line, "invalid count"))?;
    let mut indices = Vec::with_capacity(count);
    for (line, l) in lines {
        indices.push(
            l.parse::<usize>()
                .map_err(|_| Error::parse(line, format!("invalid index '{l}'")))?,
        );
    }
    if indices.len() != count {
        return Err(Error::parse(
            0,
            format!("count mismatch: {count} declared, {} found", indices.len()),
        ));
    }
    Ok(LandmarkSet::from_indices(vertices, indices, method, seed)?)
}

pub const CHECKPOINT_FORMAT: &str = "letet-checkpoint/1";

/// Trained model with a fingerprint of its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub fingerprint: String,
    pub train_seed: u64,
    pub best_epoch: usize,
    pub state: ModelState,
}

pub fn config_fingerprint(state: &ModelState) -> String {
    let cfg = serde_json::to_vec(&state.config).expect("config serializes");
    let names = serde_json::to_vec(state.params.names()).expect("names serialize");
    sha256_hex(&[cfg, names].concat())
}

impl Checkpoint {
    pub fn new(model: &Model, train_seed: u64, best_epoch: usize) -> Self {
        let state = model.state();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            fingerprint: config_fingerprint(&state),
            train_seed,
            best_epoch,
            state,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint format '{}'", ck.format),
            ));
        }
        if ck.fingerprint != config_fingerprint(&ck.state) {
            return Err(Error::format(path, "fingerprint does not match stored configuration"));
        }
        Ok(ck)
    }

    pub fn model(&self) -> Result<Model> {
        Ok(Model::from_state(self.state.clone())?)
    }
}

/// Everything needed to rerun a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// File name to SHA-256 of the inputs that were read.
    pub inputs: BTreeMap<String, String>,
    /// File name to SHA-256 of the outputs that were written.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, text + "\n").map_err(io_err(path))
    }
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub model: String,
    pub stratum: String,
    pub metrics: Metrics,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// CSV with columns `ACC,SEN,SPE` followed by counts and labels; undefined
/// ratios are left empty.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("ACC,SEN,SPE,TP,TN,FP,FN,N,model,stratum\n");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            opt(m.accuracy),
            opt(m.sensitivity),
            opt(m.specificity),
            m.tp,
            m.tn,
            m.fp,
            m.fn_,
            m.total(),
            r.model,
            r.stratum
        );
    }
    out
}
