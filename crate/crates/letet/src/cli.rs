//! Command-line definitions and command implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use letet_core::explain::gradcam;
use letet_core::landmarks::LandmarkMethod;
use letet_core::model::{
    stratified_split, stratify_risk, train_with, MeshSample, Model, ModelConfig, PrepConfig, RiskStratum, TrainConfig,
    Variant,
};
use letet_core::synth::{generate_dataset, SynthSpec};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::cache::Cache;
use crate::dataset::{evaluate_parallel, load_dataset, prepare_samples, write_synth_dataset, RawSample, MANIFEST};
use crate::error::{io_err, Error, Result};
use crate::formats::{metrics_csv, sha256_file, write_landmarks, Checkpoint, MetricsRow, RunManifest};
use crate::vtk::export_heatmap;

#[derive(Debug, Parser)]
#[command(name = "letet", version, about = "Landmark-enhanced tetrahedral mesh classification")]
pub struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-sample preprocessing and evaluation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Assemble operators and select landmarks for every mesh, using the cache.
    Prep(PrepArgs),
    /// Train a model and write the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a metrics table.
    Eval(EvalArgs),
    /// Write Grad-CAM heatmaps as VTK files.
    Gradcam(GradcamArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of classes; only binary datasets are supported.
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub bump_radius: Option<f64>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub fuse_biomarker: bool,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Landmarks (super nodes) per mesh.
    #[arg(long)]
    pub landmarks: Option<usize>,
    #[arg(long, value_enum)]
    pub landmark_method: Option<MethodArg>,
    /// Radius of the token graph.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Cache directory; defaults to `$LETET_CACHE_DIR`, then `<data>/.cache`.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub micro_batch: Option<usize>,
    #[arg(long)]
    pub accumulation_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Metrics CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Restrict to one biomarker risk stratum.
    #[arg(long, value_enum)]
    pub stratum: Option<StratumArg>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory for one `.vtk` file per sample.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Only explain samples with this label.
    #[arg(long)]
    pub label: Option<u8>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    #[value(name = "letetcnn")]
    LeTetCnn,
    #[value(name = "le")]
    Le,
    #[value(name = "tetcnn-only")]
    TetCnnOnly,
    #[value(name = "biomarker-only")]
    BiomarkerOnly,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::LeTetCnn => Variant::LeTetCnn,
            VariantArg::Le => Variant::Le,
            VariantArg::TetCnnOnly => Variant::TetCnnOnly,
            VariantArg::BiomarkerOnly => Variant::BiomarkerOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    #[value(name = "gp-diffusion")]
    GpDiffusion,
    Fps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StratumArg {
    Low,
    Medium,
    High,
}

impl From<StratumArg> for RiskStratum {
    fn from(s: StratumArg) -> Self {
        match s {
            StratumArg::Low => RiskStratum::Low,
            StratumArg::Medium => RiskStratum::Medium,
            StratumArg::High => RiskStratum::High,
        }
    }
}

/// Contents of a `--config` file. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }
}

fn invalid(e: letet_core::Error) -> Error {
    Error::Usage(e.to_string())
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    cfg.seed = Some(seed);
    cfg.synth.seed = seed;
    cfg.train.seed = seed;
    let jobs = cli.jobs;
    match cli.command {
        Command::Synth(a) => cmd_synth(cfg, a),
        Command::Prep(a) => cmd_prep(cfg, a, jobs),
        Command::Train(a) => cmd_train(cfg, a, jobs),
        Command::Eval(a) => cmd_eval(a, jobs),
        Command::Gradcam(a) => cmd_gradcam(a, jobs),
    }
}

fn manifest_path(dir: &Path, command: &str) -> PathBuf {
    dir.join(format!("{command}.run.json"))
}

fn sibling_manifest(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.json");
    path.with_file_name(name)
}

fn record_file(map: &mut BTreeMap<String, String>, path: &Path) -> Result<()> {
    map.insert(path.display().to_string(), sha256_file(path)?);
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn cmd_synth(mut cfg: RunConfig, a: SynthArgs) -> Result<()> {
    if a.classes != 2 {
        return Err(Error::Usage(format!("only 2 classes are supported, got {}", a.classes)));
    }
    let s = &mut cfg.synth;
    if let Some(v) = a.per_class {
        s.n_per_class = v;
    }
    if let Some(v) = a.resolution {
        s.grid_resolution = v;
    }
    if let Some(v) = a.amplitude {
        s.bump_amplitude = v;
    }
    if let Some(v) = a.bump_radius {
        s.bump_radius = v;
    }
    if let Some(v) = a.separation {
        s.biomarker_separation = v;
    }
    if let Some(v) = a.noise {
        s.noise_scale = v;
    }
    s.validate().map_err(invalid)?;
    let spec = cfg.synth.clone();
    info!("generating {} samples", spec.n_samples());
    let samples = generate_dataset(&spec)?;
    write_synth_dataset(&a.out, &spec, &samples)?;
    let mut run = RunManifest::new("synth", spec.seed, to_value(&cfg));
    run.config["out"] = a.out.display().to_string().into();
    record_file(&mut run.outputs, &a.out.join(MANIFEST))?;
    run.save(&manifest_path(&a.out, "synth"))?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

fn apply_model_args(cfg: &mut ModelConfig, a: &ModelArgs) -> Result<()> {
    if let Some(v) = a.variant {
        cfg.variant = v.into();
    }
    if a.fuse_biomarker {
        cfg.fuse_biomarker = true;
    }
    if let Some(v) = a.hidden_dim {
        cfg.hidden_dim = v;
    }
    if let Some(v) = a.landmarks {
        cfg.n_landmarks = v;
    }
    if let Some(v) = a.landmark_method {
        cfg.landmark_method = match v {
            MethodArg::GpDiffusion => LandmarkMethod::GpDiffusion,
            MethodArg::Fps => LandmarkMethod::Fps,
        };
    }
    if let Some(v) = a.radius {
        cfg.radius = v;
    }
    cfg.validate().map_err(invalid)
}

fn cache_for(data: &Path, flag: &Option<PathBuf>) -> Cache {
    match flag {
        Some(dir) => Cache::new(dir),
        None => Cache::from_env(data.join(".cache")),
    }
}

fn data_inputs(run: &mut RunManifest, data: &Path, raw: &[RawSample]) -> Result<()> {
    record_file(&mut run.inputs, &data.join(MANIFEST))?;
    for r in raw {
        let node = crate::dataset::node_path(data, &r.record);
        record_file(&mut run.inputs, &node)?;
        record_file(&mut run.inputs, &crate::tetgen::ele_path(&node))?;
    }
    Ok(())
}

fn cmd_prep(mut cfg: RunConfig, a: PrepArgs, jobs: usize) -> Result<()> {
    apply_model_args(&mut cfg.model, &a.model)?;
    let seed = cfg.seed.unwrap_or(0);
    let prep = PrepConfig::for_model(&cfg.model, seed);
    let (_, raw) = load_dataset(&a.data, jobs)?;
    let cache = cache_for(&a.data, &a.model.cache);
    let samples = prepare_samples(&raw, &prep, Some(&cache), jobs)?;
    let dir = a.data.join("landmarks");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut run = RunManifest::new("prep", seed, to_value(&cfg));
    run.config["data"] = a.data.display().to_string().into();
    run.config["prep"] = to_value(&prep);
    data_inputs(&mut run, &a.data, &raw)?;
    for (r, s) in raw.iter().zip(&samples) {
        let path = dir.join(format!("{}.landmarks", r.record.name));
        std::fs::write(&path, write_landmarks(&s.landmarks)).map_err(io_err(&path))?;
        record_file(&mut run.outputs, &path)?;
    }
    run.save(&manifest_path(&a.data, "prep"))?;
    println!(
        "prepared {} meshes with {} landmarks each (cache {})",
        samples.len(),
        prep.n_landmarks,
        cache.dir().display()
    );
    Ok(())
}

fn split_indices(raw: &[RawSample], seed: u64, which: SplitArg) -> Vec<usize> {
    let labels: Vec<u8> = raw.iter().map(|r| r.record.label).collect();
    let split = stratified_split(&labels, seed);
    match which {
        SplitArg::Train => split.train,
        SplitArg::Val => split.val,
        SplitArg::Test => split.test,
        SplitArg::All => (0..raw.len()).collect(),
    }
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs, jobs: usize) -> Result<()> {
    apply_model_args(&mut cfg.model, &a.model)?;
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.weight_decay {
        t.weight_decay = v;
    }
    if let Some(v) = a.micro_batch {
        t.micro_batch = v;
    }
    if let Some(v) = a.accumulation_steps {
        t.accumulation_steps = v;
    }
    t.validate().map_err(invalid)?;
    let seed = cfg.seed.unwrap_or(0);
    let prep = PrepConfig::for_model(&cfg.model, seed);
    let (_, raw) = load_dataset(&a.data, jobs)?;
    let cache = cache_for(&a.data, &a.model.cache);
    let samples = prepare_samples(&raw, &prep, Some(&cache), jobs)?;
    let pick = |which| {
        split_indices(&raw, seed, which)
            .into_iter()
            .map(|i| &samples[i])
            .collect::<Vec<_>>()
    };
    let (train_set, val_set) = (pick(SplitArg::Train), pick(SplitArg::Val));
    let mut model = Model::new(cfg.model.clone(), seed)?;
    info!(
        "training {} on {} samples ({} validation) for {} epochs",
        cfg.model.variant.as_str(),
        train_set.len(),
        val_set.len(),
        cfg.train.epochs
    );
    let report = train_with(&mut model, &train_set, &val_set, &cfg.train, |r| {
        info!(
            "epoch {} loss {:.6} acc {:.4} val_acc {}",
            r.epoch,
            r.train_loss,
            r.train_accuracy,
            r.val_accuracy.map(|v| format!("{v:.4}")).unwrap_or_default()
        )
    })?;
    Checkpoint::new(&model, seed, report.best_epoch).save(&a.out)?;
    let history = a.out.with_extension("history.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::format(&history, e))?;
    std::fs::write(&history, text + "\n").map_err(io_err(&history))?;
    let mut run = RunManifest::new("train", seed, to_value(&cfg));
    run.config["data"] = a.data.display().to_string().into();
    run.config["out"] = a.out.display().to_string().into();
    data_inputs(&mut run, &a.data, &raw)?;
    record_file(&mut run.outputs, &a.out)?;
    record_file(&mut run.outputs, &history)?;
    run.save(&sibling_manifest(&a.out))?;
    println!("best epoch {} written to {}", report.best_epoch, a.out.display());
    Ok(())
}

/// Loads the checkpoint, then prepares the requested samples with the
/// checkpoint's own preprocessing settings.
fn load_for_inference(
    data: &Path,
    checkpoint: &Path,
    cache: &Option<PathBuf>,
    split: SplitArg,
    jobs: usize,
) -> Result<(Checkpoint, Model, Vec<RawSample>, Vec<MeshSample>)> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.model()?;
    let (_, raw) = load_dataset(data, jobs)?;
    let keep = split_indices(&raw, ck.train_seed, split);
    let raw: Vec<RawSample> = keep.into_iter().map(|i| raw[i].clone()).collect();
    let prep = PrepConfig::for_model(model.config(), ck.train_seed);
    let samples = prepare_samples(&raw, &prep, Some(&cache_for(data, cache)), jobs)?;
    Ok((ck, model, raw, samples))
}

fn stratum_of(r: &RawSample) -> Result<Option<RiskStratum>> {
    match (r.record.stratum, r.record.biomarker) {
        (Some(s), _) => Ok(Some(s)),
        (None, Some(b)) => Ok(Some(stratify_risk(b)?)),
        (None, None) => Ok(None),
    }
}

fn cmd_eval(a: EvalArgs, jobs: usize) -> Result<()> {
    let (ck, model, raw, samples) = load_for_inference(&a.data, &a.checkpoint, &a.cache, a.split, jobs)?;
    let mut chosen = Vec::new();
    for (r, s) in raw.iter().zip(&samples) {
        let keep = match a.stratum {
            None => true,
            Some(want) => stratum_of(r)? == Some(want.into()),
        };
        if keep {
            chosen.push(s);
        }
    }
    let stratum = a.stratum.map(|s| RiskStratum::from(s).as_str()).unwrap_or("all");
    if chosen.is_empty() {
        return Err(Error::Usage(format!("no samples in stratum '{stratum}'")));
    }
    let eval = evaluate_parallel(&model, &chosen, jobs)?;
    let row = MetricsRow {
        model: model.config().variant.as_str().to_string()
            + if model.config().fuse_biomarker {
                "+biomarker"
            } else {
                ""
            },
        stratum: stratum.into(),
        metrics: eval.metrics,
    };
    std::fs::write(&a.out, metrics_csv(std::slice::from_ref(&row))).map_err(io_err(&a.out))?;
    let mut run = RunManifest::new(
        "eval",
        ck.train_seed,
        serde_json::json!({
            "data": a.data.display().to_string(),
            "checkpoint": a.checkpoint.display().to_string(),
            "out": a.out.display().to_string(),
            "split": a.split,
            "stratum": stratum,
        }),
    );
    data_inputs(&mut run, &a.data, &raw)?;
    record_file(&mut run.inputs, &a.checkpoint)?;
    record_file(&mut run.outputs, &a.out)?;
    run.save(&sibling_manifest(&a.out))?;
    print!("{}", metrics_csv(&[row]));
    Ok(())
}

fn cmd_gradcam(a: GradcamArgs, jobs: usize) -> Result<()> {
    let (ck, model, raw, samples) = load_for_inference(&a.data, &a.checkpoint, &a.cache, a.split, jobs)?;
    if !model.config().variant.uses_convolutions() {
        return Err(letet_core::Error::NoConvFeatureMap.into());
    }
    std::fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let mut run = RunManifest::new(
        "gradcam",
        ck.train_seed,
        serde_json::json!({
            "data": a.data.display().to_string(),
            "checkpoint": a.checkpoint.display().to_string(),
            "out": a.out.display().to_string(),
            "split": a.split,
            "label": a.label,
        }),
    );
    record_file(&mut run.inputs, &a.checkpoint)?;
    let mut written = 0;
    for (r, s) in raw.iter().zip(&samples) {
        if a.label.is_some_and(|l| l != r.record.label) {
            continue;
        }
        let heat = gradcam(&model, s)?;
        if heat.all_zero {
            warn!("{}: Grad-CAM map is identically zero", r.record.name);
        }
        if !r.record.mask.is_empty() {
            info!(
                "{}: top-decile heat in deformation mask {:.3}",
                r.record.name,
                heat.top_decile_mass_in(&r.mask())
            );
        }
        let path = a.out.join(format!("{}.vtk", r.record.name));
        export_heatmap(&path, &s.mesh, &heat)?;
        record_file(&mut run.outputs, &path)?;
        written += 1;
    }
    run.save(&manifest_path(&a.out, "gradcam"))?;
    println!("wrote {written} heatmaps to {}", a.out.display());
    Ok(())
}
