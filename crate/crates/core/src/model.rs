//! The full network, its training and evaluation loops, metrics and the
//! clinical labeling rules.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eigen::truncated_eigenpairs;
use crate::error::{Error, Result};
use crate::landmarks::{fps_select, gp_greedy_select, DiffusionKernelSpec, LandmarkMethod, LandmarkSet};
use crate::lbo::{LboBundle, LboConfig};
use crate::mesh::TetMesh;
use crate::nn::{
    relative_positions, Adam, AdamConfig, AttentionNorm, ChebConv, GradAccumulator, Linear, Matrix, ParamStore,
    PointTransformer, PointwiseMlp, Tape, Var,
};
use crate::tokenize::{assign_patches, build_radius_graph, PatchAssignment, RadiusGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Pointwise MLP, Chebyshev convolutions, patch tokens, transformers.
    #[default]
    LeTetCnn,
    /// Transformers over pooled raw coordinates, no convolutions.
    Le,
    /// Convolutions and patch pooling, no transformers.
    TetCnnOnly,
    /// Logistic regression on the z-scored biomarker alone.
    BiomarkerOnly,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::LeTetCnn => "letetcnn",
            Variant::Le => "le",
            Variant::TetCnnOnly => "tetcnn-only",
            Variant::BiomarkerOnly => "biomarker-only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "letetcnn" | "le-tet-cnn" => Some(Variant::LeTetCnn),
            "le" => Some(Variant::Le),
            "tetcnn-only" | "tet-cnn-only" | "tetcnn" => Some(Variant::TetCnnOnly),
            "biomarker-only" | "biomarker" => Some(Variant::BiomarkerOnly),
            _ => None,
        }
    }

    pub fn uses_convolutions(&self) -> bool {
        matches!(self, Variant::LeTetCnn | Variant::TetCnnOnly)
    }

    pub fn uses_transformers(&self) -> bool {
        matches!(self, Variant::LeTetCnn | Variant::Le)
    }

    pub fn uses_mesh(&self) -> bool {
        !matches!(self, Variant::BiomarkerOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub n_tetcnn_layers: usize,
    pub n_transformer_layers: usize,
    pub cheb_order: usize,
    pub radius: f64,
    pub n_landmarks: usize,
    pub landmark_method: LandmarkMethod,
    pub variant: Variant,
    pub fuse_biomarker: bool,
    pub attention_norm: AttentionNorm,
    pub value_position: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            n_tetcnn_layers: 2,
            n_transformer_layers: 2,
            cheb_order: 3,
            radius: 0.5,
            n_landmarks: 64,
            landmark_method: LandmarkMethod::GpDiffusion,
            variant: Variant::LeTetCnn,
            fuse_biomarker: false,
            attention_norm: AttentionNorm::PerChannel,
            value_position: true,
        }
    }
}

impl ModelConfig {
    /// Narrow network sized for single-core runs on the synthetic benchmark.
    pub fn desk() -> Self {
        Self {
            hidden_dim: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::InvalidConfig("hidden_dim must be positive".into()));
        }
        if self.variant.uses_convolutions() && self.n_tetcnn_layers == 0 {
            return Err(Error::InvalidConfig("n_tetcnn_layers must be positive".into()));
        }
        if self.variant.uses_transformers() && self.n_transformer_layers == 0 {
            return Err(Error::InvalidConfig("n_transformer_layers must be positive".into()));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        if self.n_landmarks == 0 {
            return Err(Error::InvalidConfig("n_landmarks must be positive".into()));
        }
        if self.variant == Variant::BiomarkerOnly && !self.fuse_biomarker {
            return Err(Error::InvalidConfig(
                "biomarker-only variant requires fuse_biomarker".into(),
            ));
        }
        Ok(())
    }

    fn needs_biomarker(&self) -> bool {
        self.fuse_biomarker || self.variant == Variant::BiomarkerOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub micro_batch: usize,
    pub accumulation_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            epochs: 500,
            micro_batch: 2,
            accumulation_steps: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Schedule paired with [`ModelConfig::desk`] on the synthetic benchmark.
    pub fn desk(seed: u64) -> Self {
        Self {
            lr: 1e-3,
            epochs: 60,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("lr and weight_decay must be non-negative".into()));
        }
        if self.epochs == 0 || self.micro_batch == 0 || self.accumulation_steps == 0 {
            return Err(Error::InvalidConfig(
                "epochs, micro_batch and accumulation_steps must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn effective_batch(&self) -> usize {
        self.micro_batch * self.accumulation_steps
    }
}

/// Settings that turn a normalized mesh into model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub lbo: LboConfig,
    pub n_landmarks: usize,
    pub landmark_method: LandmarkMethod,
    pub kernel: DiffusionKernelSpec,
    pub radius: f64,
    pub seed: u64,
}

impl PrepConfig {
    pub fn for_model(config: &ModelConfig, seed: u64) -> Self {
        Self {
            lbo: LboConfig::default(),
            n_landmarks: config.n_landmarks,
            landmark_method: config.landmark_method,
            kernel: DiffusionKernelSpec::default(),
            radius: config.radius,
            seed,
        }
    }
}

/// Selects landmarks on an assembled mesh.
pub fn select_landmarks(mesh: &TetMesh, lbo: &LboBundle, prep: &PrepConfig) -> Result<LandmarkSet> {
    match prep.landmark_method {
        LandmarkMethod::GpDiffusion => {
            let m = prep.kernel.n_eigenpairs.min(mesh.n_vertices());
            let eig = truncated_eigenpairs(&lbo.stiffness, &lbo.lumped_mass, m)?;
            Ok(gp_greedy_select(mesh.vertices(), &eig, &prep.kernel, prep.n_landmarks)?.landmarks)
        }
        LandmarkMethod::Fps => fps_select(mesh.vertices(), prep.n_landmarks, prep.seed),
    }
}

/// One preprocessed mesh with its label and optional biomarker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSample {
    pub mesh: TetMesh,
    pub lbo: LboBundle,
    pub landmarks: LandmarkSet,
    pub patches: PatchAssignment,
    pub graph: RadiusGraph,
    pub radius: f64,
    pub label: u8,
    pub biomarker: Option<f64>,
}

impl MeshSample {
    /// Runs operator assembly, landmark selection and tokenization.
    /// `mesh` is expected to be validated and normalized already.
    pub fn prepare(mesh: TetMesh, label: u8, biomarker: Option<f64>, prep: &PrepConfig) -> Result<Self> {
        let lbo = LboBundle::assemble(&mesh, prep.lbo)?;
        let landmarks = select_landmarks(&mesh, &lbo, prep)?;
        Self::from_parts(mesh, lbo, landmarks, label, biomarker, prep.radius)
    }

    /// Assembles a sample from precomputed operator and landmarks.
    pub fn from_parts(
        mesh: TetMesh,
        lbo: LboBundle,
        landmarks: LandmarkSet,
        label: u8,
        biomarker: Option<f64>,
        radius: f64,
    ) -> Result<Self> {
        if label > 1 {
            return Err(Error::InvalidConfig(format!("label must be 0 or 1, got {label}")));
        }
        if lbo.n_vertices() != mesh.n_vertices() {
            return Err(Error::ShapeMismatch("operator size differs from mesh".into()));
        }
        if let Some(b) = biomarker {
            if !b.is_finite() {
                return Err(Error::NonFinite("biomarker"));
            }
        }
        let patches = assign_patches(mesh.vertices(), &landmarks)?;
        let graph = build_radius_graph(patches.centers(), radius)?;
        Ok(Self {
            mesh,
            lbo,
            landmarks,
            patches,
            graph,
            radius,
            label,
            biomarker,
        })
    }

    /// Same sample with vertices relabeled by `perm` (`new = perm[old]`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mesh = self.mesh.permuted(perm)?;
        let lbo = LboBundle::assemble(&mesh, self.lbo.config)?;
        let landmarks = self.landmarks.permuted(perm);
        Self::from_parts(mesh, lbo, landmarks, self.label, self.biomarker, self.radius)
    }

    pub fn coordinates(&self) -> Matrix {
        let data = self.mesh.vertices().iter().flat_map(|p| p.iter().copied()).collect();
        Matrix::from_vec(self.mesh.n_vertices(), 3, data)
    }
}

/// Training-split statistics used to z-score the biomarker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerStats {
    pub mean: f64,
    pub std: f64,
}

impl BiomarkerStats {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("biomarker values"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = libm::sqrt(var);
        Ok(Self {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        })
    }

    pub fn z(&self, value: f64) -> f64 {
        (value - self.mean) / self.std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layers {
    mlp: Option<PointwiseMlp>,
    convs: Vec<ChebConv>,
    coord_projection: Option<Linear>,
    transformers: Vec<PointTransformer>,
    head: Option<Linear>,
    biomarker_weight: Option<Linear>,
}

impl Layers {
    fn build(config: &ModelConfig, store: &mut ParamStore, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_dim;
        let v = config.variant;
        let mlp = v
            .uses_convolutions()
            .then(|| PointwiseMlp::new(store, "mlp", 3, d, &mut rng));
        let convs = if v.uses_convolutions() {
            (0..config.n_tetcnn_layers)
                .map(|l| ChebConv::new(store, &format!("conv{l}"), d, d, config.cheb_order, &mut rng))
                .collect()
        } else {
            Vec::new()
        };
        let coord_projection = (v == Variant::Le).then(|| Linear::new(store, "coord_proj", 3, d, true, &mut rng));
        let transformers = if v.uses_transformers() {
            (0..config.n_transformer_layers)
                .map(|l| {
                    PointTransformer::new(
                        store,
                        &format!("transformer{l}"),
                        d,
                        config.attention_norm,
                        config.value_position,
                        &mut rng,
                    )
                })
                .collect()
        } else {
            Vec::new()
        };
        let head = v.uses_mesh().then(|| Linear::new(store, "head", d, 1, true, &mut rng));
        let biomarker_weight = config.needs_biomarker().then(|| {
            // The only bias in the biomarker-only model; otherwise the head carries it.
            let bias = !v.uses_mesh();
            Linear::new(store, "head.biomarker", 1, 1, bias, &mut rng)
        });
        Self {
            mlp,
            convs,
            coord_projection,
            transformers,
            head,
            biomarker_weight,
        }
    }
}

/// Intermediate handles from one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub logit: Var,
    /// Output of the last convolution (after its ReLU), `N × d`.
    pub conv_features: Option<Var>,
    /// Last convolution before its ReLU.
    pub conv_preactivation: Option<Var>,
    pub tokens: Option<Var>,
}

/// Serializable model contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub biomarker_stats: Option<BiomarkerStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layers: Layers,
    biomarker_stats: Option<BiomarkerStats>,
}

impl Model {
    /// Fresh model with seeded Xavier-uniform weights and zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layers = Layers::build(&config, &mut params, seed);
        Ok(Self {
            config,
            params,
            layers,
            biomarker_stats: None,
        })
    }

    pub fn from_state(state: ModelState) -> Result<Self> {
        let mut model = Self::new(state.config, 0)?;
        if !model.params.same_layout(&state.params) {
            return Err(Error::InconsistentParams);
        }
        model.params.load_values(state.params.values().to_vec())?;
        model.biomarker_stats = state.biomarker_stats;
        Ok(model)
    }

    pub fn state(&self) -> ModelState {
        ModelState {
            config: self.config.clone(),
            params: self.params.clone(),
            biomarker_stats: self.biomarker_stats,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn biomarker_stats(&self) -> Option<BiomarkerStats> {
        self.biomarker_stats
    }

    pub fn set_biomarker_stats(&mut self, stats: Option<BiomarkerStats>) {
        self.biomarker_stats = stats;
    }

    /// Multiplies every parameter whose name starts with `prefix` by `factor`.
    pub fn scale_params(&mut self, prefix: &str, factor: f64) {
        let ids: Vec<_> = self
            .params
            .ids()
            .filter(|&id| self.params.name(id).starts_with(prefix))
            .collect();
        for id in ids {
            self.params.value_mut(id).scale_assign(factor);
        }
    }

    fn check_sample(&self, sample: &MeshSample) -> Result<()> {
        if !self.config.variant.uses_mesh() {
            return Ok(());
        }
        if sample.landmarks.len() != self.config.n_landmarks {
            return Err(Error::ShapeMismatch(format!(
                "sample has {} landmarks, model expects {}",
                sample.landmarks.len(),
                self.config.n_landmarks
            )));
        }
        if sample.radius != self.config.radius {
            return Err(Error::ShapeMismatch(format!(
                "sample graph radius {} differs from model radius {}",
                sample.radius, self.config.radius
            )));
        }
        Ok(())
    }

    fn biomarker_z(&self, sample: &MeshSample) -> Result<f64> {
        let stats = self
            .biomarker_stats
            .ok_or_else(|| Error::InvalidConfig("biomarker statistics not fitted".into()))?;
        let b = sample
            .biomarker
            .ok_or_else(|| Error::InvalidConfig("sample has no biomarker".into()))?;
        Ok(stats.z(b))
    }

    /// Records the forward pass of one sample on `tape`.
    pub fn forward<'a>(&self, tape: &mut Tape<'a>, sample: &'a MeshSample) -> Result<ForwardOutput> {
        self.check_sample(sample)?;
        let p = &self.params;
        let l = &self.layers;
        let mut conv_features = None;
        let mut conv_preactivation = None;
        let mut tokens = None;
        let mut logit = None;
        if self.config.variant.uses_mesh() {
            let coords = tape.constant(sample.coordinates());
            let mut tok = if let Some(mlp) = &l.mlp {
                let mut h = mlp.forward(tape, p, coords)?;
                for conv in &l.convs {
                    let c = conv.forward(tape, p, h, &sample.lbo.scaled_laplacian)?;
                    conv_preactivation = Some(c);
                    h = tape.relu(c);
                }
                conv_features = Some(h);
                tape.segment_mean(h, sample.patches.labels(), sample.patches.sizes())?
            } else {
                let pooled = tape.segment_mean(coords, sample.patches.labels(), sample.patches.sizes())?;
                l.coord_projection
                    .as_ref()
                    .ok_or(Error::InvalidConfig("missing coordinate projection".into()))?
                    .forward(tape, p, pooled)?
            };
            if !l.transformers.is_empty() {
                let rel = relative_positions(tape, &sample.graph, sample.patches.centers());
                for t in &l.transformers {
                    tok = t.forward(tape, p, tok, &sample.graph, rel)?;
                }
            }
            tokens = Some(tok);
            let pooled = tape.mean_rows(tok)?;
            let head = l.head.as_ref().ok_or(Error::InvalidConfig("missing head".into()))?;
            logit = Some(head.forward(tape, p, pooled)?);
        }
        if let Some(bw) = &l.biomarker_weight {
            let z = tape.constant(Matrix::scalar(self.biomarker_z(sample)?));
            let term = bw.forward(tape, p, z)?;
            logit = Some(match logit {
                Some(m) => tape.add(m, term)?,
                None => term,
            });
        }
        Ok(ForwardOutput {
            logit: logit.ok_or(Error::InvalidConfig("model produces no logit".into()))?,
            conv_features,
            conv_preactivation,
            tokens,
        })
    }

    /// Pre-sigmoid output for one sample.
    pub fn logit(&self, sample: &MeshSample) -> Result<f64> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, sample)?;
        Ok(tape.value(out.logit).get(0, 0))
    }

    pub fn probability(&self, sample: &MeshSample) -> Result<f64> {
        Ok(sigmoid(self.logit(sample)?))
    }

    /// Loss and parameter gradients for one sample.
    pub fn loss_and_grads(&self, sample: &MeshSample) -> Result<(f64, f64, crate::nn::ParamGrads)> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, sample)?;
        let loss = tape.bce_with_logits(out.logit, sample.label as f64)?;
        let grads = tape.backward(loss)?;
        Ok((
            tape.value(loss).get(0, 0),
            tape.value(out.logit).get(0, 0),
            grads.param_grads(&self.params),
        ))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Confusion counts and the ratios derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Metrics {
    pub fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        Self {
            tp,
            tn,
            fp,
            fn_,
            accuracy: ratio(tp + tn, tp + tn + fp + fn_),
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
        }
    }

    /// Positive when `probability ≥ 0.5`.
    pub fn from_predictions(probabilities: &[f64], labels: &[u8]) -> Self {
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for (&p, &y) in probabilities.iter().zip(labels) {
            match (p >= DECISION_THRESHOLD, y == 1) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, tn, fp, fn_)
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub probabilities: Vec<f64>,
    pub mean_loss: f64,
}

/// Sequential evaluation at the 0.5 threshold.
pub fn evaluate(model: &Model, samples: &[&MeshSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let logits = samples.iter().map(|s| model.logit(s)).collect::<Result<Vec<_>>>()?;
    Ok(evaluation_from_logits(
        &logits,
        &samples.iter().map(|s| s.label).collect::<Vec<_>>(),
    ))
}

/// Metrics, probabilities and mean cross-entropy from precomputed logits.
pub fn evaluation_from_logits(logits: &[f64], labels: &[u8]) -> Evaluation {
    let probabilities: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let mean_loss = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| z.max(0.0) - z * y as f64 + libm::log1p(libm::exp(-z.abs())))
        .sum::<f64>()
        / logits.len().max(1) as f64;
    Evaluation {
        metrics: Metrics::from_predictions(&probabilities, labels),
        probabilities,
        mean_loss,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (last epoch without a validation set).
    pub best_epoch: usize,
}

/// Trains in place and leaves the best-validation parameters in `model`.
///
/// Each optimizer step averages the gradients of `micro_batch ×
/// accumulation_steps` samples. The best epoch has the highest validation
/// accuracy, ties going to the lower validation loss, then the earlier epoch.
pub fn train(
    model: &mut Model,
    train_set: &[&MeshSample],
    val_set: &[&MeshSample],
    tcfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with(model, train_set, val_set, tcfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    model: &mut Model,
    train_set: &[&MeshSample],
    val_set: &[&MeshSample],
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    tcfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    for class in 0..=1u8 {
        if train_set.iter().filter(|s| s.label == class).count() < 2 {
            return Err(Error::InvalidConfig(format!(
                "training set needs at least 2 samples of class {class}"
            )));
        }
    }
    if model.config.needs_biomarker() {
        let values = train_set
            .iter()
            .map(|s| {
                s.biomarker
                    .ok_or_else(|| Error::InvalidConfig("training sample without biomarker".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        model.biomarker_stats = Some(BiomarkerStats::fit(&values)?);
    }
    let adam_cfg = AdamConfig {
        lr: tcfg.lr,
        weight_decay: tcfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_cfg, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let batch = tcfg.effective_batch();
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<(f64, f64, usize, ParamStore)> = None;

    for epoch in 0..tcfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut losses = vec![0.0; train_set.len()];
        let mut correct = 0usize;
        for chunk in order.chunks(batch) {
            let mut acc = GradAccumulator::new(&model.params);
            for &i in chunk {
                let (loss, logit, grads) = model.loss_and_grads(train_set[i])?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, sample: i });
                }
                losses[i] = loss;
                if (sigmoid(logit) >= DECISION_THRESHOLD) == (train_set[i].label == 1) {
                    correct += 1;
                }
                acc.add(&grads, 1)?;
            }
            let grads = acc.finish()?;
            adam.step(&mut model.params, &grads)?;
        }
        let train_loss = losses.iter().sum::<f64>() / train_set.len() as f64;
        let (val_accuracy, val_loss) = if val_set.is_empty() {
            (None, None)
        } else {
            let ev = evaluate(model, val_set)?;
            (ev.metrics.accuracy, Some(ev.mean_loss))
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_accuracy,
            val_loss,
        };
        on_epoch(&record);
        history.push(record);
        if let (Some(va), Some(vl)) = (val_accuracy, val_loss) {
            let better = match &best {
                None => true,
                Some((ba, bl, _, _)) => va > *ba || (va == *ba && vl < *bl),
            };
            if better {
                best = Some((va, vl, epoch, model.params.clone()));
            }
        }
    }
    let best_epoch = match best {
        Some((_, _, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => tcfg.epochs - 1,
    };
    Ok(TrainReport { history, best_epoch })
}

/// Stratified train/validation/test index split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits each class 70/15/15 (rounded, test takes the remainder) after a
/// seeded shuffle. Index lists come back sorted.
pub fn stratified_split(labels: &[u8], seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for class in 0..=1u8 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = libm::round(0.70 * n as f64) as usize;
        let n_val = (libm::round(0.15 * n as f64) as usize).min(n - n_train);
        split.train.extend_from_slice(&idx[..n_train]);
        split.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        split.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    split
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskStratum {
    Low,
    Medium,
    High,
}

impl RiskStratum {
    pub fn as_str(&self) -> &'static str {
        match self {
            RiskStratum::Low => "low",
            RiskStratum::Medium => "medium",
            RiskStratum::High => "high",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "low" => Some(RiskStratum::Low),
            "medium" => Some(RiskStratum::Medium),
            "high" => Some(RiskStratum::High),
            _ => None,
        }
    }
}

pub const PTAU217_LOW: f64 = 1.53;
pub const PTAU217_HIGH: f64 = 2.602;
pub const CENTILOID_POSITIVE: f64 = 20.0;

/// pTau-217 risk band: below 1.53 low, above 2.602 high, medium in between (inclusive).
pub fn stratify_risk(biomarker: f64) -> Result<RiskStratum> {
    if !biomarker.is_finite() {
        return Err(Error::NonFinite("biomarker"));
    }
    Ok(if biomarker < PTAU217_LOW {
        RiskStratum::Low
    } else if biomarker <= PTAU217_HIGH {
        RiskStratum::Medium
    } else {
        RiskStratum::High
    })
}

/// Amyloid positivity: 1 iff Centiloid > 20.
pub fn amyloid_label(centiloid: f64) -> Result<u8> {
    if !centiloid.is_finite() {
        return Err(Error::NonFinite("centiloid"));
    }
    Ok((centiloid > CENTILOID_POSITIVE) as u8)
}
