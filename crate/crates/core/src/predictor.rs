//! Predictor agent core: pluggable backends behind one interface, asset
//! download and caching, model sessions, and evaluation jobs.
//!
//! The shipped backends are deterministic stand-ins for real frameworks.
//! `reference_linear` scores per-channel means with a small linear layer,
//! which is enough for color and layout mistakes to change its answer.
//! `bitfile` does the same but first fetches an opaque device image, the
//! way an FPGA agent would.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::image::DecoderRegistry;
use crate::manifest::{
    ColorLayout, DataLayout, ElementType, ModelManifest, OutputKind, Task,
};
use crate::pipeline::{self, PipelineError, PipelineOverrides, Provenance};
use crate::postprocess::{self, AccuracyReport, DetectionFeature, PostprocessError, Prediction};
use crate::tensor::Tensor;
use crate::tracing::{OpenSpan, TraceError, TraceLevel, TraceSpan, Tracer};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("no backend for framework `{framework}`; registered: {}", registered.join(", "))]
    NoBackend { framework: String, registered: Vec<String> },
    #[error("backend `{backend}` does not support {what}")]
    Unsupported { backend: String, what: String },
    #[error("asset {url}: {reason}")]
    Asset { url: String, reason: String },
    #[error("checksum mismatch for {url}: expected {expected}, got {actual}")]
    ChecksumMismatch {
        url: String,
        expected: String,
        actual: String,
    },
    #[error("unsupported asset scheme in `{0}`")]
    Scheme(String),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("input has {actual} elements; expected a multiple of {features}")]
    Shape { actual: usize, features: usize },
    #[error("input element type {actual} does not match the manifest's {expected}")]
    ElementType { expected: ElementType, actual: ElementType },
    #[error("session is closed")]
    Closed,
    #[error("input `{name}`: {source}")]
    Pipeline {
        name: String,
        #[source]
        source: PipelineError,
    },
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{0}")]
    Job(String),
}

// ---------------------------------------------------------------------------
// Reference weights

/// Linear classifier over per-channel means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceWeights {
    pub classes: Vec<String>,
    /// `classes x features`.
    pub weights: Vec<Vec<f32>>,
    pub bias: Vec<f32>,
    #[serde(default = "default_layout")]
    pub expected_layout: DataLayout,
    #[serde(default = "default_color")]
    pub expected_color_layout: ColorLayout,
}

fn default_layout() -> DataLayout {
    DataLayout::Nhwc
}

fn default_color() -> ColorLayout {
    ColorLayout::Rgb
}

impl ReferenceWeights {
    pub fn from_json(bytes: &[u8]) -> Result<Self, PredictorError> {
        let w: Self = serde_json::from_slice(bytes).map_err(|e| PredictorError::Weights(e.to_string()))?;
        w.check()?;
        Ok(w)
    }

    fn check(&self) -> Result<(), PredictorError> {
        let c = self.classes.len();
        let bad = |m: String| Err(PredictorError::Weights(m));
        if c == 0 {
            return bad("no classes".into());
        }
        if self.weights.len() != c || self.bias.len() != c {
            return bad(format!(
                "{c} classes but {} weight rows and {} biases",
                self.weights.len(),
                self.bias.len()
            ));
        }
        let f = self.weights[0].len();
        if f == 0 || self.weights.iter().any(|r| r.len() != f) {
            return bad("weight rows must share a non-zero length".into());
        }
        if self.weights.iter().flatten().chain(&self.bias).any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        Ok(())
    }

    pub fn num_features(&self) -> usize {
        self.weights[0].len()
    }

    /// The shipped red/green/blue/achromatic classifier.
    pub fn color_reference() -> Self {
        Self {
            classes: ["red-dominant", "green-dominant", "blue-dominant", "achromatic"]
                .map(String::from)
                .to_vec(),
            weights: vec![
                vec![2.0, -1.0, -1.0],
                vec![-1.0, 2.0, -1.0],
                vec![-1.0, -1.0, 2.0],
                vec![0.0, 0.0, 0.0],
            ],
            bias: vec![0.0, 0.0, 0.0, 1.0],
            expected_layout: DataLayout::Nhwc,
            expected_color_layout: ColorLayout::Rgb,
        }
    }
}

/// Per-channel means of each sample of `data`, reading the flat buffer the
/// way a backend expecting `layout` would. Only the element count is
/// checked, so a buffer in the other layout is silently misread.
pub fn channel_means(data: &[f32], batch: usize, features: usize, layout: DataLayout) -> Result<Vec<Vec<f64>>, PredictorError> {
    let batch = batch.max(1);
    if data.is_empty() || data.len() % (batch * features) != 0 {
        return Err(PredictorError::Shape {
            actual: data.len(),
            features: batch * features,
        });
    }
    let per_sample = data.len() / batch;
    let plane = per_sample / features;
    Ok(data
        .chunks_exact(per_sample)
        .map(|sample| {
            let mut sums = vec![0f64; features];
            match layout {
                DataLayout::Nhwc => {
                    for px in sample.chunks_exact(features) {
                        for (s, &v) in sums.iter_mut().zip(px) {
                            *s += f64::from(v);
                        }
                    }
                }
                DataLayout::Nchw => {
                    for (s, ch) in sums.iter_mut().zip(sample.chunks_exact(plane)) {
                        *s = ch.iter().map(|&v| f64::from(v)).sum();
                    }
                }
            }
            sums.into_iter().map(|s| s / plane as f64).collect()
        })
        .collect())
}

pub fn softmax(logits: &[f64]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / total) as f32).collect()
}

// ---------------------------------------------------------------------------
// Backends

/// What a backend needs to build a model.
#[derive(Debug, Clone)]
pub struct LoadContext<'a> {
    pub manifest: &'a ModelManifest,
    pub graph: &'a Path,
    pub weights: Option<&'a Path>,
}

/// A model built by a backend. Calls on one model are serialized by the
/// owning session.
pub trait LoadedModel: Send + Sync {
    /// Output tensors in manifest output order.
    fn predict(&self, input: &Tensor, tracer: &Tracer, parent: &OpenSpan) -> Result<Vec<Tensor>, PredictorError>;

    /// Facts about the loaded model worth recording.
    fn describe(&self) -> serde_json::Value;
}

pub trait PredictorBackend: Send + Sync {
    fn kind(&self) -> &'static str;

    fn tasks(&self) -> &'static [Task];

    fn load(&self, ctx: &LoadContext<'_>) -> Result<Box<dyn LoadedModel>, PredictorError>;
}

struct LinearModel {
    weights: ReferenceWeights,
    kind: &'static str,
    facts: serde_json::Value,
}

impl LoadedModel for LinearModel {
    fn predict(&self, input: &Tensor, tracer: &Tracer, parent: &OpenSpan) -> Result<Vec<Tensor>, PredictorError> {
        use TraceLevel::{Framework, Layer, Library};
        let w = &self.weights;
        let framework = tracer.start(Framework, &format!("{}.predict", self.kind), Some(parent));
        let batch = input.dims.first().copied().unwrap_or(1);

        let span = tracer.start(Layer, "channel_mean", Some(&framework));
        let mut feats = channel_means(&input.data, batch, w.num_features(), w.expected_layout)?;
        if w.expected_color_layout == ColorLayout::Bgr {
            feats.iter_mut().for_each(|f| f.reverse());
        }
        tracer.end(span, &[])?;

        let span = tracer.start(Layer, "fc", Some(&framework));
        let gemv = tracer.start(Library, "gemv", Some(&span));
        let logits: Vec<Vec<f64>> = feats
            .iter()
            .map(|f| {
                w.weights
                    .iter()
                    .zip(&w.bias)
                    .map(|(row, &b)| row.iter().zip(f).map(|(&wi, &x)| f64::from(wi) * x).sum::<f64>() + f64::from(b))
                    .collect()
            })
            .collect();
        tracer.end(gemv, &[])?;
        tracer.end(span, &[])?;

        let span = tracer.start(Layer, "softmax", Some(&framework));
        let probs: Vec<f32> = logits.iter().flat_map(|l| softmax(l)).collect();
        tracer.end(span, &[])?;
        tracer.end(framework, &[("batch", batch.to_string())])?;

        let out = Tensor::new(vec![feats.len(), w.classes.len()], DataLayout::Nhwc, ElementType::Float32, probs)
            .expect("probability dims match");
        Ok(vec![out])
    }

    fn describe(&self) -> serde_json::Value {
        self.facts.clone()
    }
}

fn read_asset(path: &Path) -> Result<Vec<u8>, PredictorError> {
    fs::read(path).map_err(|e| PredictorError::Asset {
        url: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn classification_only(kind: &str, manifest: &ModelManifest) -> Result<(), PredictorError> {
    if manifest.task != Task::Classification {
        return Err(PredictorError::Unsupported {
            backend: kind.to_string(),
            what: format!("task `{}`", manifest.task),
        });
    }
    Ok(())
}

/// Weights JSON is the model graph.
#[derive(Debug, Default)]
pub struct ReferenceLinearBackend;

impl PredictorBackend for ReferenceLinearBackend {
    fn kind(&self) -> &'static str {
        "reference_linear"
    }

    fn tasks(&self) -> &'static [Task] {
        &[Task::Classification]
    }

    fn load(&self, ctx: &LoadContext<'_>) -> Result<Box<dyn LoadedModel>, PredictorError> {
        classification_only(self.kind(), ctx.manifest)?;
        let weights = ReferenceWeights::from_json(&read_asset(ctx.graph)?)?;
        Ok(Box::new(LinearModel {
            facts: serde_json::json!({
                "class_names": weights.classes,
                "features": weights.num_features(),
                "expected_layout": weights.expected_layout,
                "expected_color_layout": weights.expected_color_layout,
            }),
            weights,
            kind: self.kind(),
        }))
    }
}

/// `graph_path` is an opaque device image that is fetched and recorded;
/// `weights_path` carries the reference weights.
#[derive(Debug, Default)]
pub struct BitfileBackend;

impl PredictorBackend for BitfileBackend {
    fn kind(&self) -> &'static str {
        "bitfile"
    }

    fn tasks(&self) -> &'static [Task] {
        &[Task::Classification]
    }

    fn load(&self, ctx: &LoadContext<'_>) -> Result<Box<dyn LoadedModel>, PredictorError> {
        classification_only(self.kind(), ctx.manifest)?;
        let bitfile = read_asset(ctx.graph)?;
        let weights_path = ctx.weights.ok_or_else(|| PredictorError::Weights("bitfile models need a weights_path".into()))?;
        let weights = ReferenceWeights::from_json(&read_asset(weights_path)?)?;
        Ok(Box::new(LinearModel {
            facts: serde_json::json!({
                "bitfile_sha256": hex::encode(Sha256::digest(&bitfile)),
                "bitfile_bytes": bitfile.len(),
                "class_names": weights.classes,
            }),
            weights,
            kind: self.kind(),
        }))
    }
}

/// Backends keyed by framework name (case-insensitive).
#[derive(Clone, Default)]
pub struct BackendRegistry {
    by_framework: BTreeMap<String, Arc<dyn PredictorBackend>>,
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.by_framework.iter().map(|(k, v)| (k, v.kind())))
            .finish()
    }
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, framework: &str, backend: Arc<dyn PredictorBackend>) {
        self.by_framework.insert(framework.to_ascii_lowercase(), backend);
    }

    pub fn backend_by_kind(kind: &str) -> Option<Arc<dyn PredictorBackend>> {
        match kind {
            "reference_linear" => Some(Arc::new(ReferenceLinearBackend)),
            "bitfile" => Some(Arc::new(BitfileBackend)),
            _ => None,
        }
    }

    pub fn get(&self, framework: &str) -> Result<&Arc<dyn PredictorBackend>, PredictorError> {
        self.by_framework
            .get(&framework.to_ascii_lowercase())
            .ok_or_else(|| PredictorError::NoBackend {
                framework: framework.to_string(),
                registered: self.frameworks(),
            })
    }

    pub fn frameworks(&self) -> Vec<String> {
        self.by_framework.keys().cloned().collect()
    }
}

// ---------------------------------------------------------------------------
// Assets

/// Content-addressed download cache: `<root>/<sha256>/<basename>`.
#[derive(Debug)]
pub struct AssetCache {
    root: PathBuf,
    known: Mutex<HashMap<(String, Option<String>), PathBuf>>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    downloads: AtomicUsize,
}

impl AssetCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            known: Mutex::new(HashMap::new()),
            locks: Mutex::new(HashMap::new()),
            downloads: AtomicUsize::new(0),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Number of fetches that actually read from the source.
    pub fn downloads(&self) -> usize {
        self.downloads.load(Ordering::SeqCst)
    }

    /// Local path of `url`, fetching it on a miss. With a checksum the
    /// content is verified and a mismatch leaves nothing behind.
    pub fn fetch(&self, url: &str, checksum: Option<&str>) -> Result<PathBuf, PredictorError> {
        let checksum = checksum.map(str::to_ascii_lowercase);
        let key = (url.to_string(), checksum.clone());
        if let Some(p) = self.cached(&key) {
            return Ok(p);
        }
        let lock = {
            let mut locks = self.locks.lock().expect("lock table poisoned");
            locks.entry(url.to_string()).or_default().clone()
        };
        let _guard = lock.lock().expect("asset lock poisoned");
        if let Some(p) = self.cached(&key) {
            return Ok(p);
        }
        let base = basename(url);
        if let Some(sum) = &checksum {
            let path = self.root.join(sum).join(&base);
            if path.is_file() {
                self.known.lock().expect("cache index poisoned").insert(key, path.clone());
                return Ok(path);
            }
        }
        let bytes = self.download(url)?;
        self.downloads.fetch_add(1, Ordering::SeqCst);
        let digest = hex::encode(Sha256::digest(&bytes));
        if let Some(expected) = &checksum {
            if *expected != digest {
                return Err(PredictorError::ChecksumMismatch {
                    url: url.to_string(),
                    expected: expected.clone(),
                    actual: digest,
                });
            }
        }
        let dir = self.root.join(&digest);
        let path = dir.join(&base);
        let io = |e: std::io::Error| PredictorError::Asset {
            url: url.to_string(),
            reason: e.to_string(),
        };
        if !path.is_file() {
            fs::create_dir_all(&dir).map_err(io)?;
            let tmp = dir.join(format!(".{base}.{}", uuid::Uuid::new_v4().simple()));
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(&bytes).map_err(io)?;
            f.sync_all().map_err(io)?;
            fs::rename(&tmp, &path).map_err(io)?;
        }
        self.known.lock().expect("cache index poisoned").insert(key, path.clone());
        Ok(path)
    }

    fn cached(&self, key: &(String, Option<String>)) -> Option<PathBuf> {
        self.known
            .lock()
            .expect("cache index poisoned")
            .get(key)
            .filter(|p| p.is_file())
            .cloned()
    }

    fn download(&self, url: &str) -> Result<Vec<u8>, PredictorError> {
        let fail = |reason: String| PredictorError::Asset {
            url: url.to_string(),
            reason,
        };
        if let Some(path) = url.strip_prefix("file://") {
            return fs::read(path).map_err(|e| fail(e.to_string()));
        }
        if url.starts_with("http://") || url.starts_with("https://") {
            let resp = ureq::get(url).call().map_err(|e| fail(e.to_string()))?;
            let mut bytes = Vec::new();
            resp.into_body()
                .into_reader()
                .read_to_end(&mut bytes)
                .map_err(|e| fail(e.to_string()))?;
            return Ok(bytes);
        }
        Err(PredictorError::Scheme(url.to_string()))
    }
}

fn basename(url: &str) -> String {
    let path = url.split(['?', '#']).next().unwrap_or(url);
    match path.rsplit('/').next() {
        Some(b) if !b.is_empty() => b.to_string(),
        _ => "asset".to_string(),
    }
}

/// Makes relative source paths absolute `file://` URLs under `dir`.
pub fn anchor_sources(manifest: &mut ModelManifest, dir: &Path) {
    if manifest.source.base_url.is_some() {
        return;
    }
    let anchor = |p: &str| -> String {
        if p.contains("://") {
            p.to_string()
        } else {
            let abs = dir.join(p);
            let abs = abs.canonicalize().unwrap_or(abs);
            format!("file://{}", abs.display())
        }
    };
    manifest.source.graph_path = anchor(&manifest.source.graph_path);
    if let Some(w) = &manifest.source.weights_path {
        manifest.source.weights_path = Some(anchor(w));
    }
    for out in &mut manifest.outputs {
        if let Some(f) = &out.features_url {
            out.features_url = Some(anchor(f));
        }
    }
}

// ---------------------------------------------------------------------------
// Sessions

/// Where an agent runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Platform {
    pub architecture: String,
    pub device: String,
}

impl Platform {
    /// Host architecture in container-map naming, on the CPU.
    pub fn host() -> Self {
        let architecture = match std::env::consts::ARCH {
            "x86_64" => "amd64",
            "aarch64" => "arm64",
            "powerpc64" => "ppc64le",
            other => other,
        };
        Self {
            architecture: architecture.to_string(),
            device: "cpu".to_string(),
        }
    }
}

/// Prepares the execution environment for a model. The local hook does
/// nothing and just reports which container would have been used.
pub trait Provisioner: Send + Sync {
    fn provision(&self, manifest: &ModelManifest, platform: &Platform) -> Result<Option<String>, PredictorError>;
}

#[derive(Debug, Default)]
pub struct LocalProvisioner;

impl Provisioner for LocalProvisioner {
    fn provision(&self, manifest: &ModelManifest, platform: &Platform) -> Result<Option<String>, PredictorError> {
        Ok(manifest
            .resolve_container(&platform.architecture, &platform.device)
            .ok()
            .map(str::to_string))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub field: String,
    pub url: String,
    pub sha256: String,
}

/// A loaded model ready for prediction.
pub struct PredictorSession {
    pub id: String,
    pub manifest: ModelManifest,
    pub backend: &'static str,
    pub platform: Platform,
    pub container: Option<String>,
    /// Environment the model asks for; recorded, not applied to the process.
    pub environment: BTreeMap<String, String>,
    pub assets: Vec<AssetRecord>,
    pub model_info: serde_json::Value,
    model: Mutex<Option<Box<dyn LoadedModel>>>,
}

impl std::fmt::Debug for PredictorSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PredictorSession")
            .field("id", &self.id)
            .field("model", &self.manifest.name)
            .field("backend", &self.backend)
            .finish_non_exhaustive()
    }
}

impl PredictorSession {
    /// Layer names of the inputs and outputs, positional names where the
    /// manifest gives none.
    pub fn input_names(&self) -> Vec<String> {
        self.manifest
            .inputs
            .iter()
            .enumerate()
            .map(|(i, s)| s.layer_name.clone().unwrap_or_else(|| format!("input_{i}")))
            .collect()
    }

    pub fn output_names(&self) -> Vec<String> {
        self.manifest
            .outputs
            .iter()
            .enumerate()
            .map(|(i, s)| s.layer_name.clone().unwrap_or_else(|| format!("output_{i}")))
            .collect()
    }

    pub fn close(&self) {
        self.model.lock().expect("session poisoned").take();
    }

    pub fn is_closed(&self) -> bool {
        self.model.lock().expect("session poisoned").is_none()
    }
}

/// Everything [`load_model`] draws on.
pub struct Runtime {
    pub backends: BackendRegistry,
    pub assets: AssetCache,
    pub decoders: DecoderRegistry,
    pub provisioner: Box<dyn Provisioner>,
    pub platform: Platform,
}

impl Runtime {
    pub fn new(backends: BackendRegistry, cache_root: impl Into<PathBuf>) -> Self {
        Self {
            backends,
            assets: AssetCache::new(cache_root),
            decoders: DecoderRegistry::default(),
            provisioner: Box::new(LocalProvisioner),
            platform: Platform::host(),
        }
    }
}

/// Provisions, fetches assets and builds the backend model.
pub fn load_model(manifest: &ModelManifest, rt: &Runtime) -> Result<PredictorSession, PredictorError> {
    let backend = rt.backends.get(&manifest.framework.name)?.clone();
    if !backend.tasks().contains(&manifest.task) {
        return Err(PredictorError::Unsupported {
            backend: backend.kind().to_string(),
            what: format!("task `{}`", manifest.task),
        });
    }
    let container = rt.provisioner.provision(manifest, &rt.platform)?;
    let mut assets = Vec::new();
    let mut fetch = |field: &str, url: String| -> Result<PathBuf, PredictorError> {
        let checksum = manifest.source.checksums.get(field).map(String::as_str);
        let path = rt.assets.fetch(&url, checksum)?;
        let sha256 = path
            .parent()
            .and_then(Path::file_name)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        assets.push(AssetRecord {
            field: field.to_string(),
            url,
            sha256,
        });
        Ok(path)
    };
    let graph = fetch("graph_path", manifest.source.graph_url())?;
    let weights = manifest.source.weights_url().map(|u| fetch("weights_path", u)).transpose()?;
    let model = backend.load(&LoadContext {
        manifest,
        graph: &graph,
        weights: weights.as_deref(),
    })?;
    Ok(PredictorSession {
        id: uuid::Uuid::new_v4().to_string(),
        manifest: manifest.clone(),
        backend: backend.kind(),
        platform: rt.platform.clone(),
        container,
        environment: manifest.envvars.iter().cloned().collect(),
        assets,
        model_info: model.describe(),
        model: Mutex::new(Some(model)),
    })
}

/// Runs one batch. Outputs are keyed by output layer name.
pub fn predict(
    session: &PredictorSession,
    input: &Tensor,
    tracer: &Tracer,
    parent: &OpenSpan,
) -> Result<IndexMap<String, Tensor>, PredictorError> {
    if let Some(spec) = session.manifest.inputs.first() {
        if spec.element_type != input.element_type {
            return Err(PredictorError::ElementType {
                expected: spec.element_type,
                actual: input.element_type,
            });
        }
    }
    let guard = session.model.lock().expect("session poisoned");
    let model = guard.as_ref().ok_or(PredictorError::Closed)?;
    let outputs = model.predict(input, tracer, parent)?;
    let names = session.output_names();
    let kinds: Vec<OutputKind> = session.manifest.outputs.iter().map(|o| o.kind).collect();
    // backends emit in output-kind order; map onto the manifest's outputs
    let mut keyed = IndexMap::new();
    let mut produced = outputs.into_iter();
    for (name, kind) in names.iter().zip(&kinds) {
        if *kind == OutputKind::Probability {
            if let Some(t) = produced.next() {
                keyed.insert(name.clone(), t);
            }
        }
    }
    Ok(keyed)
}

// ---------------------------------------------------------------------------
// Evaluation jobs

/// One raw input to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputItem {
    pub name: String,
    #[serde(with = "b64")]
    pub data: Vec<u8>,
    /// Ground-truth class index, for accuracy scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

mod b64 {
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(s.as_bytes())
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputOutcome {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<Prediction>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detections: Vec<DetectionFeature>,
    pub provenance: Provenance,
}

/// Result of running a job on one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutput {
    pub model: String,
    pub model_version: String,
    pub framework: String,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub container: Option<String>,
    pub environment: BTreeMap<String, String>,
    pub outputs: Vec<InputOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<AccuracyReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceSpan>,
}

#[derive(Debug, Clone)]
pub struct JobOptions {
    pub top_k: usize,
    pub trace_level: TraceLevel,
    pub overrides: PipelineOverrides,
    /// Class labels; defaults to the backend's class names.
    pub labels: Option<Vec<String>>,
}

impl Default for JobOptions {
    fn default() -> Self {
        Self {
            top_k: 5,
            trace_level: TraceLevel::None,
            overrides: PipelineOverrides::default(),
            labels: None,
        }
    }
}

/// Loads labels from the probability output's `features_url`, if any.
pub fn load_manifest_labels(manifest: &ModelManifest, rt: &Runtime) -> Option<Vec<String>> {
    let url = manifest.output(OutputKind::Probability)?.features_url.as_ref()?;
    let url = manifest.source.resolve(url);
    let path = rt.assets.fetch(&url, None).ok()?;
    let text = fs::read_to_string(path).ok()?;
    Some(postprocess::load_labels(&text))
}

/// Pre-processes every input, predicts, ranks, and scores.
pub fn run_job(
    session: &PredictorSession,
    rt: &Runtime,
    inputs: &[InputItem],
    opts: &JobOptions,
) -> Result<JobOutput, PredictorError> {
    let manifest = &session.manifest;
    let spec = manifest
        .inputs
        .first()
        .ok_or_else(|| PredictorError::Job("manifest has no inputs".into()))?;
    let spec = opts.overrides.apply(spec).map_err(|e| PredictorError::Pipeline {
        name: "overrides".into(),
        source: e.into(),
    })?;
    let tracer = Tracer::new(opts.trace_level, &session.id[..8]);
    let app = tracer.start(TraceLevel::Application, "evaluate", None);
    let model_span = tracer.start(TraceLevel::Model, &manifest.name, Some(&app));

    let labels = match &opts.labels {
        Some(l) => Some(l.clone()),
        None => load_manifest_labels(manifest, rt),
    };
    let mut outcomes = Vec::with_capacity(inputs.len());
    let mut rankings = Vec::new();
    let mut truth = Vec::new();
    for item in inputs {
        let pre = tracer.start(TraceLevel::Model, "preprocess", Some(&model_span));
        let out = pipeline::run_pipeline_with_decoder(&spec, &item.data, &rt.decoders, opts.overrides.jpeg_decoder())
            .map_err(|e| PredictorError::Pipeline {
                name: item.name.clone(),
                source: e,
            })?;
        tracer.end(pre, &[("input", item.name.clone())])?;

        let outputs = predict(session, &out.tensor, &tracer, &model_span)?;
        let probs = outputs
            .values()
            .next()
            .ok_or_else(|| PredictorError::Job("model produced no probability output".into()))?;
        let classes = probs.dims.last().copied().unwrap_or(0);
        let names: Vec<String> = match &labels {
            Some(l) if l.len() == classes => l.clone(),
            _ => class_names(session, classes),
        };
        let ranked = postprocess::top_k(probs, opts.top_k.min(classes), &names)?;
        let predictions = ranked.into_iter().next().unwrap_or_default();
        if let Some(label) = item.label {
            rankings.push(predictions.clone());
            truth.push(label);
        }
        outcomes.push(InputOutcome {
            name: item.name.clone(),
            predictions,
            detections: Vec::new(),
            provenance: out.provenance,
        });
    }
    tracer.end(model_span, &[])?;
    tracer.end(app, &[("wall_clock", chrono::Utc::now().to_rfc3339())])?;
    let metrics = if truth.is_empty() {
        None
    } else {
        Some(postprocess::score_accuracy(&rankings, &truth)?)
    };
    Ok(JobOutput {
        model: manifest.name.clone(),
        model_version: manifest.version.to_string(),
        framework: manifest.framework.name.clone(),
        backend: session.backend.to_string(),
        container: session.container.clone(),
        environment: session.environment.clone(),
        outputs: outcomes,
        metrics,
        trace: tracer.finish()?,
    })
}

fn class_names(session: &PredictorSession, classes: usize) -> Vec<String> {
    let from_model: Vec<String> = session
        .model_info
        .get("class_names")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or_default();
    if from_model.len() == classes {
        return from_model;
    }
    (0..classes).map(|i| format!("class_{i}")).collect()
}
