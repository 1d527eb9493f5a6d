//! Evaluation requests: resolve a manifest and agents by constraint,
//! dispatch to one or all of them, and keep the per-evaluation state.
//!
//! Every state change is appended to a JSON-lines journal so a restarted
//! orchestrator still serves finished evaluations and fails the ones it
//! was in the middle of.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{default_top_k, Agent, PredictRequest, PredictResponse};
use crate::canon::to_canonical_line;
use crate::evalstore::{EvalStore, StoreError, StoredEvaluation};
use crate::manifest::ModelManifest;
use crate::pipeline::PipelineOverrides;
use crate::predictor::{InputItem, JobOutput};
use crate::registry::{AgentQuery, AgentRecord, HardwareFilter, HardwareSpec, NamedVersion, Registry, RegistryClient, RegistryError};
use crate::tracing::TraceLevel;
use crate::version::{Version, VersionConstraint};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("unknown evaluation `{0}`")]
    UnknownEvaluation(String),
    #[error("journal: {0}")]
    Journal(#[from] std::io::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispatchMode {
    #[default]
    One,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    pub model: String,
    #[serde(default)]
    pub model_constraint: VersionConstraint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framework: Option<String>,
    #[serde(default)]
    pub framework_constraint: VersionConstraint,
    #[serde(default)]
    pub hardware: HardwareFilter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default)]
    pub inputs: Vec<InputItem>,
    #[serde(default)]
    pub mode: DispatchMode,
    #[serde(default)]
    pub trace_level: TraceLevel,
    #[serde(default)]
    pub overrides: PipelineOverrides,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

impl EvaluationRequest {
    pub fn new(model: &str) -> Self {
        Self {
            model: model.to_string(),
            model_constraint: VersionConstraint::any(),
            framework: None,
            framework_constraint: VersionConstraint::any(),
            hardware: HardwareFilter::default(),
            dataset: None,
            inputs: Vec::new(),
            mode: DispatchMode::One,
            trace_level: TraceLevel::None,
            overrides: PipelineOverrides::default(),
            top_k: default_top_k(),
        }
    }
}

/// An input as echoed back: no payload, just identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRef {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

/// The request without input payloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestEcho {
    pub model: String,
    pub model_constraint: VersionConstraint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framework: Option<String>,
    pub framework_constraint: VersionConstraint,
    pub hardware: HardwareFilter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub inputs: Vec<InputRef>,
    pub mode: DispatchMode,
    pub trace_level: TraceLevel,
    pub overrides: PipelineOverrides,
    pub top_k: usize,
}

impl RequestEcho {
    fn new(req: &EvaluationRequest, inputs: &[InputItem]) -> Self {
        Self {
            model: req.model.clone(),
            model_constraint: req.model_constraint.clone(),
            framework: req.framework.clone(),
            framework_constraint: req.framework_constraint.clone(),
            hardware: req.hardware.clone(),
            dataset: req.dataset.clone(),
            inputs: inputs
                .iter()
                .map(|i| InputRef {
                    name: i.name.clone(),
                    sha256: hex::encode(Sha256::digest(&i.data)),
                    bytes: i.data.len(),
                    label: i.label,
                })
                .collect(),
            mode: req.mode,
            trace_level: req.trace_level,
            overrides: req.overrides.clone(),
            top_k: req.top_k,
        }
    }

    /// Identity of the work, excluding the version and hardware
    /// constraints, which are checked against cached results instead.
    fn cache_key(&self) -> String {
        let key = serde_json::json!({
            "model": self.model.to_ascii_lowercase(),
            "framework": self.framework.as_ref().map(|f| f.to_ascii_lowercase()),
            "dataset": self.dataset,
            "inputs": self.inputs,
            "mode": self.mode,
            "trace_level": self.trace_level,
            "overrides": self.overrides,
            "top_k": self.top_k,
        });
        hex::encode(Sha256::digest(to_canonical_line(&key).as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluationState {
    Pending,
    Running,
    Done,
    Failed,
}

impl EvaluationState {
    pub fn is_terminal(self) -> bool {
        matches!(self, EvaluationState::Done | EvaluationState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResult {
    pub agent_id: String,
    pub address: String,
    pub framework: NamedVersion,
    pub hardware: HardwareSpec,
    pub state: EvaluationState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<JobOutput>,
    pub started_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub evaluation_id: String,
    pub state: EvaluationState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub request: RequestEcho,
    pub cache_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_version: Option<Version>,
    #[serde(default)]
    pub cached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cached_from: Option<String>,
    #[serde(default)]
    pub results: Vec<AgentResult>,
    pub created_at: String,
    pub updated_at: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Where agents are looked up.
pub trait AgentDirectory: Send + Sync {
    fn find(&self, q: &AgentQuery) -> Result<Vec<AgentRecord>, RegistryError>;
}

impl AgentDirectory for Registry {
    fn find(&self, q: &AgentQuery) -> Result<Vec<AgentRecord>, RegistryError> {
        Ok(self.query(q))
    }
}

impl<T: AgentDirectory + ?Sized> AgentDirectory for Arc<T> {
    fn find(&self, q: &AgentQuery) -> Result<Vec<AgentRecord>, RegistryError> {
        (**self).find(q)
    }
}

impl AgentDirectory for RegistryClient {
    fn find(&self, q: &AgentQuery) -> Result<Vec<AgentRecord>, RegistryError> {
        self.query(q)
    }
}

/// How jobs reach agents.
pub trait Dispatcher: Send + Sync {
    fn dispatch(&self, agent: &AgentRecord, req: &PredictRequest, timeout: Duration) -> Result<PredictResponse, String>;
}

/// `POST http://<address>/predict`.
#[derive(Debug, Default)]
pub struct HttpDispatcher;

impl Dispatcher for HttpDispatcher {
    fn dispatch(&self, agent: &AgentRecord, req: &PredictRequest, timeout: Duration) -> Result<PredictResponse, String> {
        let client: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = client
            .post(&format!("http://{}/predict", agent.address))
            .send_json(req)
            .map_err(|e| format!("dispatch to {} failed: {e}", agent.agent_id))?;
        if !resp.status().is_success() {
            let status = resp.status();
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(format!("agent {} answered HTTP {status}: {body}", agent.agent_id));
        }
        resp.body_mut()
            .with_config()
            .limit(1 << 30)
            .read_json()
            .map_err(|e| format!("bad response from {}: {e}", agent.agent_id))
    }
}

/// Calls in-process agents directly, keyed by agent id.
#[derive(Debug, Default)]
pub struct LocalDispatcher {
    agents: HashMap<String, Arc<Agent>>,
}

impl LocalDispatcher {
    pub fn new(agents: impl IntoIterator<Item = Arc<Agent>>) -> Self {
        Self {
            agents: agents.into_iter().map(|a| (a.id().to_string(), a)).collect(),
        }
    }
}

impl Dispatcher for LocalDispatcher {
    fn dispatch(&self, agent: &AgentRecord, req: &PredictRequest, _timeout: Duration) -> Result<PredictResponse, String> {
        let a = self
            .agents
            .get(&agent.agent_id)
            .ok_or_else(|| format!("agent {} is not reachable", agent.agent_id))?;
        a.handle(req).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    /// Journal and result store location; memory only when `None`.
    pub data_dir: Option<PathBuf>,
    pub dispatch_timeout: Duration,
    /// Dataset name to directory of images.
    pub datasets: BTreeMap<String, PathBuf>,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            dispatch_timeout: Duration::from_secs(60),
            datasets: BTreeMap::new(),
        }
    }
}

pub struct Orchestrator {
    catalog: Vec<ModelManifest>,
    directory: Box<dyn AgentDirectory>,
    dispatcher: Arc<dyn Dispatcher>,
    store: Arc<EvalStore>,
    records: RwLock<BTreeMap<String, EvaluationRecord>>,
    order: Mutex<Vec<String>>,
    journal: Option<Mutex<fs::File>>,
    config: OrchestratorConfig,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator")
            .field("catalog", &self.catalog.iter().map(|m| format!("{} {}", m.name, m.version)).collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

const IMAGE_EXTENSIONS: [&str; 5] = ["ppm", "png", "jpg", "jpeg", "pnm"];

/// Images of a dataset directory in name order. Ground truth comes from
/// an optional `ground_truth.txt` of `<file> <class index>` lines.
pub fn load_dataset(dir: &Path) -> Result<Vec<InputItem>, std::io::Error> {
    let mut truth = HashMap::new();
    if let Ok(text) = fs::read_to_string(dir.join("ground_truth.txt")) {
        for line in text.lines() {
            let mut parts = line.split_whitespace();
            if let (Some(f), Some(i)) = (parts.next(), parts.next()) {
                if let Ok(i) = i.parse::<usize>() {
                    truth.insert(f.to_string(), i);
                }
            }
        }
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(InputItem {
                label: truth.get(&name).copied(),
                data: fs::read(&p)?,
                name,
            })
        })
        .collect()
}

impl Orchestrator {
    pub fn new(
        catalog: Vec<ModelManifest>,
        directory: Box<dyn AgentDirectory>,
        dispatcher: Arc<dyn Dispatcher>,
        config: OrchestratorConfig,
    ) -> Result<Arc<Self>, OrchestratorError> {
        let (store, journal, replayed) = match &config.data_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let store = EvalStore::open(dir.join("store"))?;
                let path = dir.join("evaluations.jsonl");
                let replayed = replay_journal(&path)?;
                let file = OpenOptions::new().create(true).append(true).open(&path)?;
                (store, Some(Mutex::new(file)), replayed)
            }
            None => (EvalStore::in_memory(), None, Vec::new()),
        };
        let orch = Arc::new(Self {
            catalog,
            directory,
            dispatcher,
            store: Arc::new(store),
            records: RwLock::new(BTreeMap::new()),
            order: Mutex::new(Vec::new()),
            journal,
            config,
        });
        for mut rec in replayed {
            if !rec.state.is_terminal() {
                rec.state = EvaluationState::Failed;
                rec.reason = Some("restart".into());
                rec.updated_at = now();
                for r in &mut rec.results {
                    if !r.state.is_terminal() {
                        r.state = EvaluationState::Failed;
                        r.error = Some("restart".into());
                    }
                }
                orch.append_journal(&rec)?;
            }
            orch.order.lock().expect("order poisoned").push(rec.evaluation_id.clone());
            orch.records
                .write()
                .expect("records poisoned")
                .insert(rec.evaluation_id.clone(), rec);
        }
        Ok(orch)
    }

    pub fn store(&self) -> &Arc<EvalStore> {
        &self.store
    }

    pub fn catalog(&self) -> &[ModelManifest] {
        &self.catalog
    }

    fn append_journal(&self, rec: &EvaluationRecord) -> Result<(), std::io::Error> {
        if let Some(j) = &self.journal {
            let mut line = to_canonical_line(rec);
            line.push('\n');
            let mut f = j.lock().expect("journal poisoned");
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        Ok(())
    }

    fn save(&self, rec: EvaluationRecord) {
        if let Err(e) = self.append_journal(&rec) {
            log::error!("journal append failed for {}: {e}", rec.evaluation_id);
        }
        self.records
            .write()
            .expect("records poisoned")
            .insert(rec.evaluation_id.clone(), rec);
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut EvaluationRecord)) {
        let rec = {
            let mut records = self.records.write().expect("records poisoned");
            let Some(rec) = records.get_mut(id) else { return };
            f(rec);
            rec.updated_at = now();
            rec.clone()
        };
        if let Err(e) = self.append_journal(&rec) {
            log::error!("journal append failed for {id}: {e}");
        }
    }

    /// Highest catalog version satisfying the request.
    pub fn resolve_manifest(&self, req: &EvaluationRequest) -> Option<&ModelManifest> {
        self.catalog
            .iter()
            .filter(|m| {
                m.name.eq_ignore_ascii_case(&req.model)
                    && req.model_constraint.satisfies(&m.version)
                    && req
                        .framework
                        .as_deref()
                        .is_none_or(|f| f.eq_ignore_ascii_case(&m.framework.name))
            })
            .max_by(|a, b| a.version.cmp(&b.version))
    }

    /// Agents able to run `manifest` under the request's constraints, each
    /// with the framework version it would use.
    pub fn candidates(
        &self,
        req: &EvaluationRequest,
        manifest: &ModelManifest,
    ) -> Result<Vec<(AgentRecord, NamedVersion)>, RegistryError> {
        let q = AgentQuery {
            model: Some(manifest.name.clone()),
            model_constraint: Some(exact(&manifest.version)),
            framework: Some(manifest.framework.name.clone()),
            framework_constraint: Some(req.framework_constraint.clone()),
            hardware: req.hardware.clone(),
        };
        Ok(self
            .directory
            .find(&q)?
            .into_iter()
            .filter_map(|a| {
                let fw = a
                    .frameworks
                    .iter()
                    .find(|f| {
                        f.name.eq_ignore_ascii_case(&manifest.framework.name)
                            && req.framework_constraint.satisfies(&f.version)
                            && manifest.framework.version_constraint.satisfies(&f.version)
                    })?
                    .clone();
                Some((a, fw))
            })
            .collect())
    }

    fn inputs_for(&self, req: &EvaluationRequest) -> Result<Vec<InputItem>, OrchestratorError> {
        let mut inputs = req.inputs.clone();
        if let Some(name) = &req.dataset {
            let dir = self
                .config
                .datasets
                .get(name)
                .ok_or_else(|| OrchestratorError::Invalid(format!("unknown dataset `{name}`")))?;
            inputs.extend(load_dataset(dir).map_err(|e| OrchestratorError::Invalid(format!("dataset `{name}`: {e}")))?);
        }
        if inputs.is_empty() {
            return Err(OrchestratorError::Invalid("no inputs and no dataset".into()));
        }
        Ok(inputs)
    }

    /// A finished evaluation of the same work whose concrete versions and
    /// hardware satisfy this request.
    /// With `mode=all` the hit must also cover every agent that would be
    /// dispatched to now.
    pub fn check_cache(&self, req: &EvaluationRequest, key: &str) -> Option<EvaluationRecord> {
        let required: Vec<String> = match req.mode {
            DispatchMode::One => Vec::new(),
            DispatchMode::All => {
                let manifest = self.resolve_manifest(req)?;
                self.candidates(req, manifest)
                    .ok()?
                    .into_iter()
                    .map(|(a, _)| a.agent_id)
                    .collect()
            }
        };
        let records = self.records.read().expect("records poisoned");
        let order = self.order.lock().expect("order poisoned");
        order.iter().rev().filter_map(|id| records.get(id)).find(|r| {
            r.state == EvaluationState::Done
                && !r.cached
                && r.cache_key == key
                && r.manifest_version.as_ref().is_some_and(|v| req.model_constraint.satisfies(v))
                && r.results.iter().any(|a| a.state == EvaluationState::Done)
                && r.results.iter().filter(|a| a.state == EvaluationState::Done).all(|a| {
                    req.framework_constraint.satisfies(&a.framework.version) && req.hardware.matches(&a.hardware)
                })
                && required.iter().all(|id| {
                    r.results
                        .iter()
                        .any(|a| &a.agent_id == id && a.state == EvaluationState::Done)
                })
        })
        .cloned()
    }

    /// Accepts a request and returns its id; dispatch continues on a
    /// background thread.
    pub fn submit(self: &Arc<Self>, req: EvaluationRequest) -> Result<String, OrchestratorError> {
        if req.model.trim().is_empty() {
            return Err(OrchestratorError::Invalid("model name is empty".into()));
        }
        let inputs = self.inputs_for(&req)?;
        let echo = RequestEcho::new(&req, &inputs);
        let key = echo.cache_key();
        let id = uuid::Uuid::new_v4().to_string();
        let stamp = now();
        let mut rec = EvaluationRecord {
            evaluation_id: id.clone(),
            state: EvaluationState::Pending,
            reason: None,
            request: echo,
            cache_key: key.clone(),
            manifest_version: None,
            cached: false,
            cached_from: None,
            results: Vec::new(),
            created_at: stamp.clone(),
            updated_at: stamp,
        };
        if let Some(hit) = self.check_cache(&req, &key) {
            rec.state = EvaluationState::Done;
            rec.cached = true;
            rec.cached_from = Some(hit.evaluation_id.clone());
            rec.manifest_version = hit.manifest_version.clone();
            rec.results = hit.results.clone();
            self.order.lock().expect("order poisoned").push(id.clone());
            self.save(rec);
            return Ok(id);
        }
        self.order.lock().expect("order poisoned").push(id.clone());
        self.save(rec);
        let this = Arc::clone(self);
        let run_id = id.clone();
        std::thread::Builder::new()
            .name(format!("eval-{}", &id[..8]))
            .spawn(move || this.run(&run_id, req, inputs))
            .map_err(OrchestratorError::Journal)?;
        Ok(id)
    }

    fn fail(&self, id: &str, reason: String) {
        self.update(id, |r| {
            r.state = EvaluationState::Failed;
            r.reason = Some(reason);
        });
    }

    fn run(self: Arc<Self>, id: &str, req: EvaluationRequest, inputs: Vec<InputItem>) {
        self.update(id, |r| r.state = EvaluationState::Running);
        let Some(manifest) = self.resolve_manifest(&req).cloned() else {
            self.fail(id, "no-matching-model".into());
            return;
        };
        self.update(id, |r| r.manifest_version = Some(manifest.version.clone()));
        let mut agents = match self.candidates(&req, &manifest) {
            Ok(a) => a,
            Err(e) => {
                self.fail(id, format!("registry: {e}"));
                return;
            }
        };
        if agents.is_empty() {
            self.fail(id, "no-matching-agent".into());
            return;
        }
        if req.mode == DispatchMode::One {
            agents.truncate(1);
        }
        let job = Arc::new(PredictRequest {
            manifest: manifest.to_yaml(),
            inputs,
            trace_level: req.trace_level,
            overrides: req.overrides.clone(),
            top_k: req.top_k,
        });
        self.update(id, |r| {
            r.results = agents
                .iter()
                .map(|(a, fw)| AgentResult {
                    agent_id: a.agent_id.clone(),
                    address: a.address.clone(),
                    framework: fw.clone(),
                    hardware: a.hardware.clone(),
                    state: EvaluationState::Running,
                    error: None,
                    latency_ms: None,
                    output: None,
                    started_at: now(),
                    finished_at: None,
                })
                .collect();
        });

        let handles: Vec<_> = agents
            .into_iter()
            .map(|(agent, fw)| {
                let this = Arc::clone(&self);
                let job = Arc::clone(&job);
                let id = id.to_string();
                let manifest = manifest.clone();
                let req = req.clone();
                std::thread::spawn(move || {
                    let started = Instant::now();
                    let outcome = this.dispatcher.dispatch(&agent, &job, this.config.dispatch_timeout);
                    if let Ok(resp) = &outcome {
                        let stored = StoredEvaluation {
                            evaluation_id: id.clone(),
                            agent_id: agent.agent_id.clone(),
                            model: manifest.name.clone(),
                            model_version: manifest.version.clone(),
                            framework: fw.name.clone(),
                            framework_version: fw.version.clone(),
                            hardware: agent.hardware.clone(),
                            overrides: req.overrides.clone(),
                            trace_level: req.trace_level,
                            latency_ms: resp.elapsed_ms,
                            result: resp.output.clone(),
                            stored_at: now(),
                        };
                        if let Err(e) = this.store.put(stored) {
                            log::error!("storing result of {id}: {e}");
                        }
                    }
                    this.update(&id, |r| {
                        if let Some(slot) = r.results.iter_mut().find(|x| x.agent_id == agent.agent_id) {
                            slot.finished_at = Some(now());
                            match outcome {
                                Ok(resp) => {
                                    slot.state = EvaluationState::Done;
                                    slot.latency_ms = Some(resp.elapsed_ms);
                                    slot.output = Some(resp.output);
                                }
                                Err(e) => {
                                    slot.state = EvaluationState::Failed;
                                    slot.error = Some(e);
                                    slot.latency_ms = Some(started.elapsed().as_secs_f64() * 1e3);
                                }
                            }
                        }
                    });
                })
            })
            .collect();
        for h in handles {
            let _ = h.join();
        }
        self.update(id, |r| {
            let failed: Vec<String> = r
                .results
                .iter()
                .filter(|a| a.state == EvaluationState::Failed)
                .map(|a| format!("{}: {}", a.agent_id, a.error.as_deref().unwrap_or("failed")))
                .collect();
            if failed.len() == r.results.len() {
                r.state = EvaluationState::Failed;
                r.reason = Some(format!("agent-failure: {}", failed.join("; ")));
            } else {
                r.state = EvaluationState::Done;
                if !failed.is_empty() {
                    r.reason = Some(format!("partial: {}", failed.join("; ")));
                }
            }
        });
    }

    pub fn get(&self, id: &str) -> Result<EvaluationRecord, OrchestratorError> {
        self.records
            .read()
            .expect("records poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| OrchestratorError::UnknownEvaluation(id.to_string()))
    }

    /// Evaluations in submission order, optionally for one model.
    pub fn list(&self, model: Option<&str>) -> Vec<EvaluationRecord> {
        let records = self.records.read().expect("records poisoned");
        let order = self.order.lock().expect("order poisoned");
        order
            .iter()
            .filter_map(|id| records.get(id))
            .filter(|r| model.is_none_or(|m| r.request.model.eq_ignore_ascii_case(m)))
            .cloned()
            .collect()
    }

    /// Polls until the evaluation is terminal or `timeout` passes.
    pub fn wait(&self, id: &str, timeout: Duration) -> Result<EvaluationRecord, OrchestratorError> {
        let deadline = Instant::now() + timeout;
        loop {
            let rec = self.get(id)?;
            if rec.state.is_terminal() || Instant::now() >= deadline {
                return Ok(rec);
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }
}

fn exact(v: &Version) -> VersionConstraint {
    VersionConstraint::parse(&format!("={v}")).expect("exact version constraint parses")
}

fn replay_journal(path: &Path) -> Result<Vec<EvaluationRecord>, std::io::Error> {
    let Ok(file) = fs::File::open(path) else {
        return Ok(Vec::new());
    };
    let mut latest: BTreeMap<String, EvaluationRecord> = BTreeMap::new();
    let mut order = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        let Ok(rec) = serde_json::from_str::<EvaluationRecord>(&line) else {
            log::warn!("skipping unreadable journal line");
            continue;
        };
        if !latest.contains_key(&rec.evaluation_id) {
            order.push(rec.evaluation_id.clone());
        }
        latest.insert(rec.evaluation_id.clone(), rec);
    }
    Ok(order.into_iter().filter_map(|id| latest.remove(&id)).collect())
}
