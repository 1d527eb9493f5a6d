//! A predictor agent: sessions cached per manifest, jobs received over the
//! dispatch protocol, and a call counter for observing dispatch.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::manifest::{parse_manifest, validate_manifest, ModelManifest};
use crate::pipeline::PipelineOverrides;
use crate::predictor::{load_model, run_job, InputItem, JobOptions, JobOutput, PredictorError, PredictorSession, Runtime};
use crate::registry::{AgentRecord, NamedVersion};
use crate::tracing::TraceLevel;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("agent busy: {0} jobs already queued")]
    Busy(usize),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

/// Body of `POST /predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    /// Manifest document text.
    pub manifest: String,
    pub inputs: Vec<InputItem>,
    #[serde(default)]
    pub trace_level: TraceLevel,
    #[serde(default)]
    pub overrides: PipelineOverrides,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

pub fn default_top_k() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub agent_id: String,
    pub output: JobOutput,
    /// Time spent executing the job on the agent.
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStats {
    pub predict_calls: usize,
    pub sessions: usize,
}

pub struct Agent {
    record: AgentRecord,
    runtime: Runtime,
    sessions: Mutex<HashMap<String, Arc<PredictorSession>>>,
    predict_calls: AtomicUsize,
    in_flight: AtomicUsize,
    queue_depth: usize,
    delay: Option<Duration>,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("agent_id", &self.record.agent_id)
            .finish_non_exhaustive()
    }
}

impl Agent {
    /// `queue_depth` is how many jobs may wait behind the running one.
    pub fn new(record: AgentRecord, runtime: Runtime, queue_depth: usize) -> Self {
        Self {
            record,
            runtime,
            sessions: Mutex::new(HashMap::new()),
            predict_calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            queue_depth,
            delay: None,
        }
    }

    /// Sleeps before every job; used to observe partial results.
    pub fn with_delay(mut self, delay: Option<Duration>) -> Self {
        self.delay = delay;
        self
    }

    pub fn id(&self) -> &str {
        &self.record.agent_id
    }

    pub fn record(&self) -> &AgentRecord {
        &self.record
    }

    pub fn set_address(&mut self, address: &str) {
        self.record.address = address.to_string();
    }

    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    pub fn stats(&self) -> AgentStats {
        AgentStats {
            predict_calls: self.predict_calls.load(Ordering::SeqCst),
            sessions: self.sessions.lock().expect("sessions poisoned").len(),
        }
    }

    fn serves(&self, manifest: &ModelManifest) -> Option<&NamedVersion> {
        self.record.frameworks.iter().find(|f| {
            f.name.eq_ignore_ascii_case(&manifest.framework.name) && manifest.framework.version_constraint.satisfies(&f.version)
        })
    }

    fn session(&self, manifest: &ModelManifest) -> Result<Arc<PredictorSession>, AgentError> {
        let key = hex::encode(Sha256::digest(manifest.to_yaml().as_bytes()));
        if let Some(s) = self.sessions.lock().expect("sessions poisoned").get(&key) {
            return Ok(s.clone());
        }
        let session = Arc::new(load_model(manifest, &self.runtime)?);
        let mut sessions = self.sessions.lock().expect("sessions poisoned");
        Ok(sessions.entry(key).or_insert(session).clone())
    }

    /// Runs one dispatched job.
    pub fn handle(&self, req: &PredictRequest) -> Result<PredictResponse, AgentError> {
        self.predict_calls.fetch_add(1, Ordering::SeqCst);
        let waiting = self.in_flight.fetch_add(1, Ordering::SeqCst);
        let _slot = Slot(&self.in_flight);
        if waiting > self.queue_depth {
            return Err(AgentError::Busy(waiting));
        }
        let manifest = parse_manifest(&req.manifest).map_err(|e| AgentError::BadRequest(e.to_string()))?;
        let report = validate_manifest(&manifest);
        if report.has_errors() {
            return Err(AgentError::BadRequest(format!("invalid manifest: {}", report.to_json())));
        }
        if self.serves(&manifest).is_none() {
            return Err(AgentError::BadRequest(format!(
                "agent does not serve {} {}",
                manifest.framework.name, manifest.framework.version_constraint
            )));
        }
        if req.inputs.is_empty() {
            return Err(AgentError::BadRequest("no inputs".into()));
        }
        let started = Instant::now();
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        let session = self.session(&manifest)?;
        let opts = JobOptions {
            top_k: req.top_k,
            trace_level: req.trace_level,
            overrides: req.overrides.clone(),
            labels: None,
        };
        let output = run_job(&session, &self.runtime, &req.inputs, &opts)?;
        Ok(PredictResponse {
            agent_id: self.record.agent_id.clone(),
            output,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }
}

struct Slot<'a>(&'a AtomicUsize);

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}
