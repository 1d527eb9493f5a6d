//! Capability registry. Agents publish what hardware they run on and which
//! frameworks and models they serve; callers query by constraint. Records
//! expire after three missed heartbeat intervals.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::version::{Version, VersionConstraint};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("malformed agent record: {0}")]
    Malformed(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("registry request failed: {0}")]
    Transport(String),
}

/// Milliseconds since an arbitrary epoch.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Test clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HardwareSpec {
    pub architecture: String,
    #[serde(default)]
    pub device_classes: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interconnect: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedVersion {
    pub name: String,
    pub version: Version,
}

impl NamedVersion {
    pub fn new(name: &str, version: Version) -> Self {
        Self {
            name: name.to_string(),
            version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub agent_id: String,
    /// `host:port`.
    pub address: String,
    pub hardware: HardwareSpec,
    #[serde(default)]
    pub frameworks: Vec<NamedVersion>,
    #[serde(default)]
    pub models: Vec<NamedVersion>,
    /// Set by the registry.
    #[serde(default)]
    pub last_heartbeat_ms: u64,
}

impl AgentRecord {
    pub fn validate(&self) -> Result<(), RegistryError> {
        let bad = |m: &str| Err(RegistryError::Malformed(m.to_string()));
        if self.agent_id.trim().is_empty() {
            return bad("agent_id is empty");
        }
        if self.hardware.architecture.trim().is_empty() {
            return bad("hardware.architecture is empty");
        }
        match self.address.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok_and(|p| p > 0) => {}
            _ => return bad("address must be host:port"),
        }
        if self.frameworks.iter().chain(&self.models).any(|nv| nv.name.trim().is_empty()) {
            return bad("framework and model names must not be empty");
        }
        Ok(())
    }
}

/// Hardware constraints of a query. Unset fields match anything.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HardwareFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interconnect: Option<String>,
}

impl HardwareFilter {
    pub fn matches(&self, hw: &HardwareSpec) -> bool {
        let eq = |want: &Option<String>, have: Option<&str>| {
            want.as_deref()
                .is_none_or(|w| have.is_some_and(|h| h.eq_ignore_ascii_case(w)))
        };
        eq(&self.arch, Some(&hw.architecture))
            && self
                .device
                .as_deref()
                .is_none_or(|d| hw.device_classes.iter().any(|c| c.eq_ignore_ascii_case(d)))
            && eq(&self.interconnect, hw.interconnect.as_deref())
    }

    pub fn is_empty(&self) -> bool {
        self.arch.is_none() && self.device.is_none() && self.interconnect.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_constraint: Option<VersionConstraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framework: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framework_constraint: Option<VersionConstraint>,
    #[serde(default, flatten)]
    pub hardware: HardwareFilter,
}

fn offers(list: &[NamedVersion], name: Option<&str>, constraint: Option<&VersionConstraint>) -> bool {
    if name.is_none() && constraint.is_none() {
        return true;
    }
    list.iter().any(|nv| {
        name.is_none_or(|n| nv.name.eq_ignore_ascii_case(n)) && constraint.is_none_or(|c| c.satisfies(&nv.version))
    })
}

impl AgentQuery {
    pub fn matches(&self, r: &AgentRecord) -> bool {
        offers(&r.models, self.model.as_deref(), self.model_constraint.as_ref())
            && offers(&r.frameworks, self.framework.as_deref(), self.framework_constraint.as_ref())
            && self.hardware.matches(&r.hardware)
    }

    /// Query-string form understood by the registry's HTTP endpoint.
    pub fn to_query_pairs(&self) -> Vec<(&'static str, String)> {
        let mut q = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                q.push((k, v));
            }
        };
        push("model", self.model.clone());
        push("model_constraint", self.model_constraint.as_ref().map(|c| c.as_str().to_string()));
        push("framework", self.framework.clone());
        push(
            "framework_constraint",
            self.framework_constraint.as_ref().map(|c| c.as_str().to_string()),
        );
        push("arch", self.hardware.arch.clone());
        push("device", self.hardware.device.clone());
        push("interconnect", self.hardware.interconnect.clone());
        q
    }
}

/// In-memory registry. Readers get consistent snapshots; writes to one
/// agent id are serialized by the lock.
pub struct Registry {
    records: RwLock<HashMap<String, AgentRecord>>,
    clock: Arc<dyn Clock>,
    interval_ms: u64,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("interval_ms", &self.interval_ms)
            .finish_non_exhaustive()
    }
}

impl Registry {
    pub const MISSED_INTERVALS: u64 = 3;

    pub fn new(interval: Duration, clock: Arc<dyn Clock>) -> Self {
        Self {
            records: RwLock::new(HashMap::new()),
            clock,
            interval_ms: interval.as_millis().max(1) as u64,
        }
    }

    pub fn heartbeat_interval(&self) -> Duration {
        Duration::from_millis(self.interval_ms)
    }

    pub fn ttl_ms(&self) -> u64 {
        self.interval_ms * Self::MISSED_INTERVALS
    }

    fn live(&self, r: &AgentRecord, now: u64) -> bool {
        now.saturating_sub(r.last_heartbeat_ms) < self.ttl_ms()
    }

    /// Adds or replaces the record for `record.agent_id`.
    pub fn publish(&self, mut record: AgentRecord) -> Result<AgentRecord, RegistryError> {
        record.validate()?;
        record.last_heartbeat_ms = self.clock.now_ms();
        let mut records = self.records.write().expect("registry poisoned");
        records.insert(record.agent_id.clone(), record.clone());
        Ok(record)
    }

    pub fn heartbeat(&self, agent_id: &str) -> Result<(), RegistryError> {
        let now = self.clock.now_ms();
        let mut records = self.records.write().expect("registry poisoned");
        match records.get_mut(agent_id) {
            Some(r) if now.saturating_sub(r.last_heartbeat_ms) < self.ttl_ms() => {
                r.last_heartbeat_ms = now;
                Ok(())
            }
            Some(_) => {
                records.remove(agent_id);
                Err(RegistryError::UnknownAgent(agent_id.to_string()))
            }
            None => Err(RegistryError::UnknownAgent(agent_id.to_string())),
        }
    }

    /// Removes a record; returns whether it existed.
    pub fn deregister(&self, agent_id: &str) -> bool {
        self.records.write().expect("registry poisoned").remove(agent_id).is_some()
    }

    /// Live matching records, most recent heartbeat first, then by id.
    pub fn query(&self, q: &AgentQuery) -> Vec<AgentRecord> {
        let now = self.clock.now_ms();
        let records = self.records.read().expect("registry poisoned");
        let mut out: Vec<AgentRecord> = records
            .values()
            .filter(|r| self.live(r, now) && q.matches(r))
            .cloned()
            .collect();
        out.sort_by(|a, b| {
            b.last_heartbeat_ms
                .cmp(&a.last_heartbeat_ms)
                .then_with(|| a.agent_id.cmp(&b.agent_id))
        });
        out
    }

    /// Drops expired records.
    pub fn purge(&self) -> usize {
        let now = self.clock.now_ms();
        let mut records = self.records.write().expect("registry poisoned");
        let before = records.len();
        records.retain(|_, r| now.saturating_sub(r.last_heartbeat_ms) < self.interval_ms * Self::MISSED_INTERVALS);
        before - records.len()
    }
}

/// Blocking HTTP client for a remote registry.
#[derive(Debug, Clone)]
pub struct RegistryClient {
    base: String,
    agent: ureq::Agent,
}

fn transport(e: impl std::fmt::Display) -> RegistryError {
    RegistryError::Transport(e.to_string())
}

impl RegistryClient {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(10)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn publish(&self, record: &AgentRecord) -> Result<(), RegistryError> {
        let resp = self
            .agent
            .post(&format!("{}/agents", self.base))
            .send_json(record)
            .map_err(transport)?;
        match resp.status().as_u16() {
            200..=299 => Ok(()),
            _ => Err(RegistryError::Malformed(read_error(resp))),
        }
    }

    pub fn heartbeat(&self, agent_id: &str) -> Result<(), RegistryError> {
        let resp = self
            .agent
            .post(&format!("{}/agents/{agent_id}/heartbeat", self.base))
            .send_empty()
            .map_err(transport)?;
        match resp.status().as_u16() {
            200..=299 => Ok(()),
            404 => Err(RegistryError::UnknownAgent(agent_id.to_string())),
            _ => Err(RegistryError::Transport(read_error(resp))),
        }
    }

    pub fn deregister(&self, agent_id: &str) -> Result<(), RegistryError> {
        let resp = self
            .agent
            .delete(&format!("{}/agents/{agent_id}", self.base))
            .call()
            .map_err(transport)?;
        match resp.status().as_u16() {
            200..=299 | 404 => Ok(()),
            _ => Err(RegistryError::Transport(read_error(resp))),
        }
    }

    pub fn query(&self, q: &AgentQuery) -> Result<Vec<AgentRecord>, RegistryError> {
        let mut req = self.agent.get(&format!("{}/agents", self.base));
        for (k, v) in q.to_query_pairs() {
            req = req.query(k, &v);
        }
        let mut resp = req.call().map_err(transport)?;
        if !resp.status().is_success() {
            return Err(RegistryError::Transport(read_error(resp)));
        }
        resp.body_mut().read_json().map_err(transport)
    }
}

fn read_error(mut resp: ureq::http::Response<ureq::Body>) -> String {
    let status = resp.status();
    let body = resp.body_mut().read_to_string().unwrap_or_default();
    format!("HTTP {status}: {body}")
}
