//! Process configuration for the three servers. Files use the manifest
//! document dialect; `EVALSCOPE_<KEY>` environment variables override
//! top-level keys. Relative paths resolve against the file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::doc::{self, Node, SyntaxError};
use crate::version::Version;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(#[from] SyntaxError),
    #[error("config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

pub const ENV_PREFIX: &str = "EVALSCOPE_";

/// Top-level keys of a config document after environment overrides.
#[derive(Debug, Clone)]
pub struct RawConfig {
    base: PathBuf,
    root: Node,
    env: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(&text, &base, std::env::vars())
    }

    pub fn from_text(
        text: &str,
        base: &Path,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let root = doc::parse(text)?;
        if root.as_map().is_none() {
            return Err(invalid("<root>", "expected a mapping"));
        }
        let env = env
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_ascii_lowercase(), v)))
            .collect();
        Ok(Self {
            base: base.to_path_buf(),
            root,
            env,
        })
    }

    fn scalar(&self, key: &str) -> Result<Option<String>, ConfigError> {
        if let Some(v) = self.env.get(key) {
            return Ok(Some(v.clone()));
        }
        match self.root.get(key) {
            None => Ok(None),
            Some(n) if n.is_null() => Ok(None),
            Some(n) => n
                .as_scalar()
                .map(|s| Some(s.to_string()))
                .ok_or_else(|| invalid(key, format!("expected a scalar, found a {}", n.kind_name()))),
        }
    }

    pub fn string(&self, key: &str) -> Result<Option<String>, ConfigError> {
        self.scalar(key)
    }

    pub fn string_or(&self, key: &str, default: &str) -> Result<String, ConfigError> {
        Ok(self.scalar(key)?.unwrap_or_else(|| default.to_string()))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.scalar(key)? {
            None => Ok(default),
            Some(s) => s.trim().parse().map_err(|_| invalid(key, format!("`{s}` is not a non-negative integer"))),
        }
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>, ConfigError> {
        Ok(self.scalar(key)?.map(|s| self.resolve(&s)))
    }

    fn resolve(&self, s: &str) -> PathBuf {
        let p = PathBuf::from(s);
        if p.is_absolute() {
            p
        } else {
            self.base.join(p)
        }
    }

    /// A list of scalars: a sequence in the file, comma-separated in the
    /// environment.
    pub fn list(&self, key: &str) -> Result<Vec<String>, ConfigError> {
        if let Some(v) = self.env.get(key) {
            return Ok(v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect());
        }
        match self.root.get(key) {
            None => Ok(Vec::new()),
            Some(n) if n.is_null() => Ok(Vec::new()),
            Some(n) => {
                if let Some(s) = n.as_scalar() {
                    return Ok(vec![s.to_string()]);
                }
                n.as_seq()
                    .ok_or_else(|| invalid(key, "expected a list"))?
                    .iter()
                    .map(|i| i.as_scalar().map(str::to_string).ok_or_else(|| invalid(key, "list items must be scalars")))
                    .collect()
            }
        }
    }

    pub fn paths(&self, key: &str) -> Result<Vec<PathBuf>, ConfigError> {
        Ok(self.list(key)?.iter().map(|s| self.resolve(s)).collect())
    }

    /// A mapping of scalars. Not overridable from the environment.
    pub fn map(&self, key: &str) -> Result<BTreeMap<String, String>, ConfigError> {
        match self.root.get(key) {
            None => Ok(BTreeMap::new()),
            Some(n) if n.is_null() => Ok(BTreeMap::new()),
            Some(n) => n
                .as_map()
                .ok_or_else(|| invalid(key, "expected a mapping"))?
                .iter()
                .map(|(k, _, v)| {
                    v.as_scalar()
                        .map(|s| (k.clone(), s.to_string()))
                        .ok_or_else(|| invalid(&format!("{key}.{k}"), "expected a scalar"))
                })
                .collect(),
        }
    }

    fn node(&self, key: &str) -> Option<&Node> {
        self.root.get(key).filter(|n| !n.is_null())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryConfig {
    pub listen: String,
    pub heartbeat_interval_ms: u64,
}

impl RegistryConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let c = Self {
            listen: raw.string_or("listen", "127.0.0.1:0")?,
            heartbeat_interval_ms: raw.u64_or("heartbeat_interval_ms", 1000)?,
        };
        if c.heartbeat_interval_ms == 0 {
            return Err(invalid("heartbeat_interval_ms", "must be positive"));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrchestratorSettings {
    pub listen: String,
    pub registry_url: String,
    pub data_dir: Option<PathBuf>,
    pub manifests: Vec<PathBuf>,
    pub datasets: BTreeMap<String, PathBuf>,
    pub dispatch_timeout_ms: u64,
}

impl OrchestratorSettings {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let registry_url = raw
            .string("registry_url")?
            .ok_or_else(|| invalid("registry_url", "required"))?;
        let datasets = raw
            .map("datasets")?
            .into_iter()
            .map(|(k, v)| (k, raw.resolve(&v)))
            .collect();
        Ok(Self {
            listen: raw.string_or("listen", "127.0.0.1:0")?,
            registry_url,
            data_dir: raw.path("data_dir")?,
            manifests: raw.paths("manifests")?,
            datasets,
            dispatch_timeout_ms: raw.u64_or("dispatch_timeout_ms", 60_000)?,
        })
    }
}

/// A framework an agent serves and the backend that implements it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameworkEntry {
    pub name: String,
    pub version: Version,
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSettings {
    pub listen: String,
    pub registry_url: String,
    pub agent_id: Option<String>,
    pub advertise_address: Option<String>,
    pub heartbeat_interval_ms: u64,
    pub cache_dir: Option<PathBuf>,
    pub architecture: Option<String>,
    pub devices: Vec<String>,
    pub interconnect: Option<String>,
    pub attributes: BTreeMap<String, String>,
    pub frameworks: Vec<FrameworkEntry>,
    pub manifests: Vec<PathBuf>,
    pub queue_depth: usize,
    pub delay_ms: u64,
}

impl AgentSettings {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let registry_url = raw
            .string("registry_url")?
            .ok_or_else(|| invalid("registry_url", "required"))?;
        let frameworks = match raw.node("frameworks") {
            None => Vec::new(),
            Some(n) => n
                .as_seq()
                .ok_or_else(|| invalid("frameworks", "expected a list"))?
                .iter()
                .enumerate()
                .map(|(i, f)| framework_entry(i, f))
                .collect::<Result<_, _>>()?,
        };
        if frameworks.is_empty() {
            return Err(invalid("frameworks", "an agent must serve at least one framework"));
        }
        let heartbeat_interval_ms = raw.u64_or("heartbeat_interval_ms", 1000)?;
        if heartbeat_interval_ms == 0 {
            return Err(invalid("heartbeat_interval_ms", "must be positive"));
        }
        let mut devices = raw.list("devices")?;
        if devices.is_empty() {
            devices.push("cpu".into());
        }
        Ok(Self {
            listen: raw.string_or("listen", "127.0.0.1:0")?,
            registry_url,
            agent_id: raw.string("agent_id")?,
            advertise_address: raw.string("advertise_address")?,
            heartbeat_interval_ms,
            cache_dir: raw.path("cache_dir")?,
            architecture: raw.string("architecture")?,
            devices,
            interconnect: raw.string("interconnect")?,
            attributes: raw.map("attributes")?,
            frameworks,
            manifests: raw.paths("manifests")?,
            queue_depth: raw.u64_or("queue_depth", 1)? as usize,
            delay_ms: raw.u64_or("delay_ms", 0)?,
        })
    }
}

fn framework_entry(i: usize, n: &Node) -> Result<FrameworkEntry, ConfigError> {
    let key = format!("frameworks[{i}]");
    let field = |name: &str| -> Result<String, ConfigError> {
        n.get(name)
            .and_then(Node::as_scalar)
            .map(str::to_string)
            .ok_or_else(|| invalid(&format!("{key}.{name}"), "required"))
    };
    let version = field("version")?;
    Ok(FrameworkEntry {
        name: field("name")?,
        version: version
            .parse()
            .map_err(|e| invalid(&format!("{key}.version"), format!("{e}")))?,
        backend: field("backend")?,
    })
}
