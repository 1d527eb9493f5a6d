//! An in-process registry, agents and orchestrator wired together without
//! sockets.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use evalscope::agent::Agent;
use evalscope::cli::load_manifest_file;
use evalscope::manifest::ModelManifest;
use evalscope::orchestrator::{LocalDispatcher, Orchestrator, OrchestratorConfig};
use evalscope::predictor::{BackendRegistry, InputItem, Runtime};
use evalscope::registry::{AgentRecord, HardwareSpec, ManualClock, NamedVersion, Registry};
use evalscope::version::Version;

use super::fixtures;

pub struct AgentSpec {
    pub id: &'static str,
    pub tf: Version,
    pub arch: &'static str,
    pub delay: Option<Duration>,
    /// Advertise the framework without being able to run it.
    pub broken: bool,
}

impl AgentSpec {
    pub fn new(id: &'static str, tf: Version) -> Self {
        Self {
            id,
            tf,
            arch: "amd64",
            delay: None,
            broken: false,
        }
    }
}

pub struct Cluster {
    pub registry: Arc<Registry>,
    pub clock: Arc<ManualClock>,
    pub agents: Vec<Arc<Agent>>,
    pub orchestrator: Arc<Orchestrator>,
    _cache: tempfile::TempDir,
}

pub fn color_net() -> ModelManifest {
    load_manifest_file(&fixtures().join("reference/color_net.yml")).unwrap()
}

pub fn red_blue_input() -> InputItem {
    InputItem {
        name: "red_blue.ppm".into(),
        data: std::fs::read(fixtures().join("images/red_blue.ppm")).unwrap(),
        label: Some(0),
    }
}

pub fn agent(spec: &AgentSpec, manifest: &ModelManifest, cache: &Path) -> Agent {
    let mut backends = BackendRegistry::new();
    if !spec.broken {
        backends.register("TensorFlow", BackendRegistry::backend_by_kind("reference_linear").unwrap());
    }
    let record = AgentRecord {
        agent_id: spec.id.to_string(),
        address: format!("{}.local:9000", spec.id),
        hardware: HardwareSpec {
            architecture: spec.arch.to_string(),
            device_classes: ["cpu".to_string()].into(),
            interconnect: None,
            attributes: Default::default(),
        },
        frameworks: vec![NamedVersion::new("TensorFlow", spec.tf)],
        models: vec![NamedVersion::new(&manifest.name, manifest.version)],
        last_heartbeat_ms: 0,
    };
    Agent::new(record, Runtime::new(backends, cache.join(spec.id)), 4).with_delay(spec.delay)
}

pub fn cluster(specs: &[AgentSpec], data_dir: Option<&Path>) -> Cluster {
    let manifest = color_net();
    let cache = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(1_000_000));
    let registry = Arc::new(Registry::new(Duration::from_secs(1), clock.clone()));
    let agents: Vec<Arc<Agent>> = specs
        .iter()
        .map(|s| {
            let a = Arc::new(agent(s, &manifest, cache.path()));
            registry.publish(a.record().clone()).unwrap();
            a
        })
        .collect();
    let orchestrator = Orchestrator::new(
        vec![manifest],
        Box::new(registry.clone()),
        Arc::new(LocalDispatcher::new(agents.clone())),
        OrchestratorConfig {
            data_dir: data_dir.map(Path::to_path_buf),
            ..OrchestratorConfig::default()
        },
    )
    .unwrap();
    Cluster {
        registry,
        clock,
        agents,
        orchestrator,
        _cache: cache,
    }
}

impl Cluster {
    pub fn predict_calls(&self) -> usize {
        self.agents.iter().map(|a| a.stats().predict_calls).sum()
    }
}
