mod common;

use std::collections::BTreeMap;

use evalscope::canon::to_canonical_line;
use evalscope::evalstore::{EvalStore, StoreError, StoreQuery, StoredEvaluation};
use evalscope::pipeline::PipelineOverrides;
use evalscope::predictor::JobOutput;
use evalscope::registry::{HardwareFilter, HardwareSpec};
use evalscope::tracing::TraceLevel;
use evalscope::version::{Version, VersionConstraint};
use rand::seq::IndexedRandom;
use rand::Rng;

fn random_record(rng: &mut impl Rng, i: usize) -> StoredEvaluation {
    let model = ["ColorNet", "Inception-v3"].choose(rng).unwrap().to_string();
    let framework = ["TensorFlow", "MXNet"].choose(rng).unwrap().to_string();
    let fv = Version::new(1, rng.random_range(9..=14), rng.random_range(0..=2));
    StoredEvaluation {
        evaluation_id: format!("ev-{}", i / 2),
        agent_id: format!("agent-{}", i % 2),
        model: model.clone(),
        model_version: Version::new(1, rng.random_range(0..=1), 0),
        framework: framework.clone(),
        framework_version: fv,
        hardware: HardwareSpec {
            architecture: ["amd64", "ppc64le"].choose(rng).unwrap().to_string(),
            device_classes: [["cpu", "gpu"].choose(rng).unwrap().to_string()].into(),
            interconnect: None,
            attributes: BTreeMap::new(),
        },
        overrides: if rng.random_bool(0.3) {
            PipelineOverrides::new().with("color_layout", "BGR")
        } else {
            PipelineOverrides::new()
        },
        trace_level: TraceLevel::None,
        latency_ms: f64::from(rng.random_range(1u32..1000)) / 8.0,
        result: JobOutput {
            model,
            model_version: "1.0.0".into(),
            framework,
            backend: "reference_linear".into(),
            container: None,
            environment: BTreeMap::new(),
            outputs: vec![],
            metrics: None,
            trace: vec![],
        },
        stored_at: format!("2026-01-01T00:00:{:02}Z", i % 60),
    }
}

#[test]
fn records_survive_reopen_unchanged() {
    let mut rng = common::rng(41);
    let dir = tempfile::tempdir().unwrap();
    let records: Vec<StoredEvaluation> = (0..60).map(|i| random_record(&mut rng, i)).collect();
    {
        let store = EvalStore::open(dir.path()).unwrap();
        for r in &records {
            store.put(r.clone()).unwrap();
        }
    }
    let store = EvalStore::open(dir.path()).unwrap();
    assert_eq!(store.len(), records.len());
    for r in &records {
        let back = store.get(&r.evaluation_id, &r.agent_id).unwrap();
        assert_eq!(&back, r);
        assert_eq!(to_canonical_line(&back), to_canonical_line(r));
    }
}

#[test]
fn puts_are_idempotent_and_conflicts_are_refused() {
    let mut rng = common::rng(42);
    let store = EvalStore::in_memory();
    let r = random_record(&mut rng, 0);
    store.put(r.clone()).unwrap();
    store.put(r.clone()).unwrap();
    assert_eq!(store.len(), 1);
    let mut changed = r.clone();
    changed.latency_ms += 1.0;
    assert!(matches!(store.put(changed), Err(StoreError::Conflict { .. })));
    assert_eq!(store.get(&r.evaluation_id, &r.agent_id).unwrap(), r);
}

#[test]
fn torn_trailing_line_is_skipped() {
    let mut rng = common::rng(43);
    let dir = tempfile::tempdir().unwrap();
    let store = EvalStore::open(dir.path()).unwrap();
    store.put(random_record(&mut rng, 0)).unwrap();
    let file = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    let mut text = std::fs::read_to_string(&file).unwrap();
    text.push_str("{\"evaluation_id\":\"ev-9\",\"agent");
    std::fs::write(&file, text).unwrap();
    assert_eq!(EvalStore::open(dir.path()).unwrap().len(), 1);
}

#[test]
fn queries_match_brute_force() {
    let mut rng = common::rng(44);
    let store = EvalStore::in_memory();
    let records: Vec<StoredEvaluation> = (0..80).map(|i| random_record(&mut rng, i)).collect();
    for r in &records {
        store.put(r.clone()).unwrap();
    }
    for _ in 0..300 {
        let q = StoreQuery {
            model: rng.random_bool(0.5).then(|| ["ColorNet", "colornet", "Inception-v3"].choose(&mut rng).unwrap().to_string()),
            model_constraint: rng.random_bool(0.3).then(|| VersionConstraint::parse("~1.1").unwrap()),
            framework: rng.random_bool(0.5).then(|| ["TensorFlow", "MXNet"].choose(&mut rng).unwrap().to_string()),
            framework_constraint: rng
                .random_bool(0.5)
                .then(|| VersionConstraint::parse(common::REFERENCE_CONSTRAINTS.choose(&mut rng).unwrap()).unwrap()),
            hardware: HardwareFilter {
                arch: rng.random_bool(0.4).then(|| "ppc64le".to_string()),
                device: rng.random_bool(0.4).then(|| "gpu".to_string()),
                interconnect: None,
            },
        };
        let want: Vec<&StoredEvaluation> = records
            .iter()
            .filter(|r| {
                let v = &r.framework_version;
                q.model.as_ref().is_none_or(|m| m.to_lowercase() == r.model.to_lowercase())
                    && q.model_constraint.as_ref().is_none_or(|_| r.model_version.minor == 1)
                    && q.framework.as_ref().is_none_or(|f| f == &r.framework)
                    && q.framework_constraint
                        .as_ref()
                        .is_none_or(|c| common::constraint_truth(c.as_str(), (v.major, v.minor, v.patch)))
                    && q.hardware.arch.as_ref().is_none_or(|a| a == &r.hardware.architecture)
                    && q.hardware.device.as_ref().is_none_or(|d| r.hardware.device_classes.contains(d))
            })
            .collect();
        let got = store.query(&q);
        assert_eq!(got.iter().collect::<Vec<_>>(), want, "{q:?}");
    }
}
