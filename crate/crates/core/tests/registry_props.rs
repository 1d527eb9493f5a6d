mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use evalscope::registry::{
    AgentQuery, AgentRecord, HardwareFilter, HardwareSpec, ManualClock, NamedVersion, Registry, RegistryError,
};
use evalscope::version::{Version, VersionConstraint};
use rand::seq::IndexedRandom;
use rand::Rng;

const ARCHES: [&str; 3] = ["amd64", "arm64", "ppc64le"];
const DEVICES: [&str; 3] = ["cpu", "gpu", "fpga"];
const FRAMEWORKS: [&str; 3] = ["TensorFlow", "MXNet", "Caffe2"];
const MODELS: [&str; 3] = ["Inception-v3", "ResNet50", "ColorNet"];

fn random_record(rng: &mut impl Rng, i: usize) -> AgentRecord {
    let mut devices = BTreeSet::new();
    devices.insert(DEVICES.choose(rng).unwrap().to_string());
    if rng.random_bool(0.3) {
        devices.insert(DEVICES.choose(rng).unwrap().to_string());
    }
    let named = |rng: &mut _, names: &[&str]| -> Vec<NamedVersion> {
        (0..Rng::random_range(rng, 1..=2))
            .map(|_| {
                NamedVersion::new(
                    names.choose(rng).unwrap(),
                    Version::new(Rng::random_range(rng, 0..=2), Rng::random_range(rng, 0..=20), Rng::random_range(rng, 0..=3)),
                )
            })
            .collect()
    };
    AgentRecord {
        agent_id: format!("agent-{i}"),
        address: format!("10.0.0.{i}:{}", 9000 + i),
        hardware: HardwareSpec {
            architecture: ARCHES.choose(rng).unwrap().to_string(),
            device_classes: devices,
            interconnect: rng.random_bool(0.5).then(|| "pcie".to_string()),
            attributes: Default::default(),
        },
        frameworks: named(rng, &FRAMEWORKS),
        models: named(rng, &MODELS),
        last_heartbeat_ms: 0,
    }
}

fn random_query(rng: &mut impl Rng) -> AgentQuery {
    let pick = |rng: &mut _, names: &[&str]| Rng::random_bool(rng, 0.5).then(|| names.choose(rng).unwrap().to_string());
    let constraint = |rng: &mut _| {
        Rng::random_bool(rng, 0.5)
            .then(|| VersionConstraint::parse(common::REFERENCE_CONSTRAINTS.choose(rng).unwrap()).unwrap())
    };
    AgentQuery {
        model: pick(rng, &MODELS),
        model_constraint: constraint(rng),
        framework: pick(rng, &FRAMEWORKS),
        framework_constraint: constraint(rng),
        hardware: HardwareFilter {
            arch: pick(rng, &ARCHES),
            device: pick(rng, &DEVICES),
            interconnect: rng.random_bool(0.2).then(|| "pcie".to_string()),
        },
    }
}

/// Brute force: an agent matches when some listed model satisfies both the
/// model name and constraint, likewise for frameworks, and the hardware
/// fields agree.
fn brute_force(q: &AgentQuery, r: &AgentRecord) -> bool {
    let offer = |list: &[NamedVersion], name: &Option<String>, c: &Option<VersionConstraint>| {
        (name.is_none() && c.is_none())
            || list.iter().any(|nv| {
                name.as_ref().is_none_or(|n| n.eq_ignore_ascii_case(&nv.name))
                    && c.as_ref().is_none_or(|c| {
                        common::constraint_truth(c.as_str(), (nv.version.major, nv.version.minor, nv.version.patch))
                    })
            })
    };
    let hw = &r.hardware;
    offer(&r.models, &q.model, &q.model_constraint)
        && offer(&r.frameworks, &q.framework, &q.framework_constraint)
        && q.hardware.arch.as_ref().is_none_or(|a| a == &hw.architecture)
        && q.hardware.device.as_ref().is_none_or(|d| hw.device_classes.contains(d))
        && q.hardware.interconnect.as_ref().is_none_or(|i| hw.interconnect.as_ref() == Some(i))
}

#[test]
fn queries_are_sound_and_complete_against_brute_force() {
    let mut rng = common::rng(21);
    for _round in 0..50 {
        let clock = Arc::new(ManualClock::new(1_000));
        let reg = Registry::new(Duration::from_millis(100), clock.clone());
        let records: Vec<AgentRecord> = (0..rng.random_range(1..30)).map(|i| random_record(&mut rng, i)).collect();
        for r in &records {
            reg.publish(r.clone()).unwrap();
        }
        for _ in 0..40 {
            let q = random_query(&mut rng);
            let got: BTreeSet<String> = reg.query(&q).into_iter().map(|r| r.agent_id).collect();
            let want: BTreeSet<String> = records
                .iter()
                .filter(|r| brute_force(&q, r))
                .map(|r| r.agent_id.clone())
                .collect();
            assert_eq!(got, want, "{q:?}");
        }
    }
}

#[test]
fn agents_expire_after_three_missed_intervals() {
    let mut rng = common::rng(22);
    let clock = Arc::new(ManualClock::new(0));
    let reg = Registry::new(Duration::from_millis(100), clock.clone());
    reg.publish(random_record(&mut rng, 1)).unwrap();
    reg.publish(random_record(&mut rng, 2)).unwrap();
    let all = AgentQuery::default();

    clock.advance(299);
    assert_eq!(reg.query(&all).len(), 2);
    reg.heartbeat("agent-2").unwrap();
    clock.advance(1);
    let live: Vec<String> = reg.query(&all).into_iter().map(|r| r.agent_id).collect();
    assert_eq!(live, ["agent-2"]);
    assert_eq!(reg.heartbeat("agent-1"), Err(RegistryError::UnknownAgent("agent-1".into())));

    clock.advance(298);
    assert_eq!(reg.query(&all).len(), 1);
    clock.advance(1);
    assert!(reg.query(&all).is_empty());
    assert_eq!(reg.purge(), 1);
}

#[test]
fn a_publish_is_visible_to_every_later_query() {
    let mut rng = common::rng(23);
    let clock = Arc::new(ManualClock::new(0));
    let reg = Registry::new(Duration::from_millis(1000), clock.clone());
    let mut published: Vec<AgentRecord> = Vec::new();
    for i in 0..40 {
        let r = random_record(&mut rng, i);
        reg.publish(r.clone()).unwrap();
        published.push(r);
        clock.advance(10);
        let all: BTreeSet<String> = reg.query(&AgentQuery::default()).into_iter().map(|r| r.agent_id).collect();
        assert!(published.iter().all(|p| all.contains(&p.agent_id)));
        let q = random_query(&mut rng);
        let got = reg.query(&q);
        assert!(got.iter().all(|r| brute_force(&q, r)));
        // newest heartbeat first
        assert!(got.windows(2).all(|w| w[0].last_heartbeat_ms >= w[1].last_heartbeat_ms));
    }
}

#[test]
fn malformed_records_are_rejected() {
    let mut rng = common::rng(24);
    let reg = Registry::new(Duration::from_millis(100), Arc::new(ManualClock::new(0)));
    let good = random_record(&mut rng, 1);
    for mutate in [
        |r: &mut AgentRecord| r.agent_id.clear(),
        |r: &mut AgentRecord| r.address = "nohost".into(),
        |r: &mut AgentRecord| r.address = "host:0".into(),
        |r: &mut AgentRecord| r.hardware.architecture.clear(),
    ] {
        let mut r = good.clone();
        mutate(&mut r);
        assert!(matches!(reg.publish(r), Err(RegistryError::Malformed(_))));
    }
    assert!(reg.query(&AgentQuery::default()).is_empty());
}
