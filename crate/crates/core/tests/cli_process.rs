mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use common::http::get;
use common::procs::{agent_config, registry_config, serve, write, BIN};
use evalscope::registry::AgentRecord;

fn fx(rel: &str) -> String {
    common::fixtures().join(rel).display().to_string()
}

#[test]
fn evaluate_is_byte_identical_across_runs() {
    let args = [
        "evaluate",
        "--manifest",
        &fx("reference/color_net.yml"),
        "--input",
        &fx("images/red_blue.ppm"),
    ];
    let outputs: Vec<Vec<u8>> = (0..5)
        .map(|_| {
            let out = Command::new(BIN).args(args).output().unwrap();
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            out.stdout
        })
        .collect();
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let golden = std::fs::read(common::fixtures().join("golden/cli/evaluate_red_blue.json")).unwrap();
    assert_eq!(outputs[0], golden);
}

#[test]
fn exit_codes_are_stable() {
    let code = |args: &[&str]| Command::new(BIN).args(args).output().unwrap().status.code();
    assert_eq!(code(&["manifest", "validate", &fx("manifests/inception_v3.yml")]), Some(0));
    assert_eq!(code(&["manifest", "validate", "/no/such/file.yml"]), Some(2));
    assert_eq!(code(&["no-such-command"]), Some(2));
    assert_eq!(code(&["evaluate", "--manifest", &fx("reference/color_net.yml")]), Some(2));
    assert_eq!(
        code(&["evaluate", "--manifest", &fx("reference/color_net.yml"), "--input", "/no/such.ppm"]),
        Some(2)
    );
}

#[test]
fn bad_server_configs_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing_registry = write(dir.path(), "a.yml", "frameworks:\n  - name: TensorFlow\n    version: 1.13.0\n    backend: reference_linear\n");
    let bad_number = write(dir.path(), "r.yml", "heartbeat_interval_ms: soon\n");
    let bad_backend = write(
        dir.path(),
        "b.yml",
        "registry_url: http://127.0.0.1:1\nframeworks:\n  - name: TensorFlow\n    version: 1.13.0\n    backend: quantum\n",
    );
    let unparsable = write(dir.path(), "u.yml", "listen: [\n");
    for (role, cfg) in [
        ("agent", missing_registry.as_path()),
        ("registry", bad_number.as_path()),
        ("agent", bad_backend.as_path()),
        ("orchestrator", unparsable.as_path()),
        ("registry", dir.path().join("absent.yml").as_path()),
    ] {
        let out = Command::new(BIN)
            .args(["serve", role, "--config"])
            .arg(cfg)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(2), "{role} {}: {}", cfg.display(), String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn agent_registers_within_an_interval_and_deregisters_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let interval = 1000;
    let registry = serve("registry", &registry_config(dir.path(), interval));
    let cfg = agent_config(dir.path(), "agent-a", &registry.url, "1.13.0", interval);

    let started = Instant::now();
    let mut agent = serve("agent", &cfg);
    let agents_url = format!("{}/agents", registry.url);
    let appeared = loop {
        let (_, list): (u16, Vec<AgentRecord>) = get(&agents_url);
        if list.iter().any(|a| a.agent_id == "agent-a") {
            break started.elapsed();
        }
        assert!(started.elapsed() < Duration::from_secs(10), "agent never appeared");
        std::thread::sleep(Duration::from_millis(10));
    };
    assert!(appeared < Duration::from_millis(interval), "appeared after {appeared:?}");

    let (_, info): (u16, AgentRecord) = get(&format!("{}/info", agent.url));
    assert_eq!(format!("http://{}", info.address), agent.url);

    // still present after several heartbeats
    std::thread::sleep(Duration::from_millis(interval * 3 + 500));
    let (_, list): (u16, Vec<AgentRecord>) = get(&agents_url);
    assert_eq!(list.len(), 1);

    assert_eq!(agent.terminate(), Some(0));
    let (_, list): (u16, Vec<AgentRecord>) = get(&agents_url);
    assert!(list.is_empty(), "{list:?}");
}

#[test]
fn killed_agent_expires_from_the_registry() {
    let dir = tempfile::tempdir().unwrap();
    let interval = 200;
    let registry = serve("registry", &registry_config(dir.path(), interval));
    let mut agent = serve("agent", &agent_config(dir.path(), "agent-k", &registry.url, "1.12.0", interval));
    let agents_url = format!("{}/agents", registry.url);
    let (_, list): (u16, Vec<AgentRecord>) = get(&agents_url);
    assert_eq!(list.len(), 1);
    agent.child.kill().unwrap();
    agent.child.wait().unwrap();
    std::thread::sleep(Duration::from_millis(interval * 3 + 300));
    let (_, list): (u16, Vec<AgentRecord>) = get(&agents_url);
    assert!(list.is_empty());
}
