//! Spawning the `evalscope` binary as separate server processes.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, ChildStdout, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

pub const BIN: &str = env!("CARGO_BIN_EXE_evalscope");

/// A running server. Dropping it sends SIGTERM and reaps the process.
pub struct Proc {
    pub child: Child,
    pub url: String,
    _stdout: Option<BufReader<ChildStdout>>,
}

/// Starts `evalscope serve <role> --config <config>` and waits for its
/// "listening on" line.
pub fn serve(role: &str, config: &Path) -> Proc {
    let mut child = Command::new(BIN)
        .args(["serve", role, "--config"])
        .arg(config)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .expect("spawn evalscope");
    let mut reader = BufReader::new(child.stdout.take().unwrap());
    let (tx, rx) = mpsc::channel();
    let handle = std::thread::spawn(move || {
        let mut line = String::new();
        let n = reader.read_line(&mut line).unwrap_or(0);
        let _ = tx.send(if n == 0 { None } else { Some(line) });
        reader
    });
    let line = rx
        .recv_timeout(Duration::from_secs(20))
        .unwrap_or(None)
        .unwrap_or_else(|| {
            let _ = child.kill();
            panic!("{role} did not announce its address")
        });
    let url = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected first line from {role}: {line:?}"))
        .to_string();
    Proc {
        child,
        url,
        _stdout: handle.join().ok(),
    }
}

impl Proc {
    /// SIGTERM, then wait for exit; returns the exit code.
    pub fn terminate(&mut self) -> Option<i32> {
        let _ = Command::new("kill")
            .args(["-TERM", &self.child.id().to_string()])
            .status();
        let deadline = std::time::Instant::now() + Duration::from_secs(10);
        loop {
            if let Ok(Some(status)) = self.child.try_wait() {
                return status.code();
            }
            if std::time::Instant::now() > deadline {
                let _ = self.child.kill();
                return self.child.wait().ok().and_then(|s| s.code());
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

impl Drop for Proc {
    fn drop(&mut self) {
        if matches!(self.child.try_wait(), Ok(None)) {
            self.terminate();
        }
    }
}

pub fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

pub fn registry_config(dir: &Path, heartbeat_ms: u64) -> std::path::PathBuf {
    write(dir, "registry.yml", &format!("listen: 127.0.0.1:0\nheartbeat_interval_ms: {heartbeat_ms}\n"))
}

pub fn agent_config(dir: &Path, id: &str, registry: &str, tf: &str, heartbeat_ms: u64) -> std::path::PathBuf {
    let manifest = super::fixtures().join("reference/color_net.yml");
    write(
        dir,
        &format!("{id}.yml"),
        &format!(
            "listen: 127.0.0.1:0\nregistry_url: {registry}\nagent_id: {id}\nheartbeat_interval_ms: {heartbeat_ms}\n\
             architecture: amd64\ndevices: [cpu]\nframeworks:\n  - name: TensorFlow\n    version: {tf}\n    backend: reference_linear\n\
             manifests:\n  - {}\n",
            manifest.display()
        ),
    )
}

pub fn orchestrator_config(dir: &Path, registry: &str) -> std::path::PathBuf {
    let manifest = super::fixtures().join("reference/color_net.yml");
    write(
        dir,
        "orchestrator.yml",
        &format!(
            "listen: 127.0.0.1:0\nregistry_url: {registry}\ndata_dir: {}\nmanifests:\n  - {}\n",
            dir.join("data").display(),
            manifest.display()
        ),
    )
}
