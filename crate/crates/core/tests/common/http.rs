//! Serving routers on loopback from a test, plus a small JSON client.

use std::time::Duration;

use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// A router bound to an ephemeral loopback port. Dropping it stops the
/// server.
pub struct Served {
    pub url: String,
    pub addr: String,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    _rt: tokio::runtime::Runtime,
}

impl Served {
    pub fn start(router: Router) -> Self {
        Self::start_with(|_| router)
    }

    /// Builds the router once the bound address is known.
    pub fn start_with(make: impl FnOnce(&str) -> Router) -> Self {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let router = make(&addr);
        rt.spawn(evalscope::server::serve(listener, router, async {
            let _ = rx.await;
        }));
        Self {
            url: format!("http://{addr}"),
            addr,
            stop: Some(tx),
            _rt: rt,
        }
    }
}

impl Drop for Served {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
    }
}

pub fn client() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(30)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn finish<T: DeserializeOwned>(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> (u16, T) {
    let mut resp = resp.unwrap();
    let status = resp.status().as_u16();
    let text = resp.body_mut().with_config().limit(1 << 30).read_to_string().unwrap();
    let body = if text.is_empty() { "null" } else { &text };
    // framework rejections come back as plain text
    let value = serde_json::from_str(body).unwrap_or(Value::String(text.clone()));
    (status, serde_json::from_value(value).unwrap_or_else(|e| panic!("{e}: {text}")))
}

pub fn get<T: DeserializeOwned>(url: &str) -> (u16, T) {
    finish(client().get(url).call())
}

pub fn post<T: DeserializeOwned>(url: &str, body: &impl Serialize) -> (u16, T) {
    finish(client().post(url).send_json(body))
}

pub fn delete(url: &str) -> u16 {
    client().delete(url).call().unwrap().status().as_u16()
}

pub fn get_value(url: &str) -> (u16, Value) {
    get(url)
}

/// Polls `GET url` until `done` holds for the body.
pub fn poll(url: &str, timeout: Duration, done: impl Fn(&Value) -> bool) -> Value {
    let deadline = std::time::Instant::now() + timeout;
    loop {
        let (_, v) = get_value(url);
        if done(&v) || std::time::Instant::now() > deadline {
            return v;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
}
