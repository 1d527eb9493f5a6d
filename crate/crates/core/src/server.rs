//! HTTP/JSON front ends for the registry, the orchestrator and agents.
//! Blocking work (prediction, dispatch bookkeeping) runs off the reactor.

use std::future::Future;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::agent::{Agent, AgentError, PredictRequest};
use crate::evalstore::{summary_table, StoreQuery};
use crate::orchestrator::{EvaluationRequest, Orchestrator, OrchestratorError};
use crate::registry::{AgentQuery, AgentRecord, HardwareFilter, Registry, RegistryError};
use crate::tracing::{compare, summarize, LatencySummary};
use crate::version::VersionConstraint;

/// JSON error body with a status code.
#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let code = match e {
            RegistryError::Malformed(_) => StatusCode::BAD_REQUEST,
            RegistryError::UnknownAgent(_) => StatusCode::NOT_FOUND,
            RegistryError::Transport(_) => StatusCode::BAD_GATEWAY,
        };
        ApiError(code, e.to_string())
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        let code = match e {
            OrchestratorError::Invalid(_) => StatusCode::BAD_REQUEST,
            OrchestratorError::UnknownEvaluation(_) => StatusCode::NOT_FOUND,
            OrchestratorError::Journal(_) | OrchestratorError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

impl From<AgentError> for ApiError {
    fn from(e: AgentError) -> Self {
        let code = match e {
            AgentError::BadRequest(_) => StatusCode::BAD_REQUEST,
            AgentError::Busy(_) => StatusCode::SERVICE_UNAVAILABLE,
            AgentError::Predictor(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError(code, e.to_string())
    }
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}"))
}

/// Permissive CORS so a browser console on another origin can call in.
async fn cors(req: Request, next: Next) -> Response {
    let mut resp = if req.method() == Method::OPTIONS {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(req).await
    };
    let h = resp.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(
        header::ACCESS_CONTROL_ALLOW_METHODS,
        HeaderValue::from_static("GET, POST, DELETE, OPTIONS"),
    );
    h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    resp
}

// ---------------------------------------------------------------------------
// Registry

pub fn registry_router(reg: Arc<Registry>) -> Router {
    Router::new()
        .route("/agents", post(publish).get(query_agents))
        .route("/agents/{id}", axum::routing::delete(deregister).get(get_agent))
        .route("/agents/{id}/heartbeat", post(heartbeat))
        .route("/health", get(health))
        .layer(middleware::from_fn(cors))
        .with_state(reg)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn publish(State(reg): State<Arc<Registry>>, Json(rec): Json<AgentRecord>) -> Result<Json<AgentRecord>, ApiError> {
    Ok(Json(reg.publish(rec)?))
}

async fn heartbeat(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    reg.heartbeat(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn deregister(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    if reg.deregister(&id) {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(RegistryError::UnknownAgent(id).into())
    }
}

async fn get_agent(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> Result<Json<AgentRecord>, ApiError> {
    reg.query(&AgentQuery::default())
        .into_iter()
        .find(|r| r.agent_id == id)
        .map(Json)
        .ok_or_else(|| RegistryError::UnknownAgent(id).into())
}

async fn query_agents(State(reg): State<Arc<Registry>>, Query(q): Query<AgentQuery>) -> Json<Vec<AgentRecord>> {
    Json(reg.query(&q))
}

// ---------------------------------------------------------------------------
// Orchestrator

pub fn orchestrator_router(orch: Arc<Orchestrator>) -> Router {
    Router::new()
        .route("/evaluations", post(submit).get(list_evaluations))
        .route("/evaluations/{id}", get(get_evaluation))
        .route("/evaluations/{id}/latency", get(evaluation_latency))
        .route("/models", get(list_models))
        .route("/results", get(stored_results))
        .route("/summary", get(summary))
        .route("/compare", get(compare_evaluations))
        .route("/health", get(health))
        .layer(middleware::from_fn(cors))
        .with_state(orch)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Submitted {
    pub evaluation_id: String,
}

async fn submit(
    State(orch): State<Arc<Orchestrator>>,
    Json(req): Json<EvaluationRequest>,
) -> Result<(StatusCode, Json<Submitted>), ApiError> {
    // dataset loading reads files; keep it off the reactor
    let id = tokio::task::spawn_blocking(move || orch.submit(req))
        .await
        .map_err(join_error)??;
    Ok((StatusCode::ACCEPTED, Json(Submitted { evaluation_id: id })))
}

#[derive(Debug, Default, Deserialize)]
struct ModelFilter {
    model: Option<String>,
}

async fn list_evaluations(
    State(orch): State<Arc<Orchestrator>>,
    Query(f): Query<ModelFilter>,
) -> Json<Vec<crate::orchestrator::EvaluationRecord>> {
    Json(orch.list(f.model.as_deref()))
}

async fn get_evaluation(
    State(orch): State<Arc<Orchestrator>>,
    Path(id): Path<String>,
) -> Result<Json<crate::orchestrator::EvaluationRecord>, ApiError> {
    Ok(Json(orch.get(&id)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AgentLatency {
    pub agent_id: String,
    pub summary: LatencySummary,
}

fn latency_of(orch: &Orchestrator, id: &str) -> Result<Vec<AgentLatency>, ApiError> {
    let rec = orch.get(id)?;
    rec.results
        .iter()
        .filter_map(|r| r.output.as_ref().map(|o| (r.agent_id.clone(), o)))
        .map(|(agent_id, o)| {
            summarize(&o.trace)
                .map(|summary| AgentLatency { agent_id, summary })
                .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))
        })
        .collect()
}

async fn evaluation_latency(
    State(orch): State<Arc<Orchestrator>>,
    Path(id): Path<String>,
) -> Result<Json<Vec<AgentLatency>>, ApiError> {
    Ok(Json(latency_of(&orch, &id)?))
}

#[derive(Debug, Deserialize)]
struct ComparePair {
    a: String,
    b: String,
}

/// Layer table of the first agent result of `a` against that of `b`.
async fn compare_evaluations(
    State(orch): State<Arc<Orchestrator>>,
    Query(p): Query<ComparePair>,
) -> Result<Json<Vec<crate::tracing::CompareRow>>, ApiError> {
    let first = |id: &str| -> Result<LatencySummary, ApiError> {
        latency_of(&orch, id)?
            .into_iter()
            .next()
            .map(|l| l.summary)
            .ok_or_else(|| ApiError(StatusCode::CONFLICT, format!("evaluation `{id}` has no finished result")))
    };
    Ok(Json(compare(&first(&p.a)?, &first(&p.b)?)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub version: String,
    pub task: String,
    pub framework: String,
    pub framework_constraint: String,
}

async fn list_models(State(orch): State<Arc<Orchestrator>>) -> Json<Vec<ModelEntry>> {
    Json(
        orch.catalog()
            .iter()
            .map(|m| ModelEntry {
                name: m.name.clone(),
                version: m.version.to_string(),
                task: m.task.to_string(),
                framework: m.framework.name.clone(),
                framework_constraint: m.framework.version_constraint.as_str().to_string(),
            })
            .collect(),
    )
}

#[derive(Debug, Default, Deserialize)]
struct StoreFilter {
    model: Option<String>,
    model_constraint: Option<VersionConstraint>,
    framework: Option<String>,
    framework_constraint: Option<VersionConstraint>,
    #[serde(flatten)]
    hardware: HardwareFilter,
}

impl From<StoreFilter> for StoreQuery {
    fn from(f: StoreFilter) -> Self {
        StoreQuery {
            model: f.model,
            model_constraint: f.model_constraint,
            framework: f.framework,
            framework_constraint: f.framework_constraint,
            hardware: f.hardware,
        }
    }
}

async fn stored_results(
    State(orch): State<Arc<Orchestrator>>,
    Query(f): Query<StoreFilter>,
) -> Json<Vec<crate::evalstore::StoredEvaluation>> {
    Json(orch.store().query(&f.into()))
}

async fn summary(
    State(orch): State<Arc<Orchestrator>>,
    Query(f): Query<StoreFilter>,
) -> Json<crate::evalstore::SummaryTable> {
    Json(summary_table(&orch.store().query(&f.into())))
}

// ---------------------------------------------------------------------------
// Agent

pub fn agent_router(agent: Arc<Agent>) -> Router {
    Router::new()
        .route("/predict", post(predict))
        .route("/stats", get(stats))
        .route("/info", get(info))
        .route("/health", get(health))
        .layer(axum::extract::DefaultBodyLimit::max(256 << 20))
        .with_state(agent)
}

async fn predict(State(agent): State<Arc<Agent>>, Json(req): Json<PredictRequest>) -> Result<Response, ApiError> {
    let resp = tokio::task::spawn_blocking(move || agent.handle(&req))
        .await
        .map_err(join_error)??;
    Ok(Json(resp).into_response())
}

async fn stats(State(agent): State<Arc<Agent>>) -> Json<crate::agent::AgentStats> {
    Json(agent.stats())
}

async fn info(State(agent): State<Arc<Agent>>) -> Json<AgentRecord> {
    Json(agent.record().clone())
}

// ---------------------------------------------------------------------------

/// Serves `router` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    router: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router).with_graceful_shutdown(shutdown).await
}

/// Resolves on SIGINT or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
