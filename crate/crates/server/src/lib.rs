//! HTTP JSON service over the corpus, the annotation workflow, evaluation
//! runs and pairwise studies. All routes live under `/v1`.
//!
//! Every `POST` is idempotent: the response to a request is cached under a
//! hash of (method, path, caller, body), and an identical retry gets the
//! cached response back with `x-idempotent-replay: true` instead of being
//! applied twice.

pub mod auth;
pub mod error;
mod handlers;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use misattrib_core::gateway::{BackendConfig, Cassette, Gateway};
use misattrib_core::store::{FileStore, StoreState};
use misattrib_core::taxonomy::Taxonomy;
use misattrib_core::templates::TemplateSet;
use sha2::{Digest, Sha256};

pub use auth::{Session, TokenTable};
pub use error::ApiError;

pub const API_PREFIX: &str = "/v1";
pub const REPLAY_HEADER: &str = "x-idempotent-replay";

#[derive(Clone)]
struct CachedReply {
    status: StatusCode,
    body: Bytes,
}

/// Store plus the reply cache, guarded together so a request is looked up,
/// applied and cached atomically.
struct Inner {
    store: StoreState,
    replies: HashMap<String, CachedReply>,
}

pub struct AppState {
    inner: Mutex<Inner>,
    file: Option<FileStore>,
    tokens: TokenTable,
    backends: Option<BackendConfig>,
    gateway: Arc<Gateway>,
    taxonomy: Taxonomy,
    templates: TemplateSet,
}

impl AppState {
    pub fn new(store: StoreState, tokens: TokenTable) -> Self {
        AppState {
            inner: Mutex::new(Inner { store, replies: HashMap::new() }),
            file: None,
            tokens,
            backends: None,
            gateway: Arc::new(Gateway::new(Arc::new(Cassette::in_memory()))),
            taxonomy: Taxonomy::builtin(),
            templates: TemplateSet::builtin(),
        }
    }

    /// Write the store back to `file` after every successful mutation.
    pub fn with_file(mut self, file: FileStore) -> Self {
        self.file = Some(file);
        self
    }

    pub fn with_backends(mut self, backends: BackendConfig) -> Self {
        self.backends = Some(backends);
        self
    }

    pub fn with_gateway(mut self, gateway: Arc<Gateway>) -> Self {
        self.gateway = gateway;
        self
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    /// A copy of the current store.
    pub fn snapshot(&self) -> StoreState {
        self.inner.lock().unwrap().store.clone()
    }
}

fn request_key(method: &str, path: &str, caller: &str, body: &[u8]) -> String {
    let mut h = Sha256::new();
    for part in [method.as_bytes(), path.as_bytes(), caller.as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.update(body);
    hex::encode(h.finalize())
}

fn replay(reply: CachedReply) -> Response {
    let mut resp = (reply.status, [(axum::http::header::CONTENT_TYPE, "application/json")], reply.body).into_response();
    resp.headers_mut().insert(REPLAY_HEADER, HeaderValue::from_static("true"));
    resp
}

fn json_response(status: StatusCode, value: &serde_json::Value) -> (Response, CachedReply) {
    let body = Bytes::from(serde_json::to_vec(value).expect("response serializes"));
    let reply = CachedReply { status, body: body.clone() };
    ((status, [(axum::http::header::CONTENT_TYPE, "application/json")], body).into_response(), reply)
}

pub fn router(state: Arc<AppState>) -> Router {
    use handlers::*;
    let v1 = Router::new()
        .route("/health", get(health))
        .route("/items", get(list_items))
        .route("/items/{id}", get(get_item))
        .route("/tasks/next", get(next_task))
        .route("/annotations", post(submit_annotation))
        .route("/adjudication/queue", get(adjudication_queue))
        .route("/adjudications", post(adjudicate))
        .route("/batches", get(list_batches))
        .route("/batches/{id}", get(get_batch))
        .route("/batches/{id}/qc", post(start_qc))
        .route("/batches/{id}/verdicts", post(submit_verdicts))
        .route("/evals", get(list_evals).post(trigger_eval))
        .route("/evals/{id}", get(get_eval))
        .route("/studies", post(create_study))
        .route("/studies/{id}/tasks", get(study_tasks))
        .route("/studies/{id}/votes", post(submit_vote))
        .route("/studies/{id}/report", get(study_report))
        .route("/reports/{id}", get(get_report));
    Router::new().nest(API_PREFIX, v1).fallback(not_found).with_state(state)
}

async fn not_found() -> ApiError {
    ApiError::not_found("NotFound", "no such route")
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "serving");
    axum::serve(listener, router(state)).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_keys_separate_fields() {
        let a = request_key("POST", "/v1/a", "x", b"{}");
        assert_eq!(a, request_key("POST", "/v1/a", "x", b"{}"));
        assert_ne!(a, request_key("POST", "/v1/a", "y", b"{}"));
        assert_ne!(request_key("POST", "/v1/ab", "", b""), request_key("POST", "/v1/a", "b", b""));
    }
}
