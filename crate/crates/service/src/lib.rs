//! Loopback HTTP service speaking the anonymization proxy session protocol.
//!
//! | Method | Path | Body |
//! |---|---|---|
//! | POST | `/v1/sessions` | `SessionConfig` |
//! | POST | `/v1/sessions/{id}/instruction` | `{instruction}` |
//! | POST | `/v1/sessions/{id}/virtual-ui` | `{xml, ocr_tokens, screenshot_png_base64?}` or `{capture_token}` or `{from_device: true}` |
//! | POST | `/v1/sessions/{id}/action` | `{command}` |
//! | POST | `/v1/sessions/{id}/compute` | `ComputeRequest` |
//! | GET | `/v1/sessions/{id}/stats` | |
//! | DELETE | `/v1/sessions/{id}` | |
//! | GET | `/v1/openapi.json` | |
//!
//! Successful responses are `{"status": "ok", "body": ...}`, errors
//! `{"status": "error", "error_code": ...}`. A `leak-detected` error is a bare
//! 500 with an empty body. The action endpoint never returns a screen: it
//! hands out a capture token that `/virtual-ui` exchanges for the anonymized
//! view, so every screen leaves through the same leak-scanned path.

pub mod config;
pub mod error;
mod log;

use std::collections::HashMap;
use std::io::Write;
use std::net::SocketAddr;
use std::sync::Arc;

use anonproxy_core::gatekeeper::{handle_compute, ComputeRequest, GateError, PolicyModel, RuleModel};
use anonproxy_core::model::SharedSession;
use anonproxy_core::proxy::{handle_command, DeviceExecutor, Observation};
use anonproxy_core::transform::{anonymize_instruction, render_png, synthesize_virtual_ui};
use anonproxy_core::{ErrorCode, NerAdapter, OcrToken, SessionConfig, SessionStore, VirtualUi};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use base64::Engine;
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::{AppConfig, DeviceFactory};
pub use error::{status_for, ApiError, ERROR_CODES};

pub const MAX_XML_BYTES: usize = 5 * 1024 * 1024;
pub const MAX_PNG_BYTES: usize = 20 * 1024 * 1024;
/// Room for a base64 screenshot at the PNG limit plus XML and OCR.
const MAX_BODY_BYTES: usize = MAX_XML_BYTES + MAX_PNG_BYTES / 3 * 4 + 8 * 1024 * 1024;

pub const OPENAPI: &str = include_str!("../openapi.json");

type SharedDevice = Arc<Mutex<Box<dyn DeviceExecutor>>>;
pub type LogSink = Arc<Mutex<Box<dyn Write + Send>>>;

pub struct AppState {
    store: SessionStore,
    devices: Mutex<HashMap<String, SharedDevice>>,
    adapter: Arc<dyn NerAdapter>,
    model: Arc<dyn PolicyModel>,
    device_factory: DeviceFactory,
    log: Option<LogSink>,
}

impl AppState {
    pub fn new(adapter: Arc<dyn NerAdapter>, device_factory: DeviceFactory) -> Self {
        Self {
            store: SessionStore::new(),
            devices: Mutex::new(HashMap::new()),
            adapter,
            model: Arc::new(RuleModel),
            device_factory,
            log: None,
        }
    }

    pub fn with_model(mut self, model: Arc<dyn PolicyModel>) -> Self {
        self.model = model;
        self
    }

    /// Request log destination, one JSON object per line.
    pub fn with_log(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.log = Some(Arc::new(Mutex::new(sink)));
        self
    }

    pub fn from_config(cfg: &AppConfig) -> Result<Self, config::ConfigFileError> {
        Ok(Self::new(cfg.build_adapter()?, cfg.build_device_factory()?))
    }

    fn session(&self, id: &str) -> Result<SharedSession, ApiError> {
        self.store.get(id).ok_or_else(|| ApiError::new("unknown-session"))
    }

    fn device(&self, id: &str) -> Result<SharedDevice, ApiError> {
        self.devices.lock().get(id).cloned().ok_or_else(|| ApiError::new("unknown-session"))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let log = state.log.clone();
    let router = Router::new()
        .route("/v1/openapi.json", get(openapi))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", delete(delete_session))
        .route("/v1/sessions/{id}/stats", get(stats))
        .route("/v1/sessions/{id}/instruction", post(instruction))
        .route("/v1/sessions/{id}/virtual-ui", post(virtual_ui))
        .route("/v1/sessions/{id}/action", post(action))
        .route("/v1/sessions/{id}/compute", post(compute))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state);
    match log {
        Some(sink) => router.layer(axum::middleware::from_fn_with_state(sink, log::request_log)),
        None => router,
    }
}

/// Binds `addr` and serves until `shutdown` resolves. `on_bound` receives the
/// actual address (useful with port 0).
pub async fn serve(
    addr: SocketAddr,
    state: Arc<AppState>,
    on_bound: impl FnOnce(SocketAddr),
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

fn ok(status: StatusCode, body: impl Serialize) -> Response {
    (status, Json(json!({ "status": "ok", "body": body }))).into_response()
}

fn parse<T: DeserializeOwned>(bytes: &[u8], code: &'static str) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::with(code, e.to_string()))
}

async fn blocking<F>(f: F) -> Response
where
    F: FnOnce() -> Result<Response, ApiError> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => e.into_response(),
        Err(_) => ApiError::new("internal-error").into_response(),
    }
}

async fn openapi() -> Response {
    ([(axum::http::header::CONTENT_TYPE, "application/json")], OPENAPI).into_response()
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    blocking(move || {
        let config: SessionConfig = if body.iter().all(u8::is_ascii_whitespace) {
            SessionConfig::default()
        } else {
            parse(&body, "invalid-config")?
        };
        let shared = state.store.create(config).map_err(|e| ApiError::with("invalid-config", e.to_string()))?;
        let id = shared.read().id().to_string();
        state.devices.lock().insert(id.clone(), Arc::new(Mutex::new((state.device_factory)())));
        Ok(ok(StatusCode::CREATED, json!({ "session_id": id })))
    })
    .await
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    if !state.store.remove(&id) {
        return ApiError::new("unknown-session").into_response();
    }
    state.devices.lock().remove(&id);
    ok(StatusCode::OK, json!({ "session_id": id }))
}

async fn stats(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.session(&id) {
        Ok(s) => ok(StatusCode::OK, s.read().stats()),
        Err(e) => e.into_response(),
    }
}

#[derive(Deserialize)]
struct InstructionRequest {
    instruction: String,
}

async fn instruction(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Response {
    blocking(move || {
        let session = state.session(&id)?;
        let req: InstructionRequest = parse(&body, "malformed-request")?;
        let mut s = session.write();
        let masked = anonymize_instruction(&mut s, &req.instruction, state.adapter.as_ref()).map_err(|e| ApiError::from_code(&e))?;
        Ok(ok(StatusCode::OK, json!({ "masked_instruction": masked })))
    })
    .await
}

#[derive(Deserialize)]
struct VirtualUiRequest {
    #[serde(default)]
    xml: Option<String>,
    #[serde(default)]
    ocr_tokens: Vec<OcrToken>,
    #[serde(default)]
    screenshot_png_base64: Option<String>,
    #[serde(default)]
    capture_token: Option<String>,
    #[serde(default)]
    from_device: bool,
}

#[derive(Serialize)]
struct VirtualUiResponse {
    #[serde(flatten)]
    ui: VirtualUi,
    #[serde(skip_serializing_if = "Option::is_none")]
    masked_png_base64: Option<String>,
}

async fn virtual_ui(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Response {
    blocking(move || {
        let session = state.session(&id)?;
        let req: VirtualUiRequest = parse(&body, "malformed-request")?;
        let sources = usize::from(req.xml.is_some()) + usize::from(req.capture_token.is_some()) + usize::from(req.from_device);
        if sources != 1 {
            return Err(ApiError::with("malformed-request", "give exactly one of xml, capture_token, from_device"));
        }
        let png = match &req.screenshot_png_base64 {
            Some(b64) => {
                if b64.len() > MAX_PNG_BYTES / 3 * 4 + 4 {
                    return Err(ApiError::new("payload-too-large"));
                }
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b64)
                    .map_err(|e| ApiError::with("malformed-request", format!("screenshot_png_base64: {e}")))?;
                if bytes.len() > MAX_PNG_BYTES {
                    return Err(ApiError::new("payload-too-large"));
                }
                Some(bytes)
            }
            None => None,
        };
        let capture = if let Some(xml) = req.xml {
            anonproxy_core::proxy::Capture { xml, ocr_tokens: req.ocr_tokens }
        } else if let Some(token) = &req.capture_token {
            session.write().take_capture(token).ok_or_else(|| ApiError::new("unknown-capture-token"))?
        } else {
            let device = state.device(&id)?;
            let mut d = device.lock();
            d.capture().map_err(|_| ApiError::new("executor-failure"))?
        };
        if capture.xml.len() > MAX_XML_BYTES {
            return Err(ApiError::new("payload-too-large"));
        }
        let mut s = session.write();
        let ui = synthesize_virtual_ui(&mut s, &capture.xml, &capture.ocr_tokens, state.adapter.as_ref())
            .map_err(|e| ApiError::from_code(&e))?;
        let masked_png_base64 = match png {
            Some(bytes) => {
                let masked = render_png(&bytes, &ui.mask_plan).map_err(|e| ApiError::from_code(&e))?;
                Some(base64::engine::general_purpose::STANDARD.encode(masked))
            }
            None => None,
        };
        Ok(ok(StatusCode::OK, VirtualUiResponse { ui, masked_png_base64 }))
    })
    .await
}

#[derive(Deserialize)]
struct ActionRequest {
    command: String,
}

fn command_error(e: &anonproxy_core::proxy::ProxyError) -> ApiError {
    match e.code() {
        c @ ("parse-error" | "arity-error" | "unknown-command") => ApiError::with(c, e.to_string()),
        c => ApiError::new(c),
    }
}

async fn action(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Response {
    blocking(move || {
        let session = state.session(&id)?;
        let device = state.device(&id)?;
        let req: ActionRequest = parse(&body, "malformed-request")?;
        let mut s = session.write();
        let mut d = device.lock();
        let result = handle_command(&mut s, &req.command, &mut **d, None).map_err(|e| command_error(&e))?;
        let mut out = json!({ "outcome": result.record.outcome, "record": result.record });
        match result.observation {
            Observation::Screen(capture) => out["capture_token"] = Value::String(s.store_capture(capture)),
            Observation::Finished { raw_answer } => out["user_visible_answer"] = json!(raw_answer),
        }
        Ok(ok(StatusCode::OK, out))
    })
    .await
}

async fn compute(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Response {
    blocking(move || {
        let session = state.session(&id)?;
        let req: ComputeRequest = parse(&body, "malformed-request")?;
        let mut s = session.write();
        match handle_compute(&mut s, &req, state.model.as_ref()) {
            Ok(r) => Ok(ok(
                StatusCode::OK,
                json!({ "allowed": true, "kind": r.kind, "result": r.value.as_word() }),
            )),
            Err(GateError::PolicyDenied(d)) => Ok(ok(
                StatusCode::OK,
                json!({ "allowed": false, "kind": d.kind, "failed_criterion": d.failed_criterion, "rationale": d.rationale }),
            )),
            Err(GateError::Malformed(m)) => Err(ApiError::with("malformed-request", m)),
            Err(e) => Err(ApiError::from_code(&e)),
        }
    })
    .await
}
