//! HTTP backend for the viewer. The scene is immutable shared state; render
//! and query responses are cached in a bounded map keyed by the canonical
//! request.

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use langfield::{load_scene, validate_scene, Camera, CameraSpec, RenderOptions, Scene};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::ServeArgs;
use crate::query::{render_pngs, run_query, QueryError, QueryTarget};

/// Largest image a request may ask for, in pixels.
pub const MAX_PIXELS: u64 = 4096 * 4096;

/// FIFO-evicting map of serialized responses.
#[derive(Debug)]
pub struct ResponseCache {
    capacity: usize,
    order: VecDeque<String>,
    entries: HashMap<String, Bytes>,
}

impl ResponseCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            order: VecDeque::new(),
            entries: HashMap::new(),
        }
    }

    pub fn get(&self, key: &str) -> Option<Bytes> {
        self.entries.get(key).cloned()
    }

    pub fn insert(&mut self, key: String, value: Bytes) {
        if self.capacity == 0 || self.entries.contains_key(&key) {
            return;
        }
        while self.entries.len() >= self.capacity {
            match self.order.pop_front() {
                Some(old) => {
                    self.entries.remove(&old);
                }
                None => break,
            }
        }
        self.order.push_back(key.clone());
        self.entries.insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub struct AppState {
    pub scene: Scene,
    pub cache: Mutex<ResponseCache>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderRequest {
    camera: CameraSpec,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    camera: CameraSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    term: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha_floor: Option<f64>,
}

struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: message.into(),
        }
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        if e.is_client_error() {
            Self::bad(e.to_string())
        } else {
            Self::internal(e.to_string())
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.message }).to_string();
        (self.status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
    }
}

fn json_response(body: Bytes) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn parse<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad(format!("malformed request: {e}")))
}

fn camera_of(spec: &CameraSpec) -> Result<Camera, ApiError> {
    if spec.width as u64 * spec.height as u64 > MAX_PIXELS {
        return Err(ApiError::bad(format!(
            "image {}x{} exceeds {MAX_PIXELS} pixels",
            spec.width, spec.height
        )));
    }
    Camera::try_from(spec.clone()).map_err(|e| ApiError::bad(format!("invalid camera: {e}")))
}

/// Looks up `key`, or computes the response on a blocking thread and caches it.
async fn cached(
    state: Arc<AppState>,
    key: String,
    compute: impl FnOnce(&Scene) -> Result<serde_json::Value, ApiError> + Send + 'static,
) -> Result<Response, ApiError> {
    if let Some(hit) = state.cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
        return Ok(json_response(hit));
    }
    let worker = state.clone();
    let value = tokio::task::spawn_blocking(move || compute(&worker.scene))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))??;
    let bytes = Bytes::from(value.to_string());
    state
        .cache
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .insert(key, bytes.clone());
    Ok(json_response(bytes))
}

async fn meta(State(state): State<Arc<AppState>>) -> Response {
    let s = &state.scene;
    let terms: Vec<&str> = s.vocabulary.terms().collect();
    let body = json!({
        "k": s.k(),
        "c": s.c(),
        "n_primitives": s.primitives.len(),
        "terms": terms,
    });
    json_response(Bytes::from(body.to_string()))
}

async fn render_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: RenderRequest = parse(&body)?;
    let cam = camera_of(&req.camera)?;
    let key = format!("render:{}", serde_json::to_string(&req).expect("serializable"));
    cached(state, key, move |scene| {
        let (rgb, alpha) = render_pngs(scene, &cam, &RenderOptions::default())
            .map_err(|e| ApiError::from(QueryError::from(e)))?;
        Ok(json!({
            "rgb_png_b64": B64.encode(rgb),
            "alpha_png_b64": B64.encode(alpha),
        }))
    })
    .await
}

async fn query_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: QueryRequest = parse(&body)?;
    let cam = camera_of(&req.camera)?;
    let target = match (&req.term, &req.embedding) {
        (Some(t), None) => QueryTarget::Term(t.clone()),
        (None, Some(e)) => QueryTarget::Embedding(e.clone()),
        _ => return Err(ApiError::bad("give exactly one of `term` or `embedding`")),
    };
    let floor = req.alpha_floor.unwrap_or(langfield::eval::ALPHA_FLOOR);
    if !floor.is_finite() {
        return Err(ApiError::bad("alpha_floor must be finite"));
    }
    let key = format!("query:{}", serde_json::to_string(&req).expect("serializable"));
    cached(state, key, move |scene| {
        let r = run_query(scene, &cam, &target, floor, &RenderOptions::default())?;
        Ok(json!({
            "heatmap_png_b64": B64.encode(r.heatmap_png()?),
            "labels_png_b64": B64.encode(r.labels_png()?),
            "max_similarity": r.max_similarity,
        }))
    })
    .await
}

pub fn router(scene: Scene, cache_size: usize) -> Router {
    let state = Arc::new(AppState {
        scene,
        cache: Mutex::new(ResponseCache::new(cache_size)),
    });
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/scene/meta", get(meta))
        .route("/render", post(render_handler))
        .route("/query", post(query_handler))
        .with_state(state)
}

pub fn run(a: ServeArgs) -> Result<ExitCode> {
    let scene = load_scene(&a.scene).with_context(|| format!("loading scene {}", a.scene.display()))?;
    let report = validate_scene(&scene);
    if !report.is_clean() {
        anyhow::bail!("scene {} is invalid:\n{report}", a.scene.display());
    }
    let addr: SocketAddr = format!("{}:{}", a.bind, a.port)
        .parse()
        .with_context(|| format!("bad bind address {}:{}", a.bind, a.port))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(scene, a.cache_size))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(ExitCode::SUCCESS)
    })
}
