//! HTTP routes over [`Platform`]. The caller is identified by the
//! `X-User-Id` header; every handler runs on the blocking pool.

use std::sync::Arc;

use axum::extract::{FromRequestParts, Multipart, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use xaistore::explain::{matrix_from_rows, LimeParams};
use xaistore::faithfulness::{self, EvalQuery};
use xaistore::model::RegionBrightnessDetector;
use xaistore::platform::{ErrorKind, Platform, PlatformError, DEFAULT_COMPARE_K};
use xaistore::rag::Strategy;
use xaistore::store::canonical_json;

pub const USER_HEADER: &str = "x-user-id";
pub const DEFAULT_USER: &str = "default";
pub const DEFAULT_SUITE_ID: &str = "default";
const MAX_UPLOAD_BYTES: usize = 32 * 1024 * 1024;

pub type AppState = Arc<Platform>;

/// Caller identity from `X-User-Id`, defaulting to `default`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserId(pub String);

impl<S: Send + Sync> FromRequestParts<S> for UserId {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        match parts.headers.get(USER_HEADER) {
            None => Ok(UserId(DEFAULT_USER.to_string())),
            Some(v) => {
                let id = v.to_str().unwrap_or_default().trim();
                let valid = !id.is_empty()
                    && id.len() <= 128
                    && !id.starts_with('.')
                    && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.@".contains(c));
                if !valid {
                    return Err(ApiError::invalid(format!("invalid {USER_HEADER} header")));
                }
                Ok(UserId(id.to_string()))
            }
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn invalid(message: impl Into<String>) -> Self {
        Self { status: StatusCode::UNPROCESSABLE_ENTITY, kind: "invalid_request", message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, kind: "internal", message: message.into() }
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        let (status, kind) = match e.kind() {
            ErrorKind::NotFound => (StatusCode::NOT_FOUND, "not_found"),
            ErrorKind::Invalid => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request"),
            ErrorKind::Unavailable => (StatusCode::SERVICE_UNAVAILABLE, "backend_unavailable"),
            ErrorKind::Generator => (StatusCode::BAD_GATEWAY, "generator_unavailable"),
            ErrorKind::Upstream => (StatusCode::BAD_GATEWAY, "upstream_error"),
            ErrorKind::Internal => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self { status, kind, message: e.to_string() }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::warn!(status = %self.status, "{}", self.message);
        }
        let body = ErrorBody { error: self.kind, message: &self.message };
        (self.status, canonical(&body)).into_response()
    }
}

/// JSON response body with sorted keys.
pub struct Canonical(Vec<u8>);

fn canonical<T: Serialize>(value: &T) -> Canonical {
    Canonical(canonical_json(value))
}

impl IntoResponse for Canonical {
    fn into_response(self) -> Response {
        let mut resp = self.0.into_response();
        resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
        resp
    }
}

type ApiResult = Result<Canonical, ApiError>;

async fn blocking<T, F>(platform: AppState, f: F) -> ApiResult
where
    T: Serialize,
    F: FnOnce(&Platform) -> Result<T, PlatformError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&platform).map(|v| canonical(&v)))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

pub fn router(platform: AppState) -> Router {
    Router::new()
        .route("/datasets", post(upload_dataset))
        .route("/datasets/{id}/stats", get(dataset_stats))
        .route("/datasets/{id}/samples", get(dataset_samples))
        .route("/explain/occlusion", post(explain_occlusion))
        .route("/explain/lime", post(explain_lime))
        .route("/explain/saliency", post(explain_saliency))
        .route("/explain/compare", get(compare))
        .route("/chat", post(chat))
        .route("/artifacts", get(list_artifacts))
        .route("/artifacts/{id}", get(get_artifact))
        .route("/artifacts/{id}/result", get(get_result))
        .route("/admin/rehydrate", post(rehydrate))
        .route("/eval/faithfulness", post(eval_faithfulness))
        .route("/health", get(health))
        .layer(axum::extract::DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(platform)
}

async fn upload_dataset(State(p): State<AppState>, UserId(user): UserId, mut form: Multipart) -> ApiResult {
    let mut raw = None;
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::invalid(e.to_string()))? {
        let is_file = field.name() == Some("file") || field.file_name().is_some();
        if is_file || raw.is_none() {
            raw = Some(field.bytes().await.map_err(|e| ApiError::invalid(e.to_string()))?);
        }
        if is_file {
            break;
        }
    }
    let raw = raw.ok_or_else(|| ApiError::invalid("multipart body has no CSV part"))?;
    blocking(p, move |p| p.ingest_csv(&user, &raw)).await
}

async fn dataset_stats(State(p): State<AppState>, UserId(user): UserId, Path(id): Path<String>) -> ApiResult {
    blocking(p, move |p| p.dataset_stats(&user, &id)).await
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    #[serde(default)]
    offset: usize,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    50
}

async fn dataset_samples(
    State(p): State<AppState>,
    UserId(user): UserId,
    Path(id): Path<String>,
    Query(q): Query<PageQuery>,
) -> ApiResult {
    blocking(p, move |p| p.samples(&user, &id, q.offset, q.limit)).await
}

#[derive(Debug, Deserialize)]
pub struct OcclusionRequest {
    pub dataset_id: String,
    pub row_id: String,
    #[serde(default)]
    pub target: Option<String>,
}

async fn explain_occlusion(State(p): State<AppState>, UserId(user): UserId, Json(req): Json<OcclusionRequest>) -> ApiResult {
    blocking(p, move |p| p.explain_occlusion(&user, &req.dataset_id, &req.row_id, req.target.as_deref())).await
}

#[derive(Debug, Deserialize)]
pub struct LimeRequest {
    pub dataset_id: String,
    pub row_id: String,
    pub k: Option<usize>,
    pub n_samples: Option<usize>,
    pub seed: Option<u64>,
}

impl LimeRequest {
    pub fn params(&self) -> LimeParams {
        let d = LimeParams::default();
        LimeParams {
            k: self.k.unwrap_or(d.k),
            n_samples: self.n_samples.unwrap_or(d.n_samples),
            seed: self.seed.unwrap_or(d.seed),
            ..d
        }
    }
}

async fn explain_lime(State(p): State<AppState>, UserId(user): UserId, Json(req): Json<LimeRequest>) -> ApiResult {
    blocking(p, move |p| p.explain_lime(&user, &req.dataset_id, &req.row_id, &req.params())).await
}

#[derive(Debug, Deserialize)]
pub struct DetectorSpec {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Deserialize)]
pub struct SaliencyRequest {
    pub image: Vec<Vec<f64>>,
    pub detector: DetectorSpec,
    pub patch_size: usize,
    pub stride: Option<usize>,
    #[serde(default)]
    pub fill: f64,
}

async fn explain_saliency(State(p): State<AppState>, UserId(user): UserId, Json(req): Json<SaliencyRequest>) -> ApiResult {
    blocking(p, move |p| {
        let image = matrix_from_rows(&req.image)?;
        let d = &req.detector;
        let detector = RegionBrightnessDetector { top: d.top, left: d.left, height: d.height, width: d.width };
        p.explain_saliency(&user, &detector, &image, req.patch_size, req.stride.unwrap_or(req.patch_size), req.fill)
    })
    .await
}

#[derive(Debug, Deserialize)]
struct CompareQuery {
    sample_id: String,
    k: Option<usize>,
}

async fn compare(State(p): State<AppState>, UserId(user): UserId, Query(q): Query<CompareQuery>) -> ApiResult {
    blocking(p, move |p| p.compare(&user, &q.sample_id, q.k.unwrap_or(DEFAULT_COMPARE_K))).await
}

#[derive(Debug, Deserialize)]
pub struct ChatRequest {
    pub question: String,
    #[serde(default)]
    pub strategy: Strategy,
    pub k: Option<usize>,
}

async fn chat(State(p): State<AppState>, UserId(user): UserId, Json(req): Json<ChatRequest>) -> ApiResult {
    blocking(p, move |p| p.chat(&user, &req.question, req.strategy, req.k)).await
}

async fn list_artifacts(State(p): State<AppState>, UserId(user): UserId) -> ApiResult {
    blocking(p, move |p| p.list_artifacts(&user)).await
}

async fn get_artifact(State(p): State<AppState>, UserId(user): UserId, Path(id): Path<String>) -> ApiResult {
    blocking(p, move |p| p.get_artifact(&user, &id)).await
}

async fn get_result(State(p): State<AppState>, UserId(user): UserId, Path(id): Path<String>) -> ApiResult {
    blocking(p, move |p| p.explanation(&user, &id)).await
}

#[derive(Serialize)]
struct RehydrateBody {
    count: usize,
}

async fn rehydrate(State(p): State<AppState>, UserId(user): UserId) -> ApiResult {
    blocking(p, move |p| p.rehydrate(&user).map(|count| RehydrateBody { count })).await
}

#[derive(Debug, Deserialize)]
pub struct EvalRequest {
    pub suite_id: Option<String>,
    #[serde(default)]
    pub strategy: Strategy,
    /// Store the report as a `faithfulness_report` artifact.
    #[serde(default)]
    pub persist: bool,
}

fn suite(id: Option<&str>) -> Result<Vec<EvalQuery>, PlatformError> {
    match id.unwrap_or(DEFAULT_SUITE_ID) {
        DEFAULT_SUITE_ID => Ok(faithfulness::default_suite()),
        other => Err(PlatformError::NotFound(format!("evaluation suite {other}"))),
    }
}

async fn eval_faithfulness(State(p): State<AppState>, UserId(user): UserId, Json(req): Json<EvalRequest>) -> ApiResult {
    blocking(p, move |p| {
        let queries = suite(req.suite_id.as_deref())?;
        let report = p.run_eval(&user, &queries, req.strategy, None)?;
        if req.persist {
            p.persist_report(&user, &report)?;
        }
        Ok(report)
    })
    .await
}

async fn health(State(p): State<AppState>) -> ApiResult {
    blocking(p, |p| Ok(p.health())).await
}
