//! HTTP recognition service.
//!
//! * `POST /api/classify?k=3`: raw image bytes or a multipart form with an
//!   `image` field; returns the top-k prediction.
//! * `GET /api/species`: every catalog entry and model label.
//! * `GET /healthz`: status and model metadata.
//!
//! Errors are `{"error": {"code": ..., "message": ...}}` with a 4xx status for
//! client mistakes and 5xx for server faults.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use canopy_core::recognizer::{ModelInfo, Recognizer, SpeciesCatalog, SpeciesListing};
use canopy_core::Error as CoreError;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

/// Upload cap: comfortably above a full-resolution phone photo.
pub const DEFAULT_MAX_UPLOAD: usize = 16 * 1024 * 1024;

pub const DEFAULT_TOP_K: usize = 3;

#[derive(Clone, Debug)]
pub struct ServeConfig {
    pub model: PathBuf,
    pub catalog: PathBuf,
    pub listen: SocketAddr,
    pub max_upload_bytes: usize,
    pub cors_origin: String,
    pub static_dir: Option<PathBuf>,
}

#[derive(Clone)]
pub struct AppState {
    recognizer: Arc<Recognizer>,
    max_upload_bytes: usize,
}

impl AppState {
    pub fn new(recognizer: Recognizer, max_upload_bytes: usize) -> Self {
        AppState {
            recognizer: Arc::new(recognizer),
            max_upload_bytes,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}: {}", self.code, self.message);
        }
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Decode { message, .. } => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "undecodable_image",
                format!("the upload is not a readable JPEG or PNG image ({message})"),
            ),
            CoreError::InvalidArgument(m) => ApiError::new(StatusCode::BAD_REQUEST, "invalid_argument", m),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

#[derive(Debug, Deserialize)]
struct ClassifyQuery {
    k: Option<String>,
}

fn parse_k(raw: Option<&str>) -> Result<usize, ApiError> {
    match raw {
        None => Ok(DEFAULT_TOP_K),
        Some(s) => match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(k),
            _ => Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "invalid_k",
                format!("k must be a positive integer, got '{s}'"),
            )),
        },
    }
}

fn too_large(limit: usize) -> ApiError {
    ApiError::new(
        StatusCode::PAYLOAD_TOO_LARGE,
        "payload_too_large",
        format!("uploads are limited to {limit} bytes"),
    )
}

async fn image_from_multipart(request: Request, limit: usize) -> Result<Bytes, ApiError> {
    let mut form = Multipart::from_request(request, &())
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_multipart", e.body_text()))?;
    loop {
        let field = form
            .next_field()
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_multipart", e.body_text()))?;
        let Some(field) = field else {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "missing_image",
                "multipart form has no 'image' field",
            ));
        };
        if field.name() == Some("image") {
            let bytes = field
                .bytes()
                .await
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_multipart", e.body_text()))?;
            if bytes.len() > limit {
                return Err(too_large(limit));
            }
            return Ok(bytes);
        }
    }
}

async fn classify(
    State(state): State<AppState>,
    Query(query): Query<ClassifyQuery>,
    request: Request,
) -> Result<Response, ApiError> {
    let k = parse_k(query.k.as_deref())?;
    let limit = state.max_upload_bytes;
    if let Some(len) = request
        .headers()
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok())
    {
        if len > limit as u64 {
            return Err(too_large(limit));
        }
    }
    let is_multipart = request
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.to_ascii_lowercase().starts_with("multipart/form-data"));
    let (parts, body) = request.into_parts();
    // Multipart framing adds a little overhead on top of the image itself.
    let slack = if is_multipart { 64 * 1024 } else { 0 };
    let raw = to_bytes(body, limit + slack).await.map_err(|_| too_large(limit))?;
    let image = if is_multipart {
        image_from_multipart(Request::from_parts(parts, Body::from(raw)), limit).await?
    } else {
        raw
    };
    if image.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty_body", "no image bytes were sent"));
    }
    let recognizer = state.recognizer.clone();
    let prediction = tokio::task::spawn_blocking(move || recognizer.classify(&image, k))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(prediction).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpeciesResponse {
    pub species: Vec<SpeciesListing>,
}

async fn species(State(state): State<AppState>) -> Json<SpeciesResponse> {
    Json(SpeciesResponse {
        species: state.recognizer.species(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthModel {
    #[serde(flatten)]
    pub info: ModelInfo,
    pub num_classes: usize,
    pub labels: Vec<String>,
    pub input_shape: [usize; 3],
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model: HealthModel,
}

async fn healthz(State(state): State<AppState>) -> Json<HealthResponse> {
    let r = &state.recognizer;
    let (h, w, c) = r.graph().input_shape();
    Json(HealthResponse {
        status: "ok".into(),
        model: HealthModel {
            info: r.model_info(),
            num_classes: r.labels().len(),
            labels: r.labels().as_slice().to_vec(),
            input_shape: [h, w, c],
            metadata: r.graph().metadata().clone(),
        },
    })
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

fn cors(origin: &str) -> Result<CorsLayer> {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([header::CONTENT_TYPE]);
    if origin.trim() == "*" {
        return Ok(layer.allow_origin(Any));
    }
    let origins = origin
        .split(',')
        .map(|o| HeaderValue::from_str(o.trim()).with_context(|| format!("invalid CORS origin '{o}'")))
        .collect::<Result<Vec<_>>>()?;
    Ok(layer.allow_origin(AllowOrigin::list(origins)))
}

/// The service's routes over an already loaded recognizer.
pub fn router(state: AppState, cors_origin: &str, static_dir: Option<PathBuf>) -> Result<Router> {
    let limit = state.max_upload_bytes;
    let api = Router::new()
        .route("/api/classify", post(classify))
        .route("/api/species", get(species))
        .route("/healthz", get(healthz));
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    };
    Ok(app
        .layer(DefaultBodyLimit::max(limit + 64 * 1024))
        .layer(cors(cors_origin)?)
        .with_state(state))
}

/// Loads the model and catalog named by `config`, failing with the cause
/// when either is missing or inconsistent.
pub fn load_state(config: &ServeConfig) -> Result<AppState> {
    if !config.model.is_file() {
        anyhow::bail!("model bundle {} does not exist", config.model.display());
    }
    if !config.catalog.is_file() {
        anyhow::bail!("species catalog {} does not exist", config.catalog.display());
    }
    let catalog = SpeciesCatalog::load(&config.catalog)?;
    let (graph, labels) = canopy_core::graph::load_bundle(&config.model)
        .with_context(|| format!("loading model {}", config.model.display()))?;
    let recognizer = Recognizer::new(graph, labels, catalog)?;
    if config.max_upload_bytes == 0 {
        anyhow::bail!("max upload size must be positive");
    }
    Ok(AppState::new(recognizer, config.max_upload_bytes))
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

pub async fn serve(config: ServeConfig) -> Result<()> {
    let state = load_state(&config)?;
    let app = router(state, &config.cors_origin, config.static_dir.clone())?;
    let listener = tokio::net::TcpListener::bind(config.listen)
        .await
        .with_context(|| format!("binding {}", config.listen))?;
    log::info!("listening on http://{}", listener.local_addr()?);
    serve_on(listener, app, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
