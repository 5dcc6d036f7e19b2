//! Read-only HTTP API over a finished artifact directory.
//!
//! Everything is loaded once at startup into an immutable [`ServiceState`];
//! requests share it without locking.

mod state;

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};
use urbanform::export::{geojson, BBox};
use urbanform::som::color_hex;

pub use state::{MapKind, ServiceState};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_K: usize = 6;
pub const MAX_K: usize = 100;
pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub port: u16,
    pub artifact_dir: PathBuf,
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            artifact_dir: PathBuf::from("artifacts"),
            cors_origin: None,
        }
    }
}

/// Error body `{code, message}` with its status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"schema_version": SCHEMA_VERSION, "code": self.code, "message": self.message});
        (self.status, Json(body)).into_response()
    }
}

type Params = Query<HashMap<String, String>>;

fn int_param(params: &HashMap<String, String>, name: &str, default: usize) -> Result<usize, ApiError> {
    match params.get(name) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| ApiError::bad_request(format!("{name} must be a non-negative integer, got '{v}'"))),
    }
}

fn image_url(place_id: &str) -> String {
    format!("/api/image/{}", percent_encode(place_id))
}

/// Escapes everything outside the RFC 3986 unreserved set.
fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn place_json(state: &ServiceState, place_id: &str) -> Value {
    let p = state.manifest.get(place_id).expect("validated at load");
    let node = state.strip_report.node_of(place_id);
    json!({
        "place_id": place_id,
        "name": p.name,
        "place_class": p.place_class,
        "lat": p.lat,
        "lon": p.lon,
        "node": node,
        "color_hex": node.map(|n| color_hex(state.strip_colors[n])),
        "image_url": image_url(place_id),
    })
}

async fn similar(State(state): State<Arc<ServiceState>>, Query(params): Params) -> Result<Json<Value>, ApiError> {
    let id = params
        .get("place_id")
        .ok_or_else(|| ApiError::bad_request("place_id is required"))?;
    let k = int_param(&params, "k", DEFAULT_K)?;
    if !(1..=MAX_K).contains(&k) {
        return Err(ApiError::bad_request(format!("k must be in 1..={MAX_K}, got {k}")));
    }
    if state.index.vector(id).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_place", format!("no place '{id}'")));
    }
    let available = state.index.len() - 1;
    if k > available {
        return Err(ApiError::bad_request(format!("k={k} exceeds the {available} other places")));
    }
    let result = state
        .index
        .knn_by_id(id, k, true)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let neighbors: Vec<Value> = result
        .neighbors
        .iter()
        .map(|n| {
            let mut v = place_json(&state, &n.place_id);
            v["distance"] = json!(n.distance);
            v
        })
        .collect();
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "query": place_json(&state, id),
        "k": k,
        "neighbors": neighbors,
    })))
}

async fn grid(State(state): State<Arc<ServiceState>>, headers: HeaderMap) -> Result<Response, ApiError> {
    let Some(g) = &state.grid else {
        return Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "grid_unavailable",
            "no grid map was trained; enable som.grid and rerun the som stage",
        ));
    };
    let etag = HeaderValue::from_str(&g.etag).expect("hex digest");
    if headers.get(header::IF_NONE_MATCH).is_some_and(|v| v == etag) {
        return Ok((StatusCode::NOT_MODIFIED, [(header::ETAG, etag)]).into_response());
    }
    Ok((
        [
            (header::ETAG, etag),
            (header::CONTENT_TYPE, HeaderValue::from_static("application/json")),
            (header::CACHE_CONTROL, HeaderValue::from_static("public, max-age=0, must-revalidate")),
        ],
        g.body.clone(),
    )
        .into_response())
}

async fn cluster(
    State(state): State<Arc<ServiceState>>,
    Path(node): Path<String>,
    Query(params): Params,
) -> Result<Json<Value>, ApiError> {
    let kind = match params.get("map").map(String::as_str) {
        None => state.default_cluster_map(),
        Some("grid") if state.grid.is_some() => MapKind::Grid,
        Some("grid") => {
            return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "grid_unavailable", "no grid map was trained"))
        }
        Some("strip") => MapKind::Strip,
        Some(other) => return Err(ApiError::bad_request(format!("map must be grid or strip, got '{other}'"))),
    };
    let count = state.node_count(kind);
    let node: usize = node
        .parse()
        .ok()
        .filter(|&n| n < count)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_node", format!("node '{node}' not in 0..{count}")))?;
    let limit = int_param(&params, "limit", DEFAULT_PAGE)?;
    if !(1..=MAX_PAGE).contains(&limit) {
        return Err(ApiError::bad_request(format!("limit must be in 1..={MAX_PAGE}")));
    }
    let offset = int_param(&params, "offset", 0)?;
    let members = &state.members(kind)[node];
    let page: Vec<Value> = members
        .iter()
        .skip(offset)
        .take(limit)
        .map(|(id, d)| json!({"place_id": id, "distance": d, "image_url": image_url(id)}))
        .collect();
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "map": kind,
        "node": node,
        "total": members.len(),
        "offset": offset,
        "limit": limit,
        "members": page,
    })))
}

async fn image(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let pos = state
        .images
        .position(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_place", format!("no image for '{id}'")))?;
    let png = state.images.images()[pos].to_png();
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn geomap(State(state): State<Arc<ServiceState>>, Query(params): Params) -> Result<Json<Value>, ApiError> {
    let bbox = match params.get("bbox") {
        None => None,
        Some(s) => Some(s.parse::<BBox>().map_err(|e| ApiError::bad_request(e.to_string()))?),
    };
    let mut body = geojson(&state.features, bbox.as_ref());
    body["schema_version"] = json!(SCHEMA_VERSION);
    Ok(Json(body))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: Arc<ServiceState>, cors_origin: Option<&str>) -> Result<Router, String> {
    let mut app = Router::new()
        .route("/api/similar", get(similar))
        .route("/api/grid", get(grid))
        .route("/api/cluster/{node}", get(cluster))
        .route("/api/image/{place_id}", get(image))
        .route("/api/geomap", get(geomap))
        .fallback(not_found)
        .with_state(state);
    if let Some(origin) = cors_origin {
        let allow = if origin == "*" {
            AllowOrigin::any()
        } else {
            AllowOrigin::exact(HeaderValue::from_str(origin).map_err(|_| format!("invalid CORS origin '{origin}'"))?)
        };
        app = app.layer(
            CorsLayer::new()
                .allow_origin(allow)
                .allow_methods([Method::GET])
                .expose_headers([header::ETAG]),
        );
    }
    Ok(app)
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<ServiceState>,
    cors_origin: Option<&str>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(state, cors_origin).map_err(std::io::Error::other)?;
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// Loads the artifacts, binds the port and serves until Ctrl-C or SIGTERM.
pub async fn run(config: &ServiceConfig) -> Result<(), Box<dyn std::error::Error>> {
    let state = Arc::new(ServiceState::load(&config.artifact_dir)?);
    let listener = tokio::net::TcpListener::bind(SocketAddr::from(([0, 0, 0, 0], config.port))).await?;
    log::info!(
        "serving {} places from {} on {}",
        state.index.len(),
        config.artifact_dir.display(),
        listener.local_addr()?
    );
    serve(listener, state, config.cors_origin.as_deref(), shutdown_signal()).await?;
    log::info!("shut down");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
