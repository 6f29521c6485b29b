//! Local HTTP render service.
//!
//! Flows are computed once at startup; every request renders from the
//! immutable session state. Endpoints (all GET):
//!
//! - `/api/meta`: `{"width", "height", "pair"}`
//! - `/api/view?a=`: PNG of the viewpoint at `a`
//! - `/api/closeup?a=&z=[&cx=&cy=&tau=&feather=]`: PNG close-up; 422 with a
//!   JSON warning (image inlined as base64) when segmentation degenerates
//! - `/api/flow.png?dir=fwd|back`: color-wheel flow visualization
//! - everything else: static viewer assets

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use base64::Engine;
use serde_json::json;
use tower_http::services::ServeDir;

use vvs_core::closeup::{closeup_fused, CloseupParams, Tau};
use vvs_core::flow::flow_to_color;
use vvs_core::raster::encode_png;
use vvs_core::synthesis::synthesize_view;
use vvs_core::{FlowField, Image};

use crate::pipeline::PreparedPair;

/// Immutable per-process render state.
#[derive(Debug)]
pub struct SessionState {
    pub img1: Image,
    pub img2: Image,
    pub f12: FlowField,
    pub f21: FlowField,
    pub pair: String,
}

impl From<PreparedPair> for SessionState {
    fn from(p: PreparedPair) -> Self {
        Self { img1: p.img1, img2: p.img2, f12: p.f12, f21: p.f21, pair: p.hash }
    }
}

pub fn default_static_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("static")
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, code, message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, code: "render_failed", message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

type Params = Query<HashMap<String, String>>;

fn number(q: &HashMap<String, String>, name: &str) -> Result<Option<f64>, ApiError> {
    let Some(raw) = q.get(name) else {
        return Ok(None);
    };
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(ApiError::bad_request("invalid_parameter", format!("{name}={raw:?} is not a finite number"))),
    }
}

fn required(q: &HashMap<String, String>, name: &str) -> Result<f64, ApiError> {
    number(q, name)?.ok_or_else(|| ApiError::bad_request("missing_parameter", format!("query parameter {name} is required")))
}

fn unit(name: &str, v: f64) -> Result<f64, ApiError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(ApiError::bad_request("out_of_range", format!("{name}={v} is outside [0, 1]")))
    }
}

fn png(image: &Image) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], encode_png(image)).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))
}

async fn meta(State(s): State<Arc<SessionState>>) -> Response {
    Json(json!({ "width": s.img1.width(), "height": s.img1.height(), "pair": s.pair })).into_response()
}

async fn view(State(s): State<Arc<SessionState>>, Query(q): Params) -> Result<Response, ApiError> {
    let a = unit("a", required(&q, "a")?)?;
    let image = blocking(move || synthesize_view(&s.img1, &s.img2, &s.f12, &s.f21, a).map(|v| v.image))
        .await?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(png(&image))
}

fn closeup_params(q: &HashMap<String, String>) -> Result<(f64, CloseupParams), ApiError> {
    let a = unit("a", required(q, "a")?)?;
    let zoom = required(q, "z")?;
    if zoom < 1.0 {
        return Err(ApiError::bad_request("out_of_range", format!("z={zoom} is below 1")));
    }
    let defaults = CloseupParams::default();
    let cx = unit("cx", number(q, "cx")?.unwrap_or(defaults.cx))?;
    let cy = unit("cy", number(q, "cy")?.unwrap_or(defaults.cy))?;
    let feather = number(q, "feather")?.unwrap_or(defaults.feather);
    if feather < 0.0 {
        return Err(ApiError::bad_request("out_of_range", format!("feather={feather} is negative")));
    }
    let tau = match q.get("tau") {
        None => Tau::Auto,
        Some(raw) => raw.parse::<Tau>().map_err(|e| ApiError::bad_request("invalid_parameter", e.to_string()))?,
    };
    Ok((a, CloseupParams { zoom, cx, cy, tau, feather }))
}

async fn closeup(State(s): State<Arc<SessionState>>, Query(q): Params) -> Result<Response, ApiError> {
    let (a, params) = closeup_params(&q)?;
    let result = blocking(move || closeup_fused(&s.img1, &s.img2, &s.f12, &s.f21, a, &params))
        .await?
        .map_err(|e| ApiError::internal(e.to_string()))?;
    if !result.fallback {
        return Ok(png(&result.image));
    }
    let body = json!({
        "error": "degenerate_segmentation",
        "message": "foreground could not be separated from background; returned a uniform zoom",
        "warning": true,
        "image_png_base64": base64::engine::general_purpose::STANDARD.encode(encode_png(&result.image)),
    });
    Ok((StatusCode::UNPROCESSABLE_ENTITY, Json(body)).into_response())
}

async fn flow_png(State(s): State<Arc<SessionState>>, Query(q): Params) -> Result<Response, ApiError> {
    let back = match q.get("dir").map(String::as_str) {
        None | Some("fwd") => false,
        Some("back") => true,
        Some(other) => return Err(ApiError::bad_request("invalid_parameter", format!("dir={other:?}; expected fwd or back"))),
    };
    let image = blocking(move || flow_to_color(if back { &s.f21 } else { &s.f12 })).await?;
    Ok(png(&image))
}

/// The service's routes over `state`, with `static_dir` served under `/`.
pub fn router(state: Arc<SessionState>, static_dir: PathBuf) -> Router {
    Router::new()
        .route("/api/meta", get(meta))
        .route("/api/view", get(view))
        .route("/api/closeup", get(closeup))
        .route("/api/flow.png", get(flow_png))
        .with_state(state)
        .fallback_service(ServeDir::new(static_dir))
}

/// Binds `host:port` and serves until interrupted.
pub async fn serve(pair: PreparedPair, host: &str, port: u16, static_dir: PathBuf) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    let app = router(Arc::new(SessionState::from(pair)), static_dir);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
