//! Read-only JSON API over loaded bundles.
//!
//! | route | answer |
//! |---|---|
//! | `GET /api/manifest` | the bundle manifest |
//! | `GET /api/accuracy?model&attack` | natural and per-ε robust accuracy |
//! | `GET /api/view?model&attack&epsilon&level&x0&y0&x1&y1` | bin representatives and density in a viewport |
//! | `GET /api/instance/{id}?model&attack&epsilon` | images as base64 PNG, labels, confidences |
//! | `GET /api/selection?model&attack&epsilon&ids=1,2` | coordinates and predictions of chosen ids |
//!
//! Every route also takes an optional `bundle` naming one of the served
//! bundles; the first is the default. Errors are `{"error", "detail"}`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use advx_core::attacks::{AttackMethod, Norm};
use advx_core::cube::Viewport;
use axum::extract::rejection::{PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use tower_http::compression::CompressionLayer;
use tower_http::services::ServeDir;

use crate::bundle::{Artifact, AttackRun, Bundle, Manifest};
use crate::image::{encode_png, noise_to_unit, to_base64};

pub const DEFAULT_PORT: u16 = 8787;

/// Tolerance when matching a requested ε against the stored grid.
const EPSILON_MATCH: f64 = 1e-6;

struct Served {
    manifest: Manifest,
    bundle: Bundle,
}

#[derive(Clone)]
struct ApiState {
    bundles: Arc<Vec<Served>>,
}

/// Structured error body.
#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    pub error: &'static str,
    pub detail: String,
}

impl ApiError {
    fn not_found(detail: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            error: "not_found",
            detail: detail.into(),
        }
    }

    fn bad_request(detail: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            error: "bad_request",
            detail: detail.into(),
        }
    }

    fn internal(detail: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            error: "internal",
            detail: detail.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Params = Result<Query<HashMap<String, String>>, QueryRejection>;

/// Builds the application: API routes, gzip, and the UI (static files from
/// `ui_dir`, or a placeholder page).
pub fn router(bundles: Vec<(Manifest, Bundle)>, ui_dir: Option<PathBuf>) -> Router {
    let state = ApiState {
        bundles: Arc::new(
            bundles
                .into_iter()
                .map(|(manifest, bundle)| Served { manifest, bundle })
                .collect(),
        ),
    };
    let api = Router::new()
        .route("/api/manifest", get(manifest))
        .route("/api/accuracy", get(accuracy))
        .route("/api/view", get(view))
        .route("/api/instance/{id}", get(instance))
        .route("/api/selection", get(selection))
        .route("/api/{*rest}", get(unknown_route))
        .with_state(state);
    let app = match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder)).fallback(unknown_route),
    };
    app.layer(CompressionLayer::new())
}

/// Serves `app` until the process is stopped.
/// Serves `app` on an already bound listener until the process exits.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}

async fn placeholder() -> Html<&'static str> {
    Html("<!doctype html><title>advx</title><p>The web UI is not built. The API is available under /api/.</p>\n")
}

async fn unknown_route() -> ApiError {
    ApiError::not_found("no such route")
}

struct Request<'a> {
    params: HashMap<String, String>,
    served: &'a Served,
}

impl<'a> Request<'a> {
    fn new(state: &'a ApiState, params: Params) -> Result<Self, ApiError> {
        let Query(params) = params.map_err(|e| ApiError::bad_request(e.body_text()))?;
        let served = match params.get("bundle") {
            None => state.bundles.first().ok_or_else(|| ApiError::not_found("no bundle loaded"))?,
            Some(name) => state
                .bundles
                .iter()
                .find(|b| b.manifest.name == *name)
                .ok_or_else(|| ApiError::not_found(format!("unknown bundle {name:?}")))?,
        };
        Ok(Request { params, served })
    }

    fn required(&self, key: &str) -> Result<&str, ApiError> {
        self.params
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| ApiError::bad_request(format!("missing query parameter {key:?}")))
    }

    fn number<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ApiError> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| ApiError::bad_request(format!("{key}={v:?} is not a valid number"))),
        }
    }

    fn bundle(&self) -> &'a Bundle {
        &self.served.bundle
    }

    fn run(&self) -> Result<&'a AttackRun, ApiError> {
        let model = self.required("model")?;
        let attack = self.required("attack")?;
        if self.bundle().model(model).is_none() {
            return Err(ApiError::not_found(format!("unknown model {model:?}")));
        }
        let method: AttackMethod = attack
            .parse()
            .map_err(|_| ApiError::not_found(format!("unknown attack {attack:?}")))?;
        self.bundle()
            .run(model, method)
            .ok_or_else(|| ApiError::not_found(format!("no {attack} run for model {model:?}")))
    }

    /// The run and the ε group selected by `epsilon`.
    fn group(&self) -> Result<(&'a AttackRun, &'a Artifact), ApiError> {
        let run = self.run()?;
        let raw = self.required("epsilon")?;
        let eps: f64 = raw
            .parse()
            .map_err(|_| ApiError::bad_request(format!("epsilon={raw:?} is not a number")))?;
        let group = run
            .groups
            .iter()
            .find(|g| (g.epsilon as f64 - eps).abs() <= EPSILON_MATCH)
            .ok_or_else(|| ApiError::not_found(format!("epsilon {raw} is not in the grid")))?;
        Ok((run, group))
    }
}

async fn manifest(State(state): State<ApiState>, params: Params) -> ApiResult<Manifest> {
    let req = Request::new(&state, params)?;
    Ok(Json(req.served.manifest.clone()))
}

#[derive(Debug, Serialize)]
struct AccuracyResponse {
    model: String,
    attack: AttackMethod,
    epsilons: Vec<f32>,
    natural: f64,
    robust: Vec<f64>,
}

async fn accuracy(State(state): State<ApiState>, params: Params) -> ApiResult<AccuracyResponse> {
    let req = Request::new(&state, params)?;
    let run = req.run()?;
    let robust: Vec<f64> = run.groups.iter().map(|g| g.accuracy.robust).collect();
    Ok(Json(AccuracyResponse {
        model: run.model.clone(),
        attack: run.config.method,
        epsilons: run.config.epsilons.clone(),
        natural: robust[0],
        robust,
    }))
}

#[derive(Debug, Serialize)]
struct Point {
    id: usize,
    x: f64,
    y: f64,
    true_label: usize,
    prediction: usize,
}

#[derive(Debug, Serialize)]
struct Density {
    i: usize,
    j: usize,
    cx: f64,
    cy: f64,
    count: usize,
    radius_hint: f64,
}

#[derive(Debug, Serialize)]
struct ViewResponse {
    epsilon: f32,
    level: usize,
    grid: usize,
    points: Vec<Point>,
    density: Vec<Density>,
}

fn point(bundle: &Bundle, group: &Artifact, id: usize) -> Point {
    let c = group.coords[id];
    Point {
        id,
        x: c[0] as f64,
        y: c[1] as f64,
        true_label: bundle.dataset.labels()[id],
        prediction: group.predictions.adversarial[id],
    }
}

async fn view(State(state): State<ApiState>, params: Params) -> ApiResult<ViewResponse> {
    let req = Request::new(&state, params)?;
    let (_, group) = req.group()?;
    let level: usize = req.number("level", 0)?;
    let grid = group
        .cube
        .level(level)
        .map_err(|e| ApiError::bad_request(e.to_string()))?
        .grid;
    let viewport = Viewport::new(
        req.number("x0", 0.0)?,
        req.number("y0", 0.0)?,
        req.number("x1", 1.0)?,
        req.number("y1", 1.0)?,
    )
    .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let result = group
        .cube
        .query_view(&viewport, level)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(ViewResponse {
        epsilon: group.epsilon,
        level,
        grid,
        points: result
            .representatives
            .iter()
            .map(|r| point(req.bundle(), group, r.instance_id))
            .collect(),
        density: result
            .density
            .into_iter()
            .map(|d| Density {
                i: d.i,
                j: d.j,
                cx: d.cx,
                cy: d.cy,
                count: d.count,
                radius_hint: d.radius_hint,
            })
            .collect(),
    }))
}

#[derive(Debug, Serialize)]
struct InstanceResponse {
    id: usize,
    model: String,
    attack: AttackMethod,
    epsilon: f32,
    norm: Norm,
    true_label: usize,
    clean_prediction: usize,
    adv_prediction: usize,
    clean_confidences: Vec<f64>,
    adv_confidences: Vec<f64>,
    /// Largest ε of the grid; noise is shown as `(n + s)/(2s)`.
    noise_scale: f32,
    perturbation_norm: f64,
    original_png: String,
    noise_png: String,
    adversarial_png: String,
}

async fn instance(
    State(state): State<ApiState>,
    path: Result<Path<String>, PathRejection>,
    params: Params,
) -> ApiResult<InstanceResponse> {
    let req = Request::new(&state, params)?;
    let Path(raw) = path.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let id: usize = raw
        .parse()
        .map_err(|_| ApiError::bad_request(format!("instance id {raw:?} is not a number")))?;
    let (run, group) = req.group()?;
    let bundle = req.bundle();
    let original = bundle
        .dataset
        .images()
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("no instance {id}")))?;
    let adversarial = group
        .adversarial_image(original, id)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let k = bundle.dataset.class_count();
    let p = original.len();
    let s = original.shape();
    let confidences = |g: &Artifact| g.confidences[id * k..(id + 1) * k].iter().map(|&c| c as f64).collect();
    let png = |data: &[f32]| {
        encode_png(data, s.channels, s.height, s.width)
            .map(|b| to_base64(&b))
            .map_err(|e| ApiError::internal(e.to_string()))
    };
    let scale = run.config.max_epsilon();
    Ok(Json(InstanceResponse {
        id,
        model: run.model.clone(),
        attack: run.config.method,
        epsilon: group.epsilon,
        norm: run.config.norm,
        true_label: bundle.dataset.labels()[id],
        clean_prediction: group.predictions.clean[id],
        adv_prediction: group.predictions.adversarial[id],
        clean_confidences: confidences(&run.groups[0]),
        adv_confidences: confidences(group),
        noise_scale: scale,
        perturbation_norm: run.config.norm.distance(original.data(), adversarial.data()),
        original_png: png(original.data())?,
        noise_png: png(&noise_to_unit(&group.noise[id * p..(id + 1) * p], scale))?,
        adversarial_png: png(adversarial.data())?,
    }))
}

async fn selection(State(state): State<ApiState>, params: Params) -> ApiResult<Vec<Option<Point>>> {
    let req = Request::new(&state, params)?;
    let (_, group) = req.group()?;
    let raw = req.params.get("ids").map(String::as_str).unwrap_or("");
    let ids = raw
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| ApiError::bad_request(format!("id {t:?} is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = req.bundle().dataset.len();
    Ok(Json(
        ids.into_iter()
            .map(|id| (id < n).then(|| point(req.bundle(), group, id)))
            .collect(),
    ))
}
