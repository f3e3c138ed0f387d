//! Request/response schemas and handlers.

use std::collections::BTreeSet;
use std::time::Instant;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use condreg::bench::{self, SweepRow};
use condreg::datagen::{PairRecord, Split};
use condreg::grid::{jacobian_determinant, warp, warp_labels, GridShape, Image, Interpolation};
use condreg::metrics::dice;

use crate::render::{grid_overlay, image_slices, jacobian_slices, EncodedSlice, GridOverlay, Window};
use crate::AppState;

/// Error body: `{"error": "..."}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl From<condreg::Error> for ApiError {
    fn from(e: condreg::Error) -> Self {
        use condreg::Error as E;
        let status = match &e {
            E::Range(_) => StatusCode::UNPROCESSABLE_ENTITY,
            E::Config(_) | E::Shape(_) | E::Dimension(_) | E::Value(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_id: String,
    pub lambda_range: [f64; 2],
    pub conditioning: String,
    pub dims: usize,
}

pub async fn health(State(s): State<AppState>) -> Json<Health> {
    let c = s.model.config();
    Json(Health {
        status: "ok".into(),
        model_id: s.model_id.to_string(),
        lambda_range: [c.lambda_range.0, c.lambda_range.1],
        conditioning: c.conditioning.to_string(),
        dims: c.dims,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PairInfo {
    pub id: String,
    pub split: Option<Split>,
    pub shape: Vec<usize>,
    pub labels: Vec<i32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PairList {
    pub pairs: Vec<PairInfo>,
}

pub async fn pairs(State(s): State<AppState>) -> Json<PairList> {
    Json(PairList {
        pairs: s
            .pairs
            .values()
            .map(|p| PairInfo {
                id: p.record.id.clone(),
                split: p.split,
                shape: p.record.fixed.shape().dims().to_vec(),
                labels: p.record.labels().to_vec(),
            })
            .collect(),
    })
}

/// Inline image: C-order values on `shape`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InlineImage {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl InlineImage {
    fn to_image(&self) -> condreg::Result<Image> {
        Image::new(GridShape::new(self.shape.clone())?, self.values.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Warped,
    FieldPreview,
    Jacobian,
    Metrics,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterRequest {
    #[serde(default)]
    pub pair_id: Option<String>,
    #[serde(default)]
    pub fixed: Option<InlineImage>,
    #[serde(default)]
    pub moving: Option<InlineImage>,
    /// Raw regularization weight.
    pub lambda: f64,
    /// Defaults to every output.
    #[serde(default)]
    pub outputs: Option<BTreeSet<Output>>,
    #[serde(default)]
    pub window: Option<Window>,
    #[serde(default)]
    pub jacobian_window: Option<Window>,
    #[serde(default)]
    pub grid_step: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub model_id: String,
    pub pair_id: Option<String>,
    pub lambda: f64,
    pub std_jac: f64,
    /// Mean Dice when the pair has label maps.
    pub dsc: Option<f64>,
    pub inference_s: f64,
    pub warped: Option<Vec<EncodedSlice>>,
    pub grid_overlay: Option<Vec<GridOverlay>>,
    pub jacobian_slice: Option<Vec<EncodedSlice>>,
}

enum Inputs {
    Stored(PairRecord),
    Inline(Image, Image),
}

fn resolve(s: &AppState, req: &RegisterRequest) -> Result<Inputs, ApiError> {
    match (&req.pair_id, &req.fixed, &req.moving) {
        (Some(id), None, None) => s
            .pairs
            .get(id)
            .map(|p| Inputs::Stored(p.record.clone()))
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown pair {id:?}"))),
        (None, Some(f), Some(m)) => Ok(Inputs::Inline(f.to_image()?, m.to_image()?)),
        _ => Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "give either pair_id or both fixed and moving",
        )),
    }
}

fn run_register(s: &AppState, req: &RegisterRequest, inputs: Inputs) -> Result<RegisterResponse, ApiError> {
    let all: BTreeSet<Output> = [Output::Warped, Output::FieldPreview, Output::Jacobian, Output::Metrics].into();
    let outputs = req.outputs.clone().unwrap_or(all);
    let (fixed, moving, labels, pair_id) = match &inputs {
        Inputs::Stored(p) => (&p.fixed, &p.moving, Some(p), Some(p.id.clone())),
        Inputs::Inline(f, m) => (f, m, None, None),
    };
    let t0 = Instant::now();
    let field = s.model.register_raw(fixed, moving, req.lambda)?;
    let inference_s = t0.elapsed().as_secs_f64();
    let std_jac = condreg::grid::std_jacobian(&field)?;
    let dsc = match (labels, outputs.contains(&Output::Metrics)) {
        (Some(p), true) => {
            let warped = warp_labels(&p.moving_labels, &field)?;
            Some(dice(&p.fixed_labels, &warped, p.labels())?.mean)
        }
        _ => None,
    };
    let warped = if outputs.contains(&Output::Warped) {
        let w = warp(moving, &field, Interpolation::Linear)?;
        Some(image_slices(&w, req.window.unwrap_or_default()))
    } else {
        None
    };
    let jacobian_slice = if outputs.contains(&Output::Jacobian) {
        let (dims, det) = jacobian_determinant(&field)?;
        let win = req.jacobian_window.unwrap_or(Window { low: 0.0, high: 2.0 });
        Some(jacobian_slices(&det, &dims, win))
    } else {
        None
    };
    let grid = outputs
        .contains(&Output::FieldPreview)
        .then(|| grid_overlay(&field, req.grid_step.unwrap_or(4)));
    Ok(RegisterResponse {
        model_id: s.model_id.to_string(),
        pair_id,
        lambda: req.lambda,
        std_jac,
        dsc,
        inference_s,
        warped,
        grid_overlay: grid,
        jacobian_slice,
    })
}

/// Runs CPU-bound work off the async executor, at most `permits` at a time.
async fn bounded<T: Send + 'static>(
    s: &AppState,
    work: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    let permit = s
        .permits
        .clone()
        .acquire_owned()
        .await
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "service shutting down"))?;
    let out = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        work()
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    out
}

pub async fn register(
    State(s): State<AppState>,
    Json(req): Json<RegisterRequest>,
) -> Result<Json<RegisterResponse>, ApiError> {
    let (lo, hi) = s.model.config().lambda_range;
    if !(lo..=hi).contains(&req.lambda) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("lambda {} outside [{lo}, {hi}]", req.lambda),
        ));
    }
    let inputs = resolve(&s, &req)?;
    let state = s.clone();
    bounded(&s, move || run_register(&state, &req, inputs)).await.map(Json)
}

#[derive(Debug, Deserialize)]
pub struct SweepQuery {
    pub pair: String,
    /// Comma-separated raw lambdas; defaults to the seven-value grid.
    pub lambdas: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepResponse {
    pub model_id: String,
    pub pair_id: String,
    pub rows: Vec<SweepRow>,
}

pub async fn sweep(State(s): State<AppState>, Query(q): Query<SweepQuery>) -> Result<Json<SweepResponse>, ApiError> {
    let lambdas: Vec<f64> = match &q.lambdas {
        None => bench::DEFAULT_LAMBDAS.to_vec(),
        Some(text) => text
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("bad lambdas: {e}")))?,
    };
    let (lo, hi) = s.model.config().lambda_range;
    if let Some(l) = lambdas.iter().find(|l| !(lo..=hi).contains(*l)) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("lambda {l} outside [{lo}, {hi}]"),
        ));
    }
    let pair = s
        .pairs
        .get(&q.pair)
        .map(|p| p.record.clone())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown pair {:?}", q.pair)))?;
    let state = s.clone();
    let result = bounded(&s, move || {
        bench::sweep(&state.model, &state.model_id, std::slice::from_ref(&pair), &lambdas).map_err(ApiError::from)
    })
    .await?;
    Ok(Json(SweepResponse {
        model_id: s.model_id.to_string(),
        pair_id: q.pair,
        rows: result.rows,
    }))
}
