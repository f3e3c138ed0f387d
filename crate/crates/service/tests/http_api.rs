use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use serde_json::{json, Value};
use tower::ServiceExt;

use condreg::bench;
use condreg::condnet::{build_variant, Conditioning, ModelConfig};
use condreg::datagen::{generate_pairs, Split, SynthSpec};
use condreg_service::{router, AppState, StoredPair};

fn state() -> AppState {
    let model = build_variant(ModelConfig {
        levels: 2,
        blocks_per_level: 1,
        conv_filters: 8,
        latent_dim: 8,
        dims: 2,
        conditioning: Conditioning::CirDm,
        init_seed: 3,
        ..ModelConfig::default()
    })
    .unwrap();
    let spec = SynthSpec { shape: vec![32, 32], smoothness: 8.0, max_disp: 3.0, ..SynthSpec::default() };
    let pairs = generate_pairs(3, 100, &spec)
        .unwrap()
        .into_iter()
        .map(|record| StoredPair { record, split: Some(Split::Test) })
        .collect();
    AppState::new(model, "toy", pairs)
}

async fn call(state: &AppState, req: Request<Body>) -> (StatusCode, Value) {
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(body: Value) -> Request<Body> {
    Request::post("/v1/register")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

#[tokio::test]
async fn health_reports_model_and_range() {
    let (status, body) = call(&state(), get("/v1/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["model_id"], "toy");
    assert_eq!(body["lambda_range"], json!([0.0, 10.0]));
}

#[tokio::test]
async fn pairs_are_listed() {
    let (status, body) = call(&state(), get("/v1/pairs")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["pairs"].as_array().unwrap().len(), 3);
    assert_eq!(body["pairs"][0]["shape"], json!([32, 32]));
}

#[tokio::test]
async fn out_of_range_lambda_is_422() {
    let (status, body) = call(&state(), post(json!({"pair_id": "pair_000100", "lambda": 11.0}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("lambda"));
}

#[tokio::test]
async fn unknown_pair_is_404_and_missing_inputs_400() {
    let s = state();
    let (status, _) = call(&s, post(json!({"pair_id": "nope", "lambda": 1.0}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&s, post(json!({"lambda": 1.0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn register_is_deterministic_and_matches_offline_sweep() {
    let s = state();
    let req = json!({"pair_id": "pair_000101", "lambda": 4.0});
    let (status, a) = call(&s, post(req.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let (_, b) = call(&s, post(req)).await;
    assert_eq!(a["std_jac"], b["std_jac"]);
    assert!(a["warped"][0]["png_base64"].as_str().unwrap().len() > 10);
    assert_eq!(a["warped"][0]["window"], json!({"low": 0.0, "high": 1.0}));
    assert_eq!(a["jacobian_slice"][0]["width"], 30);
    assert!(!a["grid_overlay"][0]["lines"].as_array().unwrap().is_empty());

    let pair = condreg::datagen::generate_pair(101, &SynthSpec { shape: vec![32, 32], smoothness: 8.0, max_disp: 3.0, ..SynthSpec::default() }).unwrap();
    let offline = bench::sweep(s.model(), "toy", &[pair], &[4.0]).unwrap();
    let served = a["std_jac"].as_f64().unwrap();
    assert!((served - offline.rows[0].std_jac).abs() < 1e-6);
    assert!((a["dsc"].as_f64().unwrap() - offline.rows[0].dsc_mean).abs() < 1e-6);
}

#[tokio::test]
async fn inline_images_and_output_selection() {
    let s = state();
    let f: Vec<f64> = (0..32 * 32).map(|v| (v % 32) as f64 / 31.0).collect();
    let m: Vec<f64> = (0..32 * 32).map(|v| ((v + 1) % 32) as f64 / 31.0).collect();
    let req = json!({
        "fixed": {"shape": [32, 32], "values": f},
        "moving": {"shape": [32, 32], "values": m},
        "lambda": 0.5,
        "outputs": ["metrics"]
    });
    let (status, body) = call(&s, post(req)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(body["dsc"].is_null());
    assert!(body["warped"].is_null());
    assert!(body["std_jac"].as_f64().unwrap() >= 0.0);
}

#[tokio::test]
async fn sweep_endpoint_returns_one_row_per_lambda() {
    let s = state();
    let (status, body) = call(&s, get("/v1/sweep?pair=pair_000100&lambdas=0.1,0.5,1,2,4,8,10")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["rows"].as_array().unwrap().len(), 7);
    let (status, _) = call(&s, get("/v1/sweep?pair=pair_000100&lambdas=0.1,12")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn concurrent_requests_match_sequential_results() {
    let s = state();
    let ids = ["pair_000100", "pair_000101", "pair_000102"];
    let mut sequential = Vec::new();
    for id in ids {
        let (_, body) = call(&s, post(json!({"pair_id": id, "lambda": 2.0, "outputs": ["metrics"]}))).await;
        sequential.push(body["std_jac"].clone());
    }
    let handles: Vec<_> = ids
        .iter()
        .map(|id| {
            let s = s.clone();
            let req = post(json!({"pair_id": id, "lambda": 2.0, "outputs": ["metrics"]}));
            tokio::spawn(async move { call(&s, req).await.1["std_jac"].clone() })
        })
        .collect();
    for (h, want) in handles.into_iter().zip(sequential) {
        assert_eq!(h.await.unwrap(), want);
    }
}
