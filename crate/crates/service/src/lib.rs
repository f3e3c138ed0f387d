//! HTTP inference service over one loaded, read-only registration model.
//!
//! Endpoints (JSON, versioned under `/v1/`):
//!
//! * `GET  /v1/health`
//! * `GET  /v1/pairs`
//! * `POST /v1/register`
//! * `GET  /v1/sweep?pair=<id>&lambdas=0.1,1,4`

pub mod api;
pub mod render;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;
use tokio::sync::Semaphore;

use condreg::condnet::{load_checkpoint, RegistrationModel};
use condreg::datagen::{Dataset, PairRecord, Split};

/// Default cap on concurrently running inferences.
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot load model: {0}")]
    Model(#[source] condreg::Error),

    #[error("cannot load dataset: {0}")]
    Dataset(#[source] condreg::Error),

    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },

    #[error("server error: {0}")]
    Serve(#[source] std::io::Error),
}

/// A pair the service can register by id.
#[derive(Clone, Debug)]
pub struct StoredPair {
    pub record: PairRecord,
    pub split: Option<Split>,
}

/// Shared, immutable service state.
#[derive(Clone)]
pub struct AppState {
    pub(crate) model: Arc<RegistrationModel>,
    pub(crate) model_id: Arc<str>,
    pub(crate) pairs: Arc<BTreeMap<String, StoredPair>>,
    pub(crate) permits: Arc<Semaphore>,
}

impl AppState {
    pub fn new(model: RegistrationModel, model_id: impl Into<String>, pairs: Vec<StoredPair>) -> Self {
        let pairs = pairs.into_iter().map(|p| (p.record.id.clone(), p)).collect();
        AppState {
            model: Arc::new(model),
            model_id: model_id.into().into(),
            pairs: Arc::new(pairs),
            permits: Arc::new(Semaphore::new(DEFAULT_MAX_IN_FLIGHT)),
        }
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.permits = Arc::new(Semaphore::new(n.max(1)));
        self
    }

    /// Loads the checkpoint and every pair listed in the dataset manifest.
    /// A bad checkpoint or manifest refuses startup.
    pub fn from_paths(model_path: &Path, data_dir: &Path) -> Result<Self, ServiceError> {
        let model = load_checkpoint(model_path).map_err(ServiceError::Model)?;
        let ds = Dataset::open(data_dir).map_err(ServiceError::Dataset)?;
        let pairs = ds
            .manifest()
            .pairs
            .iter()
            .map(|e| {
                ds.load(&e.id).map(|record| StoredPair {
                    record,
                    split: Some(e.split),
                })
            })
            .collect::<condreg::Result<Vec<_>>>()
            .map_err(ServiceError::Dataset)?;
        let id = model_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        Ok(AppState::new(model, id, pairs))
    }

    pub fn model(&self) -> &RegistrationModel {
        &self.model
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(api::health))
        .route("/v1/pairs", get(api::pairs))
        .route("/v1/register", post(api::register))
        .route("/v1/sweep", get(api::sweep))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(state: AppState, addr: SocketAddr) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })?;
    log::info!("listening on http://{}", listener.local_addr().map_err(ServiceError::Serve)?);
    axum::serve(listener, router(state)).await.map_err(ServiceError::Serve)
}

/// Blocking entry point used by the command-line tool.
pub fn run(model_path: &Path, data_dir: &Path, port: u16) -> Result<(), ServiceError> {
    let state = AppState::from_paths(model_path, data_dir)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(ServiceError::Serve)?;
    rt.block_on(serve(state, SocketAddr::from(([127, 0, 0, 1], port))))
}
