//! HTTP service over the localization library.
//!
//! Experiments are CPU-bound batch jobs and run on the blocking pool;
//! sessions hold a live particle filter behind a mutex keyed by UUID, so
//! a robot (or a test) can stream velocity/query steps and read estimates.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use thiserror::Error;
use uuid::Uuid;

use cvloc_api::{
    DataSpec, DatabaseSpec, ErrorBody, ExperimentRequest, KmlCheckRequest, KmlCheckResponse,
    SessionCreateRequest, SessionInfo, SessionInit, SessionStepRequest, SessionStepResponse,
    SweepRequest, TableCheckRequest, TableCheckResponse, TableKind,
};
use cvloc_core::db::AerialDatabase;
use cvloc_core::descriptor::Descriptor;
use cvloc_core::experiment::{
    compare_strategies, run_experiment, sweep, DataSource, ExperimentError, ExperimentReport,
    ExperimentSpec, StrategyComparison, SweepReport,
};
use cvloc_core::filter::{FilterError, Localizer};
use cvloc_core::ingest::{
    load_dataset, parse_descriptor_table, parse_kml_coordinates, parse_query_table, IngestError,
};
use cvloc_core::sim::{generate_world, SimError};

#[derive(Debug, Error)]
enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

// Domain failures all stem from the request contents here, so they map to
// 400 with the library's message passed through.
impl From<ExperimentError> for ApiError {
    fn from(e: ExperimentError) -> Self {
        ApiError::BadRequest(e.to_string())
    }
}

impl From<FilterError> for ApiError {
    fn from(e: FilterError) -> Self {
        ApiError::BadRequest(e.to_string())
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        ApiError::BadRequest(e.to_string())
    }
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        ApiError::BadRequest(e.to_string())
    }
}

struct Session {
    localizer: Localizer,
    steps: u64,
}

impl Session {
    fn info(&self, id: Uuid) -> SessionInfo {
        SessionInfo {
            id,
            estimate: self.localizer.estimate(),
            steps: self.steps,
            num_particles: self.localizer.particles().len(),
            degenerate_updates: self.localizer.particles().degenerate_updates(),
        }
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<Mutex<HashMap<Uuid, Session>>>,
}

pub fn router() -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/experiments/run", post(experiments_run))
        .route("/experiments/compare", post(experiments_compare))
        .route("/experiments/sweep", post(experiments_sweep))
        .route("/ingest/kml", post(ingest_kml))
        .route("/ingest/table", post(ingest_table))
        .route("/sessions", post(sessions_create))
        .route("/sessions/{id}", get(sessions_get).delete(sessions_delete))
        .route("/sessions/{id}/step", post(sessions_step))
        .with_state(AppState::default())
}

/// Serves until the listener fails; callers own binding and shutdown.
pub async fn serve(listener: tokio::net::TcpListener) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router()).await
}

/// Binds 127.0.0.1 on an ephemeral port and serves in a background task.
/// Used by the CLI's standalone mode and by integration tests.
pub async fn spawn_ephemeral() -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router()).await {
            tracing::error!("server exited: {e}");
        }
    });
    Ok((addr, handle))
}

async fn health() -> &'static str {
    "ok"
}

fn to_spec(req: ExperimentRequest) -> Result<ExperimentSpec, ApiError> {
    let data = match req.data {
        DataSpec::Synthetic { world, trajectory } => DataSource::Synthetic { world, trajectory },
        DataSpec::Dataset { manifest, base_dir } => {
            DataSource::Dataset(load_dataset(&manifest, &base_dir)?)
        }
    };
    Ok(ExperimentSpec {
        data,
        filter: req.filter,
        runs: req.runs,
        init_mode: req.init_mode,
        velocity_noise_sigma: req.velocity_noise_sigma,
    })
}

async fn blocking<T: Send + 'static>(
    job: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(job)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

async fn experiments_run(
    Json(req): Json<ExperimentRequest>,
) -> Result<Json<ExperimentReport>, ApiError> {
    Ok(Json(blocking(move || Ok(run_experiment(&to_spec(req)?)?)).await?))
}

async fn experiments_compare(
    Json(req): Json<ExperimentRequest>,
) -> Result<Json<StrategyComparison>, ApiError> {
    Ok(Json(blocking(move || Ok(compare_strategies(&to_spec(req)?)?)).await?))
}

async fn experiments_sweep(Json(req): Json<SweepRequest>) -> Result<Json<SweepReport>, ApiError> {
    Ok(Json(
        blocking(move || Ok(sweep(&to_spec(req.experiment)?, &req.parameter, &req.values)?))
            .await?,
    ))
}

async fn ingest_kml(Json(req): Json<KmlCheckRequest>) -> Result<Json<KmlCheckResponse>, ApiError> {
    let coords = parse_kml_coordinates(&req.text)?;
    Ok(Json(KmlCheckResponse {
        count: coords.len(),
        first: coords[0],
        last: *coords.last().expect("parser rejects empty coordinate sets"),
    }))
}

async fn ingest_table(
    Json(req): Json<TableCheckRequest>,
) -> Result<Json<TableCheckResponse>, ApiError> {
    let frame = match req.frame_origin {
        Some(origin) => {
            Some(cvloc_core::geo::LocalFrame::new(origin).map_err(|e| {
                ApiError::BadRequest(format!("invalid frame origin: {e}"))
            })?)
        }
        None => None,
    };
    let table = match req.kind {
        TableKind::Aerial => parse_descriptor_table(&req.text, frame.as_ref())?,
        TableKind::Query => parse_query_table(&req.text, frame.as_ref())?,
    };
    Ok(Json(TableCheckResponse {
        rows: table.len(),
        dimension: table.descriptors.dimension(),
        geodetic: table.geodetic,
    }))
}

fn build_database(spec: DatabaseSpec) -> Result<AerialDatabase, ApiError> {
    match spec {
        DatabaseSpec::Synthetic { world } => Ok(generate_world(&world)?),
        DatabaseSpec::Dataset { manifest, base_dir } => {
            Ok(load_dataset(&manifest, &base_dir)?.db)
        }
    }
}

async fn sessions_create(
    State(state): State<AppState>,
    Json(req): Json<SessionCreateRequest>,
) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let localizer = blocking(move || {
        let db = Arc::new(build_database(req.database)?);
        let localizer = match req.init {
            SessionInit::KnownStart { position } => {
                Localizer::from_known_start(db, req.filter, position)?
            }
            SessionInit::FirstQuery { descriptor } => {
                let q = Descriptor::new(descriptor)
                    .map_err(|e| ApiError::BadRequest(e.to_string()))?;
                Localizer::from_first_query(db, req.filter, &q)?
            }
        };
        Ok(localizer)
    })
    .await?;

    let id = Uuid::new_v4();
    let session = Session { localizer, steps: 0 };
    let info = session.info(id);
    state.sessions.lock().expect("session lock").insert(id, session);
    Ok((StatusCode::CREATED, Json(info)))
}

fn session_not_found(id: Uuid) -> ApiError {
    ApiError::NotFound(format!("no session {id}"))
}

async fn sessions_get(
    State(state): State<AppState>,
    Path(id): Path<Uuid>,
) -> Result<Json<SessionInfo>, ApiError> {
    let sessions = state.sessions.lock().expect("session lock");
    let session = sessions.get(&id).ok_or_else(|| session_not_found(id))?;
    Ok(Json(session.info(id)))
}

async fn sessions_delete(
    State(state): State<AppState>,
    Path(id): Path<Uuid>,
) -> Result<StatusCode, ApiError> {
    let mut sessions = state.sessions.lock().expect("session lock");
    sessions.remove(&id).ok_or_else(|| session_not_found(id))?;
    Ok(StatusCode::NO_CONTENT)
}

async fn sessions_step(
    State(state): State<AppState>,
    Path(id): Path<Uuid>,
    Json(req): Json<SessionStepRequest>,
) -> Result<Json<SessionStepResponse>, ApiError> {
    let query = Descriptor::new(req.query).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    // One filter step is sub-millisecond work, so it runs inline under the
    // lock rather than bouncing through the blocking pool.
    let mut sessions = state.sessions.lock().expect("session lock");
    let session = sessions.get_mut(&id).ok_or_else(|| session_not_found(id))?;
    let estimate = session.localizer.step_query(req.velocity, req.dt, &query)?;
    session.steps += 1;
    Ok(Json(SessionStepResponse { estimate, steps: session.steps }))
}
