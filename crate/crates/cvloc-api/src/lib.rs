//! Wire contract for the cvloc HTTP service, plus a thin typed client.
//!
//! Request bodies are defined here; response bodies reuse the core
//! library's serde-enabled report types directly, so a round trip through
//! the service reproduces a local run bit for bit (serde_json renders
//! floats with shortest-round-trip precision).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use cvloc_core::experiment::{InitMode, TrajectorySpec};
use cvloc_core::filter::FilterConfig;
use cvloc_core::geo::{GeoCoordinate, Position2, Velocity2};
use cvloc_core::ingest::DatasetManifest;
use cvloc_core::sim::WorldConfig;

pub mod client;

pub use client::{Client, ClientError};

/// Where an experiment's world and trajectory come from. Dataset paths are
/// resolved on the server's filesystem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSpec {
    Synthetic { world: WorldConfig, trajectory: TrajectorySpec },
    Dataset { manifest: DatasetManifest, base_dir: PathBuf },
}

fn default_runs() -> usize {
    5
}

fn default_velocity_noise() -> f64 {
    1.0
}

/// Body for the run and compare endpoints; also embedded in sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRequest {
    pub data: DataSpec,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub init_mode: InitMode,
    #[serde(default = "default_velocity_noise")]
    pub velocity_noise_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRequest {
    pub experiment: ExperimentRequest,
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KmlCheckRequest {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KmlCheckResponse {
    pub count: usize,
    pub first: GeoCoordinate,
    pub last: GeoCoordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    /// Aerial reference table: ids must be unique.
    Aerial,
    /// Ground query table: the id column repeats true aerial ids.
    Query,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableCheckRequest {
    pub text: String,
    pub kind: TableKind,
    /// Required when the table uses lat/lon columns.
    #[serde(default)]
    pub frame_origin: Option<GeoCoordinate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableCheckResponse {
    pub rows: usize,
    pub dimension: usize,
    pub geodetic: bool,
}

/// The aerial database a filter session localizes against.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatabaseSpec {
    Synthetic { world: WorldConfig },
    Dataset { manifest: DatasetManifest, base_dir: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SessionInit {
    /// Gaussian cloud around a known position (spread cfg.init_sigma).
    KnownStart { position: Position2 },
    /// Cloud centered on the first query's retrieval estimate.
    FirstQuery { descriptor: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreateRequest {
    pub database: DatabaseSpec,
    #[serde(default)]
    pub filter: FilterConfig,
    pub init: SessionInit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: Uuid,
    pub estimate: Position2,
    pub steps: u64,
    pub num_particles: usize,
    pub degenerate_updates: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionStepRequest {
    pub velocity: Velocity2,
    pub dt: f64,
    pub query: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionStepResponse {
    pub estimate: Position2,
    pub steps: u64,
}

/// Error body every non-2xx response carries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
