//! Synthetic descriptor world: a square grid of aerial cells with
//! Gaussian descriptors, ground runs along waypoint polylines, and the
//! dead-reckoning baseline.
//!
//! Retrieval quality is controlled by two dials — `descriptor_noise_sigma`
//! (noise added to ground queries) and `alias_groups` (cells forced to
//! share a descriptor, i.e. perceptual aliasing) — so experiments can
//! emulate the retrieval-accuracy regimes that camera altitude, field of
//! view, and pitch produce in the real pipeline.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::{AerialDatabase, GeoDescriptor};
use crate::descriptor::Descriptor;
use crate::geo::{Position2, TimedPose, Velocity2};

/// Poses are emitted at 1 Hz; one pose, one query, one filter step.
pub const POSE_RATE_HZ: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("alias_groups = {groups} needs {} cells, world has {cells}", .groups * 2)]
    TooManyAliasGroups { groups: usize, cells: usize },
    #[error("waypoint {index} at ({x}, {y}) is outside the {side} m world")]
    WaypointOutsideWorld { index: usize, x: f64, y: f64, side: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Side length of the square world, meters.
    pub area_size: f64,
    /// Distance between aerial sample centers, meters.
    pub grid_spacing: f64,
    pub descriptor_dim: usize,
    /// Std of per-component Gaussian noise added to ground query
    /// descriptors. The main retrieval-quality dial.
    pub descriptor_noise_sigma: f64,
    /// Number of cell pairs forced to share one descriptor (perceptual
    /// aliasing).
    pub alias_groups: usize,
    /// Std (meters) of the positional offset between a ground pose and the
    /// aerial geotag it is paired with.
    pub pairing_noise_sigma: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            area_size: 1000.0,
            grid_spacing: 20.0,
            descriptor_dim: 8,
            descriptor_noise_sigma: 0.6,
            alias_groups: 0,
            pairing_noise_sigma: 4.58,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if !(self.grid_spacing > 0.0 && self.grid_spacing.is_finite()) {
            return bad(format!("grid_spacing must be positive, got {}", self.grid_spacing));
        }
        if !(self.area_size > self.grid_spacing && self.area_size.is_finite()) {
            return bad(format!(
                "area_size ({}) must exceed grid_spacing ({})",
                self.area_size, self.grid_spacing
            ));
        }
        if self.descriptor_dim < 2 {
            return bad(format!("descriptor_dim must be at least 2, got {}", self.descriptor_dim));
        }
        for (name, v) in [
            ("descriptor_noise_sigma", self.descriptor_noise_sigma),
            ("pairing_noise_sigma", self.pairing_noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }

    /// Cells per side of the grid.
    pub fn cells_per_side(&self) -> usize {
        (self.area_size / self.grid_spacing).floor() as usize
    }
}

/// One simulated traversal: ground-truth poses, the noisy velocities a
/// robot would integrate, one query descriptor per pose, and the id of the
/// aerial entry each query was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundRun {
    pub truth: Vec<TimedPose>,
    /// Per-step velocities; `velocities[0]` is a (0, 0) placeholder so all
    /// four lists share one index (step j consumes `velocities[j]`).
    pub velocities: Vec<Velocity2>,
    pub queries: Vec<Descriptor>,
    /// Aerial entry each query descriptor was derived from — the retrieval
    /// ground truth.
    pub paired_ids: Vec<u64>,
}

impl GroundRun {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    /// (query, true id) pairs for recall evaluation.
    pub fn query_pairs(&self) -> Vec<(Descriptor, u64)> {
        self.queries.iter().cloned().zip(self.paired_ids.iter().copied()).collect()
    }
}

/// Builds the aerial database for a world: one entry per grid cell, row-major
/// ids, cell-center geotags, i.i.d. standard-normal descriptors. Cells drawn
/// into an alias group share the group's descriptor verbatim.
pub fn generate_world(cfg: &WorldConfig) -> Result<AerialDatabase, SimError> {
    cfg.validate()?;
    let n = cfg.cells_per_side();
    let cells = n * n;
    if cfg.alias_groups * 2 > cells {
        return Err(SimError::TooManyAliasGroups { groups: cfg.alias_groups, cells });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries: Vec<GeoDescriptor> = (0..cells)
        .map(|i| {
            let (ix, iy) = (i % n, i / n);
            let values: Vec<f64> =
                (0..cfg.descriptor_dim).map(|_| rng.sample(StandardNormal)).collect();
            GeoDescriptor {
                id: i as u64,
                position: Position2::new(
                    (ix as f64 + 0.5) * cfg.grid_spacing,
                    (iy as f64 + 0.5) * cfg.grid_spacing,
                ),
                descriptor: Descriptor::new(values).expect("standard normals are finite"),
            }
        })
        .collect();

    if cfg.alias_groups > 0 {
        let chosen = rand::seq::index::sample(&mut rng, cells, cfg.alias_groups * 2);
        for g in 0..cfg.alias_groups {
            let keep = chosen.index(2 * g);
            let copy = chosen.index(2 * g + 1);
            entries[copy].descriptor = entries[keep].descriptor.clone();
        }
    }

    Ok(AerialDatabase::new(entries).expect("grid entries are unique and uniform"))
}

/// Simulates one traversal of the world.
///
/// The truth trajectory interpolates the waypoint polyline at constant
/// speed, one pose per second. Each pose's query descriptor is the
/// descriptor of the aerial entry nearest (pose + pairing offset), plus
/// per-component Gaussian noise. Velocities are truth differences plus
/// per-axis Gaussian noise. All randomness comes from the world seed on a
/// separate stream, so a world and its runs are jointly reproducible.
pub fn generate_ground_run(
    cfg: &WorldConfig,
    db: &AerialDatabase,
    waypoints: &[Position2],
    speed: f64,
    velocity_noise_sigma: f64,
) -> Result<GroundRun, SimError> {
    cfg.validate()?;
    if waypoints.is_empty() {
        return Err(SimError::InvalidConfig("at least one waypoint required".into()));
    }
    for (index, w) in waypoints.iter().enumerate() {
        let inside =
            (0.0..=cfg.area_size).contains(&w.x) && (0.0..=cfg.area_size).contains(&w.y);
        if !inside {
            return Err(SimError::WaypointOutsideWorld {
                index,
                x: w.x,
                y: w.y,
                side: cfg.area_size,
            });
        }
    }
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(SimError::InvalidConfig(format!("speed must be positive, got {speed}")));
    }
    if !(velocity_noise_sigma.is_finite() && velocity_noise_sigma >= 0.0) {
        return Err(SimError::InvalidConfig(format!(
            "velocity_noise_sigma must be finite and >= 0, got {velocity_noise_sigma}"
        )));
    }

    let dt = 1.0 / POSE_RATE_HZ;
    let total: f64 = waypoints.windows(2).map(|w| w[0].distance(&w[1])).sum();
    let steps = (total / (speed * dt)).floor() as usize;
    let truth: Vec<TimedPose> = (0..=steps)
        .map(|j| {
            let t = j as f64 * dt;
            TimedPose { t, position: point_at_arc(waypoints, t * speed) }
        })
        .collect();

    // Run randomness lives on stream 1; world generation used stream 0.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut queries = Vec::with_capacity(truth.len());
    let mut paired_ids = Vec::with_capacity(truth.len());
    for pose in &truth {
        let ox: f64 = rng.sample(StandardNormal);
        let oy: f64 = rng.sample(StandardNormal);
        let paired = Position2::new(
            pose.position.x + cfg.pairing_noise_sigma * ox,
            pose.position.y + cfg.pairing_noise_sigma * oy,
        );
        let entry = db.nearest_by_position(paired);
        let values: Vec<f64> = entry
            .descriptor
            .values()
            .iter()
            .map(|v| v + cfg.descriptor_noise_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        queries.push(Descriptor::new(values).expect("noisy descriptor stays finite"));
        paired_ids.push(entry.id);
    }

    let mut velocities = Vec::with_capacity(truth.len());
    velocities.push(Velocity2::new(0.0, 0.0));
    for w in truth.windows(2) {
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        velocities.push(Velocity2::new(
            (w[1].position.x - w[0].position.x) / dt + velocity_noise_sigma * nx,
            (w[1].position.y - w[0].position.y) / dt + velocity_noise_sigma * ny,
        ));
    }

    Ok(GroundRun { truth, velocities, queries, paired_ids })
}

/// Position `arc` meters along the waypoint polyline (clamped to its ends).
fn point_at_arc(waypoints: &[Position2], arc: f64) -> Position2 {
    let mut remaining = arc.max(0.0);
    for w in waypoints.windows(2) {
        let seg = w[0].distance(&w[1]);
        if remaining <= seg && seg > 0.0 {
            let f = remaining / seg;
            return Position2::new(
                w[0].x + f * (w[1].x - w[0].x),
                w[0].y + f * (w[1].y - w[0].y),
            );
        }
        remaining -= seg;
    }
    *waypoints.last().expect("waypoints are non-empty")
}

/// Integrates velocities from `start`: element j is
/// start + sum(velocities[0..=j]) * dt, so it lines up index-for-index
/// with a [`GroundRun`]'s truth when given its padded velocity list.
pub fn dead_reckon(start: Position2, velocities: &[Velocity2], dt: f64) -> Vec<Position2> {
    assert!(dt > 0.0, "dt must be positive, got {dt}");
    let mut out = Vec::with_capacity(velocities.len());
    let mut pos = start;
    for v in velocities {
        pos = pos + v.displacement(dt);
        out.push(pos);
    }
    out
}
