//! Config-file syntax and flag merging.
//!
//! The file is TOML with optional sections; every field is optional and
//! falls back to the library defaults. Flags override the file. The
//! resolved configuration is printed before each run so any result can be
//! reproduced from its log line alone.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cvloc_api::{DataSpec, ExperimentRequest};
use cvloc_core::experiment::{InitMode, TrajectorySpec};
use cvloc_core::filter::{FilterConfig, Strategy};
use cvloc_core::geo::Position2;
use cvloc_core::ingest::DatasetManifest;
use cvloc_core::sim::WorldConfig;

/// Particle-count preset for real datasets.
const DATASET_NUM_PARTICLES: usize = 1000;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    world: Option<WorldSection>,
    trajectory: Option<TrajectorySection>,
    dataset: Option<DatasetSection>,
    filter: Option<FilterSection>,
    experiment: Option<ExperimentSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldSection {
    area_size: Option<f64>,
    grid_spacing: Option<f64>,
    descriptor_dim: Option<usize>,
    descriptor_noise_sigma: Option<f64>,
    alias_groups: Option<usize>,
    pairing_noise_sigma: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectorySection {
    waypoints: Option<Vec<[f64; 2]>>,
    speed: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    /// Path to a dataset manifest (TOML), relative to the config file.
    manifest: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilterSection {
    num_particles: Option<usize>,
    init_sigma: Option<f64>,
    motion_noise_sigma: Option<f64>,
    measurement_variance: Option<[f64; 2]>,
    strategy: Option<Strategy>,
    top_k: Option<usize>,
    bandwidth: Option<f64>,
    epsilon: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    runs: Option<usize>,
    init: Option<InitMode>,
    velocity_noise_sigma: Option<f64>,
}

/// Flag-level overrides shared by run/compare/sweep.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub strategy: Option<Strategy>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub init: Option<InitMode>,
}

/// What actually gets executed, echoed back to the user as TOML.
#[derive(Debug, Serialize)]
pub struct Resolved {
    pub source: ResolvedSource,
    pub filter: FilterConfig,
    pub runs: usize,
    pub init_mode: InitMode,
    pub velocity_noise_sigma: f64,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolvedSource {
    Synthetic { world: WorldConfig, trajectory: TrajectorySpec },
    Dataset { manifest: PathBuf },
}

pub fn load_file(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Merges defaults, config file, and flags into a request plus its
/// printable form.
pub fn resolve(
    file: &FileConfig,
    config_path: Option<&Path>,
    overrides: &Overrides,
) -> Result<(ExperimentRequest, Resolved)> {
    if file.world.is_some() && file.dataset.is_some() {
        bail!("config sets both [world] and [dataset]; pick one data source");
    }

    let mut filter = FilterConfig::default();
    if let Some(f) = &file.filter {
        if let Some(v) = f.num_particles {
            filter.num_particles = v;
        }
        if let Some(v) = f.init_sigma {
            filter.init_sigma = v;
        }
        if let Some(v) = f.motion_noise_sigma {
            filter.motion_noise_sigma = v;
        }
        if let Some(v) = f.measurement_variance {
            filter.measurement_variance = v;
        }
        if let Some(v) = f.strategy {
            filter.strategy = v;
        }
        if let Some(v) = f.top_k {
            filter.top_k = v;
        }
        if let Some(v) = f.bandwidth {
            filter.bandwidth = v;
        }
        if let Some(v) = f.epsilon {
            filter.epsilon = v;
        }
        if let Some(v) = f.seed {
            filter.seed = v;
        }
    }
    if file.dataset.is_some() && file.filter.as_ref().is_none_or(|f| f.num_particles.is_none()) {
        filter.num_particles = DATASET_NUM_PARTICLES;
    }
    if let Some(v) = overrides.strategy {
        filter.strategy = v;
    }
    if let Some(v) = overrides.seed {
        filter.seed = v;
    }

    let exp = file.experiment.as_ref();
    let runs = overrides.runs.or(exp.and_then(|e| e.runs)).unwrap_or(5);
    let init_mode = overrides.init.or(exp.and_then(|e| e.init)).unwrap_or_default();
    let velocity_noise_sigma = exp.and_then(|e| e.velocity_noise_sigma).unwrap_or(1.0);

    let (data, source) = if let Some(dataset) = &file.dataset {
        // Manifest paths are relative to the config file's directory.
        let base = config_path.and_then(Path::parent).unwrap_or(Path::new("."));
        let manifest_path = if dataset.manifest.is_absolute() {
            dataset.manifest.clone()
        } else {
            base.join(&dataset.manifest)
        };
        let text = std::fs::read_to_string(&manifest_path)
            .with_context(|| format!("reading dataset manifest {}", manifest_path.display()))?;
        let manifest: DatasetManifest = toml::from_str(&text)
            .with_context(|| format!("parsing dataset manifest {}", manifest_path.display()))?;
        let base_dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        (
            DataSpec::Dataset { manifest, base_dir },
            ResolvedSource::Dataset { manifest: manifest_path },
        )
    } else {
        let mut world = WorldConfig::default();
        if let Some(w) = &file.world {
            if let Some(v) = w.area_size {
                world.area_size = v;
            }
            if let Some(v) = w.grid_spacing {
                world.grid_spacing = v;
            }
            if let Some(v) = w.descriptor_dim {
                world.descriptor_dim = v;
            }
            if let Some(v) = w.descriptor_noise_sigma {
                world.descriptor_noise_sigma = v;
            }
            if let Some(v) = w.alias_groups {
                world.alias_groups = v;
            }
            if let Some(v) = w.pairing_noise_sigma {
                world.pairing_noise_sigma = v;
            }
            if let Some(v) = w.seed {
                world.seed = v;
            }
        }
        let mut trajectory = TrajectorySpec::default();
        if let Some(t) = &file.trajectory {
            if let Some(w) = &t.waypoints {
                trajectory.waypoints = w.iter().map(|&[x, y]| Position2::new(x, y)).collect();
            }
            if let Some(v) = t.speed {
                trajectory.speed = v;
            }
        }
        (
            DataSpec::Synthetic { world: world.clone(), trajectory: trajectory.clone() },
            ResolvedSource::Synthetic { world, trajectory },
        )
    };

    let request = ExperimentRequest {
        data,
        filter: filter.clone(),
        runs,
        init_mode,
        velocity_noise_sigma,
    };
    let resolved = Resolved { source, filter, runs, init_mode, velocity_noise_sigma };
    Ok((request, resolved))
}
