//! Experiment protocols: repeated filter runs over a shared scenario,
//! strategy comparisons, and parameter sweeps.
//!
//! A scenario (world, trajectory, queries, velocities) is materialized
//! once per experiment and held fixed; only the filter is re-seeded across
//! the R runs (base seed + run index). That makes paired comparisons exact:
//! two strategies or two init modes see byte-identical inputs.

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::{AerialDatabase, DbError};
use crate::descriptor::Descriptor;
use crate::filter::{FilterConfig, FilterError, Localizer, Strategy};
use crate::geo::{position_error, Position2, TimedPose, Velocity2};
use crate::ingest::DatasetContent;
use crate::retrieval::{recall_at_k, recall_curve, RecallCurve, RetrievalError};
use crate::sim::{dead_reckon, generate_ground_run, generate_world, SimError, WorldConfig};

/// Depth fractions tabulated in every report's recall curve.
pub const REPORT_RECALL_FRACTIONS: [f64; 6] = [0.01, 0.05, 0.10, 0.25, 0.50, 1.00];

/// Parameters accepted by [`sweep`].
pub const SWEEP_KNOBS: [&str; 6] =
    ["descriptor_noise_sigma", "alias_groups", "top_k", "bandwidth", "M", "velocity_noise_sigma"];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("unknown sweep parameter {name:?}; valid knobs: {}", SWEEP_KNOBS.join(", "))]
    UnknownKnob { name: String },
    #[error("sweep parameter {name:?} needs a non-negative integer, got {value}")]
    NonIntegerKnobValue { name: String, value: f64 },
    #[error("sweep parameter {name:?} only applies to synthetic worlds")]
    KnobRequiresSynthetic { name: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Db(#[from] DbError),
}

/// Waypoint path and travel speed for synthetic runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub waypoints: Vec<Position2>,
    /// Meters per second along the polyline.
    pub speed: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        // 1600 m tour of the default 1 km^2 world: 800 steps at 2 m/s.
        Self {
            waypoints: vec![
                Position2::new(200.0, 200.0),
                Position2::new(800.0, 200.0),
                Position2::new(800.0, 800.0),
                Position2::new(400.0, 800.0),
            ],
            speed: 2.0,
        }
    }
}

/// Where an experiment's database, trajectory, and queries come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic { world: WorldConfig, trajectory: TrajectorySpec },
    Dataset(DatasetContent),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Gaussian cloud around the true start position.
    #[default]
    #[serde(rename = "known")]
    KnownStart,
    /// Cloud around the position recovered from the first query's
    /// retrievals.
    Retrieval,
}

impl FromStr for InitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "known" => Ok(InitMode::KnownStart),
            "retrieval" => Ok(InitMode::Retrieval),
            other => Err(format!("unknown init mode {other:?}, expected \"known\" or \"retrieval\"")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub data: DataSource,
    pub filter: FilterConfig,
    /// Independent filter runs to average over.
    pub runs: usize,
    pub init_mode: InitMode,
    /// Per-axis std of the noise corrupting the true velocities.
    pub velocity_noise_sigma: f64,
}

impl ExperimentSpec {
    pub fn synthetic(world: WorldConfig, trajectory: TrajectorySpec, filter: FilterConfig) -> Self {
        Self {
            data: DataSource::Synthetic { world, trajectory },
            filter,
            runs: 5,
            init_mode: InitMode::KnownStart,
            velocity_noise_sigma: 1.0,
        }
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        if self.runs == 0 {
            return Err(ExperimentError::InvalidSpec("runs must be at least 1".into()));
        }
        if !(self.velocity_noise_sigma.is_finite() && self.velocity_noise_sigma >= 0.0) {
            return Err(ExperimentError::InvalidSpec(format!(
                "velocity_noise_sigma must be finite and >= 0, got {}",
                self.velocity_noise_sigma
            )));
        }
        self.filter.validate()?;
        Ok(())
    }
}

/// Mean and population standard deviation of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl ErrorStats {
    pub fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0, count: 0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt(), count: values.len() }
    }
}

/// One filter pass over the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub err_est: ErrorStats,
    pub err_dr: ErrorStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub truth: Position2,
    pub dr: Position2,
    pub est: Position2,
    pub err_dr: f64,
    pub err_est: f64,
}

/// Everything an experiment produces: per-run traces, pooled error
/// statistics, and the retrieval quality of the query set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub strategy: Strategy,
    pub init_mode: InitMode,
    pub runs: Vec<RunReport>,
    /// Pooled over every step of every run.
    pub err_est: ErrorStats,
    pub err_dr: ErrorStats,
    pub recall: RecallCurve,
    pub recall_top1: f64,
}

/// Paired strategy comparison on identical scenarios and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyComparison {
    pub ppf: ExperimentReport,
    pub capf: ExperimentReport,
}

impl StrategyComparison {
    /// Ratio of error standard deviations, compare-all over
    /// prediction-based.
    pub fn std_ratio(&self) -> f64 {
        self.capf.err_est.std / self.ppf.err_est.std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub parameter: String,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub report: ExperimentReport,
}

/// The materialized inputs shared by every run of one experiment.
struct Scenario {
    db: Arc<AerialDatabase>,
    truth: Vec<TimedPose>,
    velocities: Vec<Velocity2>,
    queries: Vec<Descriptor>,
    true_ids: Vec<u64>,
}

impl Scenario {
    fn build(spec: &ExperimentSpec) -> Result<Self, ExperimentError> {
        match &spec.data {
            DataSource::Synthetic { world, trajectory } => {
                let db = generate_world(world)?;
                let run = generate_ground_run(
                    world,
                    &db,
                    &trajectory.waypoints,
                    trajectory.speed,
                    spec.velocity_noise_sigma,
                )?;
                Ok(Self {
                    db: Arc::new(db),
                    truth: run.truth,
                    velocities: run.velocities,
                    queries: run.queries,
                    true_ids: run.paired_ids,
                })
            }
            DataSource::Dataset(content) => {
                // Real datasets carry truth but no velocity stream; corrupt
                // the truth differences exactly like the simulator, seeding
                // from the filter's base seed on the simulator's stream.
                let velocities = content.corrupted_velocities(
                    spec.velocity_noise_sigma,
                    spec.filter.seed,
                );
                Ok(Self {
                    db: Arc::new(content.db.clone()),
                    truth: content.truth.clone(),
                    velocities,
                    queries: content.queries.clone(),
                    true_ids: content.true_ids.clone(),
                })
            }
        }
    }

    fn query_pairs(&self) -> Vec<(Descriptor, u64)> {
        self.queries.iter().cloned().zip(self.true_ids.iter().copied()).collect()
    }
}

/// Runs the configured filter R times over one fixed scenario and pools
/// the per-step errors. Run r uses filter seed `base + r`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport, ExperimentError> {
    spec.validate()?;
    let scenario = Scenario::build(spec)?;
    run_on_scenario(spec, &scenario)
}

fn run_on_scenario(
    spec: &ExperimentSpec,
    scenario: &Scenario,
) -> Result<ExperimentReport, ExperimentError> {
    let pairs = scenario.query_pairs();
    let recall = recall_curve(&scenario.db, &pairs, &REPORT_RECALL_FRACTIONS)?;
    let recall_top1 = recall_at_k(&scenario.db, &pairs, 1)?;

    let dr = dead_reckon(scenario.truth[0].position, &scenario.velocities, 1.0);
    let mut runs = Vec::with_capacity(spec.runs);
    for r in 0..spec.runs {
        let mut cfg = spec.filter.clone();
        cfg.seed = spec.filter.seed.wrapping_add(r as u64);
        let seed = cfg.seed;
        let mut localizer = match spec.init_mode {
            InitMode::KnownStart => Localizer::from_known_start(
                Arc::clone(&scenario.db),
                cfg,
                scenario.truth[0].position,
            )?,
            InitMode::Retrieval => Localizer::from_first_query(
                Arc::clone(&scenario.db),
                cfg,
                &scenario.queries[0],
            )?,
        };

        let mut steps = Vec::with_capacity(scenario.truth.len());
        let record = |step: usize, est: Position2| {
            let truth = scenario.truth[step].position;
            StepRecord {
                step,
                truth,
                dr: dr[step],
                est,
                err_dr: position_error(dr[step], truth),
                err_est: position_error(est, truth),
            }
        };
        steps.push(record(0, localizer.estimate()));
        for j in 1..scenario.truth.len() {
            let est = localizer.step_query(scenario.velocities[j], 1.0, &scenario.queries[j])?;
            steps.push(record(j, est));
        }

        let err_est = ErrorStats::from_values(&steps.iter().map(|s| s.err_est).collect::<Vec<_>>());
        let err_dr = ErrorStats::from_values(&steps.iter().map(|s| s.err_dr).collect::<Vec<_>>());
        runs.push(RunReport { seed, steps, err_est, err_dr });
    }

    let pooled_est: Vec<f64> =
        runs.iter().flat_map(|r| r.steps.iter().map(|s| s.err_est)).collect();
    let pooled_dr: Vec<f64> =
        runs.iter().flat_map(|r| r.steps.iter().map(|s| s.err_dr)).collect();
    Ok(ExperimentReport {
        strategy: spec.filter.strategy,
        init_mode: spec.init_mode,
        err_est: ErrorStats::from_values(&pooled_est),
        err_dr: ErrorStats::from_values(&pooled_dr),
        runs,
        recall,
        recall_top1,
    })
}

/// Runs both strategies over the identical scenario and seeds.
pub fn compare_strategies(spec: &ExperimentSpec) -> Result<StrategyComparison, ExperimentError> {
    spec.validate()?;
    let scenario = Scenario::build(spec)?;
    let with_strategy = |strategy: Strategy| {
        let mut s = spec.clone();
        s.filter.strategy = strategy;
        run_on_scenario(&s, &scenario)
    };
    Ok(StrategyComparison { ppf: with_strategy(Strategy::Ppf)?, capf: with_strategy(Strategy::Capf)? })
}

/// Reruns the experiment once per value of the named parameter, sharing
/// the base seed so rows differ only through the knob.
pub fn sweep(
    spec: &ExperimentSpec,
    parameter: &str,
    values: &[f64],
) -> Result<SweepReport, ExperimentError> {
    if values.is_empty() {
        return Err(ExperimentError::InvalidSpec("sweep needs at least one value".into()));
    }
    if !SWEEP_KNOBS.contains(&parameter) {
        return Err(ExperimentError::UnknownKnob { name: parameter.to_string() });
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut s = spec.clone();
        apply_knob(&mut s, parameter, value)?;
        rows.push(SweepRow { value, report: run_experiment(&s)? });
    }
    Ok(SweepReport { parameter: parameter.to_string(), rows })
}

fn apply_knob(spec: &mut ExperimentSpec, name: &str, value: f64) -> Result<(), ExperimentError> {
    let as_count = |value: f64| {
        if value < 0.0 || value.fract() != 0.0 || !value.is_finite() {
            Err(ExperimentError::NonIntegerKnobValue { name: name.to_string(), value })
        } else {
            Ok(value as usize)
        }
    };
    match name {
        "descriptor_noise_sigma" | "alias_groups" => {
            let DataSource::Synthetic { world, .. } = &mut spec.data else {
                return Err(ExperimentError::KnobRequiresSynthetic { name: name.to_string() });
            };
            match name {
                "descriptor_noise_sigma" => world.descriptor_noise_sigma = value,
                _ => world.alias_groups = as_count(value)?,
            }
        }
        "top_k" => spec.filter.top_k = as_count(value)?,
        "bandwidth" => spec.filter.bandwidth = value,
        "M" => spec.filter.num_particles = as_count(value)?,
        "velocity_noise_sigma" => spec.velocity_noise_sigma = value,
        other => return Err(ExperimentError::UnknownKnob { name: other.to_string() }),
    }
    Ok(())
}
