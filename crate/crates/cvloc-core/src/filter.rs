//! The particle filter: initialization, motion prediction, the two
//! weighting strategies, stochastic universal resampling, and estimation.
//!
//! A filter run owns all of its randomness through one seeded generator,
//! so any sequence of operations is reproducible bit-for-bit from the
//! config. Resampling happens on every step, which makes weight
//! replacement (rather than multiplication by the prior weight)
//! equivalent and is what [`ParticleSet::step`] implements.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::{AerialDatabase, DbError};
use crate::descriptor::{Descriptor, DescriptorError};
use crate::geo::{Position2, Velocity2};
use crate::retrieval::{measurement_from_retrievals, Measurement};

/// Retrieval depth used when initializing from a first query.
pub const RETRIEVAL_INIT_TOP_K: usize = 20;
/// Particle spread (std, meters) used when initializing from a first query;
/// wider than a known start to absorb retrieval error.
pub const RETRIEVAL_INIT_SIGMA_M: f64 = 9.0;

/// Weight sums below this are treated as total weight collapse.
const WEIGHT_UNDERFLOW: f64 = 1e-300;
/// How far from 1.0 a weight sum may be and still count as normalized.
const NORMALIZED_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error("retrieval-based init needs {needed} database entries, found {got}")]
    DatabaseTooSmall { needed: usize, got: usize },
    #[error("particle weights are not normalized (sum = {0})")]
    NotNormalized(f64),
    #[error("resampling offset {offset} outside [0, {limit})")]
    InvalidOffset { offset: f64, limit: f64 },
    #[error("{strategy} weighting expects a {expected} observation")]
    ObservationMismatch { strategy: Strategy, expected: &'static str },
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

/// Which fusion strategy weighs the particles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Prediction-based: cluster top-k retrieval geotags into a position
    /// measurement, weigh with a Gaussian likelihood.
    Ppf,
    /// Compare-all: weigh each particle by inverse descriptor distance to
    /// the aerial entry nearest that particle.
    Capf,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Ppf => "ppf",
            Strategy::Capf => "capf",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ppf" => Ok(Strategy::Ppf),
            "capf" => Ok(Strategy::Capf),
            other => Err(format!("unknown strategy {other:?}, expected \"ppf\" or \"capf\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub num_particles: usize,
    /// Particle spread (std, meters) around a known start position.
    pub init_sigma: f64,
    /// Per-axis, per-step motion noise std in meters.
    pub motion_noise_sigma: f64,
    /// Diagonal of the measurement covariance, meters² per axis.
    pub measurement_variance: [f64; 2],
    pub strategy: Strategy,
    /// Retrieval depth for measurement formation (prediction-based path).
    pub top_k: usize,
    /// Mean-shift bandwidth in meters for measurement formation.
    pub bandwidth: f64,
    /// Lower clamp on descriptor distance in the compare-all weight 1/d.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            num_particles: 200,
            init_sigma: 4.0,
            motion_noise_sigma: 1.0,
            measurement_variance: [3.0, 3.0],
            strategy: Strategy::Ppf,
            top_k: 20,
            bandwidth: 10.0,
            epsilon: 1e-6,
            seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let bad = |msg: String| Err(FilterError::InvalidConfig(msg));
        if self.num_particles == 0 {
            return bad("num_particles must be at least 1".into());
        }
        if !(self.init_sigma.is_finite() && self.init_sigma >= 0.0) {
            return bad(format!("init_sigma must be finite and >= 0, got {}", self.init_sigma));
        }
        if !(self.motion_noise_sigma.is_finite() && self.motion_noise_sigma >= 0.0) {
            return bad(format!(
                "motion_noise_sigma must be finite and >= 0, got {}",
                self.motion_noise_sigma
            ));
        }
        if self.measurement_variance.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad(format!(
                "measurement_variance must be positive, got {:?}",
                self.measurement_variance
            ));
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1".into());
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return bad(format!("bandwidth must be positive, got {}", self.bandwidth));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Position2,
    pub weight: f64,
}

/// What a filter step observes: a position measurement (prediction-based
/// strategy) or a raw query descriptor (compare-all strategy).
#[derive(Debug, Clone)]
pub enum Observation<'a> {
    Position(Measurement),
    Query(&'a Descriptor),
}

/// The particle population plus the run's random generator.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    particles: Vec<Particle>,
    rng: ChaCha8Rng,
    degenerate_updates: u32,
}

impl ParticleSet {
    /// Particles drawn from an isotropic Gaussian around `start` with std
    /// `cfg.init_sigma`, uniform weights.
    pub fn init_gaussian(cfg: &FilterConfig, start: Position2) -> Result<Self, FilterError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let particles = sample_around(&mut rng, start, cfg.init_sigma, cfg.num_particles);
        Ok(Self { particles, rng, degenerate_updates: 0 })
    }

    /// Particles drawn around a position recovered from the first query:
    /// the measurement formed from its top-20 retrievals, with the spread
    /// widened to 9 m.
    pub fn init_from_retrieval(
        cfg: &FilterConfig,
        db: &AerialDatabase,
        first_query: &Descriptor,
    ) -> Result<Self, FilterError> {
        cfg.validate()?;
        let center = retrieval_init_center(db, first_query, cfg.bandwidth)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let particles = sample_around(&mut rng, center, RETRIEVAL_INIT_SIGMA_M, cfg.num_particles);
        Ok(Self { particles, rng, degenerate_updates: 0 })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    /// How many weight updates have collapsed to the uniform fallback.
    pub fn degenerate_updates(&self) -> u32 {
        self.degenerate_updates
    }

    /// Moves every particle by `v * dt` plus per-axis Gaussian motion
    /// noise; weights are untouched.
    pub fn predict(&mut self, v: Velocity2, dt: f64, cfg: &FilterConfig) {
        assert!(dt > 0.0, "dt must be positive, got {dt}");
        let shift = v.displacement(dt);
        let sigma = cfg.motion_noise_sigma;
        for p in &mut self.particles {
            // Always draw, even at sigma = 0, so the random stream does not
            // depend on the noise setting.
            let nx: f64 = self.rng.sample(StandardNormal);
            let ny: f64 = self.rng.sample(StandardNormal);
            p.position.x += shift.x + sigma * nx;
            p.position.y += shift.y + sigma * ny;
        }
    }

    /// Gaussian measurement likelihood: weight_i = exp(-1/2 (z - p_i)^T
    /// diag(variance)^-1 (z - p_i)). Prior weights are replaced.
    pub fn weigh_ppf(&mut self, measurement: &Measurement, variance: [f64; 2]) {
        assert!(
            variance.iter().all(|v| *v > 0.0),
            "measurement variance must be positive, got {variance:?}"
        );
        let z = measurement.z;
        for p in &mut self.particles {
            let dx = z.x - p.position.x;
            let dy = z.y - p.position.y;
            p.weight = (-0.5 * (dx * dx / variance[0] + dy * dy / variance[1])).exp();
        }
    }

    /// Inverse descriptor distance: weight_i = 1 / max(d_i, epsilon) where
    /// d_i is the L2 distance from the query to the descriptor of the
    /// aerial entry nearest particle i. Prior weights are replaced.
    pub fn weigh_capf(
        &mut self,
        query: &Descriptor,
        db: &AerialDatabase,
        epsilon: f64,
    ) -> Result<(), FilterError> {
        assert!(epsilon > 0.0, "epsilon must be positive, got {epsilon}");
        for i in 0..self.particles.len() {
            let nearest = db.nearest_by_position(self.particles[i].position);
            let d = query.l2_distance(&nearest.descriptor)?;
            self.particles[i].weight = 1.0 / d.max(epsilon);
        }
        Ok(())
    }

    /// Scales weights to sum to 1. A sum below 1e-300 counts as a
    /// degenerate update: weights reset to uniform and the returned flag
    /// (and a counter) record the event.
    pub fn normalize(&mut self) -> bool {
        let sum: f64 = self.particles.iter().map(|p| p.weight).sum();
        if sum < WEIGHT_UNDERFLOW {
            let uniform = 1.0 / self.particles.len() as f64;
            for p in &mut self.particles {
                p.weight = uniform;
            }
            self.degenerate_updates += 1;
            return true;
        }
        for p in &mut self.particles {
            p.weight /= sum;
        }
        false
    }

    pub fn is_normalized(&self) -> bool {
        let sum: f64 = self.particles.iter().map(|p| p.weight).sum();
        (sum - 1.0).abs() <= NORMALIZED_TOL
    }

    /// Stochastic universal sampling with a freshly drawn offset.
    ///
    /// One uniform offset u in [0, 1/M) places M equally spaced pointers
    /// over the cumulative weights, so particle i receives either
    /// floor(M * w_i) or ceil(M * w_i) offspring. Weights reset to 1/M.
    pub fn resample_sus(&mut self) -> Result<(), FilterError> {
        let limit = 1.0 / self.particles.len() as f64;
        let offset = self.rng.random_range(0.0..limit);
        self.resample_sus_at(offset)
    }

    /// Stochastic universal sampling with an explicit pointer offset in
    /// [0, 1/M); [`resample_sus`](Self::resample_sus) draws the offset and
    /// delegates here. Exposed so callers can enumerate offsets.
    pub fn resample_sus_at(&mut self, offset: f64) -> Result<(), FilterError> {
        let m = self.particles.len();
        let limit = 1.0 / m as f64;
        if !(0.0..limit).contains(&offset) {
            return Err(FilterError::InvalidOffset { offset, limit });
        }
        let sum: f64 = self.particles.iter().map(|p| p.weight).sum();
        if (sum - 1.0).abs() > NORMALIZED_TOL {
            return Err(FilterError::NotNormalized(sum));
        }

        let uniform = limit;
        let mut offspring = Vec::with_capacity(m);
        let mut cumulative = self.particles[0].weight;
        let mut i = 0;
        for j in 0..m {
            let pointer = offset + j as f64 * uniform;
            // `>=` walks past zero-weight particles even when the pointer
            // lands exactly on their cumulative boundary.
            while pointer >= cumulative && i + 1 < m {
                i += 1;
                cumulative += self.particles[i].weight;
            }
            offspring.push(Particle { position: self.particles[i].position, weight: uniform });
        }
        self.particles = offspring;
        Ok(())
    }

    /// Weighted mean position. Weights must be normalized.
    pub fn estimate(&self) -> Position2 {
        assert!(self.is_normalized(), "estimate requires normalized weights");
        let mut x = 0.0;
        let mut y = 0.0;
        for p in &self.particles {
            x += p.weight * p.position.x;
            y += p.weight * p.position.y;
        }
        Position2::new(x, y)
    }

    /// One full filter cycle: predict, weigh by the configured strategy,
    /// normalize, resample, estimate. The observation kind must match the
    /// strategy.
    pub fn step(
        &mut self,
        v: Velocity2,
        dt: f64,
        observation: Observation<'_>,
        cfg: &FilterConfig,
        db: &AerialDatabase,
    ) -> Result<Position2, FilterError> {
        self.predict(v, dt, cfg);
        match (cfg.strategy, observation) {
            (Strategy::Ppf, Observation::Position(m)) => {
                self.weigh_ppf(&m, cfg.measurement_variance);
            }
            (Strategy::Capf, Observation::Query(q)) => {
                self.weigh_capf(q, db, cfg.epsilon)?;
            }
            (strategy @ Strategy::Ppf, Observation::Query(_)) => {
                return Err(FilterError::ObservationMismatch {
                    strategy,
                    expected: "position measurement",
                })
            }
            (strategy @ Strategy::Capf, Observation::Position(_)) => {
                return Err(FilterError::ObservationMismatch {
                    strategy,
                    expected: "query descriptor",
                })
            }
        }
        self.normalize();
        self.resample_sus()?;
        Ok(self.estimate())
    }
}

/// Where a first-query initialization centers the particle cloud: the
/// measurement formed from the query's top-20 retrievals.
pub fn retrieval_init_center(
    db: &AerialDatabase,
    first_query: &Descriptor,
    bandwidth: f64,
) -> Result<Position2, FilterError> {
    if db.len() < RETRIEVAL_INIT_TOP_K {
        return Err(FilterError::DatabaseTooSmall { needed: RETRIEVAL_INIT_TOP_K, got: db.len() });
    }
    let retrievals = db.top_k_by_descriptor(first_query, RETRIEVAL_INIT_TOP_K)?;
    Ok(measurement_from_retrievals(&retrievals, bandwidth).z)
}

fn sample_around(
    rng: &mut ChaCha8Rng,
    center: Position2,
    sigma: f64,
    count: usize,
) -> Vec<Particle> {
    let weight = 1.0 / count as f64;
    (0..count)
        .map(|_| {
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            Particle {
                position: Position2::new(center.x + sigma * nx, center.y + sigma * ny),
                weight,
            }
        })
        .collect()
}

/// A complete localization session: database, config, and particle state.
///
/// Dispatches queries to the configured strategy — forming a clustered
/// position measurement for the prediction-based path, weighting directly
/// for the compare-all path.
#[derive(Debug, Clone)]
pub struct Localizer {
    db: Arc<AerialDatabase>,
    cfg: FilterConfig,
    particles: ParticleSet,
}

impl Localizer {
    pub fn from_known_start(
        db: Arc<AerialDatabase>,
        cfg: FilterConfig,
        start: Position2,
    ) -> Result<Self, FilterError> {
        let particles = ParticleSet::init_gaussian(&cfg, start)?;
        Ok(Self { db, cfg, particles })
    }

    pub fn from_first_query(
        db: Arc<AerialDatabase>,
        cfg: FilterConfig,
        first_query: &Descriptor,
    ) -> Result<Self, FilterError> {
        let particles = ParticleSet::init_from_retrieval(&cfg, &db, first_query)?;
        Ok(Self { db, cfg, particles })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn database(&self) -> &AerialDatabase {
        &self.db
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.particles
    }

    /// Current weighted-mean position.
    pub fn estimate(&self) -> Position2 {
        self.particles.estimate()
    }

    /// Advances one step from a query descriptor, whatever the strategy.
    pub fn step_query(
        &mut self,
        v: Velocity2,
        dt: f64,
        query: &Descriptor,
    ) -> Result<Position2, FilterError> {
        match self.cfg.strategy {
            Strategy::Ppf => {
                let m = {
                    let retrievals = self.db.top_k_by_descriptor(query, self.cfg.top_k)?;
                    measurement_from_retrievals(&retrievals, self.cfg.bandwidth)
                };
                self.particles.step(v, dt, Observation::Position(m), &self.cfg, &self.db)
            }
            Strategy::Capf => {
                self.particles.step(v, dt, Observation::Query(query), &self.cfg, &self.db)
            }
        }
    }

    /// Advances one step from an externally formed position measurement
    /// (prediction-based strategy only).
    pub fn step_measurement(
        &mut self,
        v: Velocity2,
        dt: f64,
        measurement: Measurement,
    ) -> Result<Position2, FilterError> {
        self.particles.step(v, dt, Observation::Position(measurement), &self.cfg, &self.db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    // proptest's prelude exports a `Strategy` trait; name ours explicitly.
    use super::Strategy;
    use crate::db::GeoDescriptor;
    use proptest::prelude::*;

    fn cfg() -> FilterConfig {
        FilterConfig::default()
    }

    fn grid_db(n: usize, spacing: f64, dim: usize) -> AerialDatabase {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let entries = (0..n * n)
            .map(|i| {
                let (ix, iy) = (i % n, i / n);
                let d: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                GeoDescriptor {
                    id: i as u64,
                    position: Position2::new(
                        (ix as f64 + 0.5) * spacing,
                        (iy as f64 + 0.5) * spacing,
                    ),
                    descriptor: Descriptor::new(d).unwrap(),
                }
            })
            .collect();
        AerialDatabase::new(entries).unwrap()
    }

    fn uniform_set(positions: &[(f64, f64)], seed: u64) -> ParticleSet {
        let w = 1.0 / positions.len() as f64;
        ParticleSet {
            particles: positions
                .iter()
                .map(|&(x, y)| Particle { position: Position2::new(x, y), weight: w })
                .collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            degenerate_updates: 0,
        }
    }

    fn set_weights(ps: &mut ParticleSet, weights: &[f64]) {
        assert_eq!(ps.len(), weights.len());
        for (p, &w) in ps.particles.iter_mut().zip(weights) {
            p.weight = w;
        }
    }

    #[test]
    fn init_zero_sigma_collapses_to_start() {
        let mut c = cfg();
        c.init_sigma = 0.0;
        let start = Position2::new(12.0, -3.0);
        let ps = ParticleSet::init_gaussian(&c, start).unwrap();
        assert_eq!(ps.len(), 200);
        assert!(ps.particles().iter().all(|p| p.position == start));
        assert!(ps.is_normalized());
    }

    #[test]
    fn init_sample_statistics() {
        let start = Position2::new(100.0, 50.0);
        let mut mean_errs = Vec::new();
        let mut stds = Vec::new();
        for seed in 0..100 {
            let mut c = cfg();
            c.seed = seed;
            let ps = ParticleSet::init_gaussian(&c, start).unwrap();
            let n = ps.len() as f64;
            let mx = ps.particles().iter().map(|p| p.position.x).sum::<f64>() / n;
            let my = ps.particles().iter().map(|p| p.position.y).sum::<f64>() / n;
            mean_errs.push(Position2::new(mx, my).distance(&start));
            let var = ps
                .particles()
                .iter()
                .map(|p| {
                    let dx = p.position.x - mx;
                    let dy = p.position.y - my;
                    dx * dx + dy * dy
                })
                .sum::<f64>()
                / (2.0 * n);
            stds.push(var.sqrt());
        }
        let avg_mean_err = mean_errs.iter().sum::<f64>() / mean_errs.len() as f64;
        assert!(avg_mean_err < 1.0, "sample means strayed {avg_mean_err} m from start on average");
        assert!(stds.iter().all(|&s| (2.5..=5.5).contains(&s)), "per-axis std out of range");
    }

    #[test]
    fn init_is_deterministic() {
        let a = ParticleSet::init_gaussian(&cfg(), Position2::new(0.0, 0.0)).unwrap();
        let b = ParticleSet::init_gaussian(&cfg(), Position2::new(0.0, 0.0)).unwrap();
        assert_eq!(a.particles(), b.particles());
    }

    #[test]
    fn invalid_config_rejected() {
        let mut c = cfg();
        c.num_particles = 0;
        assert!(matches!(
            ParticleSet::init_gaussian(&c, Position2::new(0.0, 0.0)),
            Err(FilterError::InvalidConfig(_))
        ));
        let mut c = cfg();
        c.epsilon = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.measurement_variance = [3.0, -1.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn retrieval_init_centers_on_matching_entry() {
        // Spacing far above the bandwidth: the 20 retrievals are isolated
        // singleton clusters, so the rank-1 tie-break picks the exact match.
        let db = grid_db(6, 200.0, 8);
        let target = db.get(21).unwrap().clone();
        let center = retrieval_init_center(&db, &target.descriptor, 10.0).unwrap();
        assert_eq!(center, target.position);
    }

    #[test]
    fn retrieval_init_follows_majority_cluster() {
        // 15 of the 20 nearest descriptors sit in one tight site, 5 in
        // another far away: the center must be the mean of the 15.
        let mut entries = Vec::new();
        for i in 0..15u64 {
            entries.push(GeoDescriptor {
                id: i,
                position: Position2::new(100.0 + i as f64 * 0.1, 200.0),
                descriptor: Descriptor::new(vec![1.0, 0.0, i as f64 * 1e-3]).unwrap(),
            });
        }
        for i in 15..20u64 {
            entries.push(GeoDescriptor {
                id: i,
                position: Position2::new(900.0 + i as f64 * 0.1, 800.0),
                descriptor: Descriptor::new(vec![1.0, 0.0, i as f64 * 1e-3]).unwrap(),
            });
        }
        // Distant distractors so the database is bigger than the top-k.
        for i in 20..40u64 {
            entries.push(GeoDescriptor {
                id: i,
                position: Position2::new(i as f64 * 13.0, 50.0),
                descriptor: Descriptor::new(vec![-50.0, 40.0, i as f64]).unwrap(),
            });
        }
        let db = AerialDatabase::new(entries).unwrap();
        let q = Descriptor::new(vec![1.0, 0.0, 0.0]).unwrap();
        let center = retrieval_init_center(&db, &q, 10.0).unwrap();
        let want_x = (0..15).map(|i| 100.0 + i as f64 * 0.1).sum::<f64>() / 15.0;
        assert!((center.x - want_x).abs() < 1e-9);
        assert!((center.y - 200.0).abs() < 1e-9);
    }

    #[test]
    fn retrieval_init_needs_enough_entries() {
        let db = grid_db(3, 10.0, 4); // 9 entries < 20
        let q = db.entries()[0].descriptor.clone();
        assert!(matches!(
            ParticleSet::init_from_retrieval(&cfg(), &db, &q),
            Err(FilterError::DatabaseTooSmall { needed: 20, got: 9 })
        ));
    }

    #[test]
    fn predict_noise_free_is_pure_shift() {
        let mut c = cfg();
        c.motion_noise_sigma = 0.0;
        let mut ps = uniform_set(&[(0.0, 0.0), (5.0, 5.0)], 1);
        ps.predict(Velocity2::new(0.0, 0.0), 1.0, &c);
        assert_eq!(ps.particles()[0].position, Position2::new(0.0, 0.0));
        assert_eq!(ps.particles()[1].position, Position2::new(5.0, 5.0));
        ps.predict(Velocity2::new(1.0, 0.0), 1.0, &c);
        assert_eq!(ps.particles()[0].position, Position2::new(1.0, 0.0));
        assert_eq!(ps.particles()[1].position, Position2::new(6.0, 5.0));
        ps.predict(Velocity2::new(2.0, -1.0), 0.5, &c);
        assert_eq!(ps.particles()[0].position, Position2::new(2.0, -0.5));
    }

    #[test]
    fn predict_noise_has_zero_mean() {
        let mut c = cfg();
        c.num_particles = 10_000;
        c.init_sigma = 0.0;
        c.motion_noise_sigma = 1.0;
        let mut ps = ParticleSet::init_gaussian(&c, Position2::new(0.0, 0.0)).unwrap();
        ps.predict(Velocity2::new(3.0, -2.0), 1.0, &c);
        let n = ps.len() as f64;
        let mx = ps.particles().iter().map(|p| p.position.x).sum::<f64>() / n;
        let my = ps.particles().iter().map(|p| p.position.y).sum::<f64>() / n;
        assert!((mx - 3.0).abs() < 0.05, "mean x displacement {mx}");
        assert!((my + 2.0).abs() < 0.05, "mean y displacement {my}");
    }

    #[test]
    fn ppf_weight_matches_hand_computed_quadratic() {
        let mut ps = uniform_set(&[(0.0, 0.0), (3.0, 3.0)], 1);
        let z = Measurement { z: Position2::new(0.0, 0.0), support: 1 };
        ps.weigh_ppf(&z, [3.0, 3.0]);
        // Particle at the measurement gets the maximum weight 1.
        assert_eq!(ps.particles()[0].weight, 1.0);
        // exp(-(9/3 + 9/3)/2) = exp(-3)
        assert!((ps.particles()[1].weight - 0.049787068367863944).abs() < 1e-9);
    }

    #[test]
    fn ppf_argmax_invariant_under_variance_scaling() {
        let positions: Vec<(f64, f64)> =
            (0..20).map(|i| (i as f64 * 1.7 - 10.0, (i % 5) as f64)).collect();
        let z = Measurement { z: Position2::new(2.3, 1.9), support: 3 };
        let argmax = |ps: &ParticleSet| {
            ps.particles()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.weight.partial_cmp(&b.1.weight).unwrap())
                .unwrap()
                .0
        };
        let mut a = uniform_set(&positions, 1);
        a.weigh_ppf(&z, [3.0, 3.0]);
        let mut b = uniform_set(&positions, 1);
        b.weigh_ppf(&z, [30.0, 30.0]);
        assert_eq!(argmax(&a), argmax(&b));
    }

    #[test]
    fn capf_weight_ratio_two_to_one() {
        // Particle 0 maps to an entry at descriptor distance 2, particle 1
        // to one at distance 4 → normalized weights 2/3 and 1/3.
        let db = AerialDatabase::new(vec![
            GeoDescriptor {
                id: 0,
                position: Position2::new(0.0, 0.0),
                descriptor: Descriptor::new(vec![2.0, 0.0]).unwrap(),
            },
            GeoDescriptor {
                id: 1,
                position: Position2::new(100.0, 0.0),
                descriptor: Descriptor::new(vec![4.0, 0.0]).unwrap(),
            },
        ])
        .unwrap();
        let q = Descriptor::new(vec![0.0, 0.0]).unwrap();
        let mut ps = uniform_set(&[(1.0, 0.0), (99.0, 0.0)], 1);
        ps.weigh_capf(&q, &db, 1e-6).unwrap();
        ps.normalize();
        assert!((ps.particles()[0].weight - 2.0 / 3.0).abs() < 1e-9);
        assert!((ps.particles()[1].weight - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn capf_zero_distance_clamped() {
        let db = AerialDatabase::new(vec![GeoDescriptor {
            id: 0,
            position: Position2::new(0.0, 0.0),
            descriptor: Descriptor::new(vec![1.5, -0.5]).unwrap(),
        }])
        .unwrap();
        let q = Descriptor::new(vec![1.5, -0.5]).unwrap();
        let mut ps = uniform_set(&[(0.0, 0.0)], 1);
        ps.weigh_capf(&q, &db, 1e-6).unwrap();
        assert_eq!(ps.particles()[0].weight, 1e6);
    }

    #[test]
    fn capf_same_cell_uniform() {
        let db = AerialDatabase::new(vec![GeoDescriptor {
            id: 0,
            position: Position2::new(50.0, 50.0),
            descriptor: Descriptor::new(vec![1.0, 1.0]).unwrap(),
        }])
        .unwrap();
        let q = Descriptor::new(vec![0.0, 0.0]).unwrap();
        let mut ps = uniform_set(&[(0.0, 0.0), (10.0, 90.0), (70.0, 30.0)], 1);
        ps.weigh_capf(&q, &db, 1e-6).unwrap();
        ps.normalize();
        for p in ps.particles() {
            assert!((p.weight - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_basic_and_degenerate() {
        let mut ps = uniform_set(&[(0.0, 0.0), (1.0, 0.0)], 1);
        set_weights(&mut ps, &[2.0, 2.0]);
        assert!(!ps.normalize());
        assert_eq!(ps.particles()[0].weight, 0.5);
        assert_eq!(ps.particles()[1].weight, 0.5);
        assert_eq!(ps.degenerate_updates(), 0);

        set_weights(&mut ps, &[0.0, 0.0]);
        assert!(ps.normalize());
        assert_eq!(ps.particles()[0].weight, 0.5);
        assert_eq!(ps.degenerate_updates(), 1);
    }

    #[test]
    fn resample_uniform_weights_is_identity() {
        let positions: Vec<(f64, f64)> = (0..8).map(|i| (i as f64, -(i as f64))).collect();
        let mut ps = uniform_set(&positions, 3);
        let before: Vec<Position2> = ps.particles().iter().map(|p| p.position).collect();
        ps.resample_sus().unwrap();
        let after: Vec<Position2> = ps.particles().iter().map(|p| p.position).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn resample_three_one_split_for_every_offset() {
        for k in 0..100 {
            let offset = k as f64 * 0.0025; // spans [0, 0.25)
            let mut ps = uniform_set(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)], 1);
            set_weights(&mut ps, &[0.75, 0.25, 0.0, 0.0]);
            ps.resample_sus_at(offset).unwrap();
            let copies_of_first =
                ps.particles().iter().filter(|p| p.position.x == 0.0).count();
            let copies_of_second =
                ps.particles().iter().filter(|p| p.position.x == 1.0).count();
            assert_eq!((copies_of_first, copies_of_second), (3, 1), "offset {offset}");
            assert!(ps.particles().iter().all(|p| p.weight == 0.25));
        }
    }

    #[test]
    fn resample_never_selects_zero_weight() {
        let mut ps = uniform_set(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)], 9);
        set_weights(&mut ps, &[0.5, 0.0, 0.5]);
        for _ in 0..50 {
            let mut trial = ps.clone();
            trial.resample_sus().unwrap();
            assert!(trial.particles().iter().all(|p| p.position.x != 1.0));
            // Redraw the offset for the next trial.
            let _: f64 = ps.rng.random();
        }
    }

    #[test]
    fn resample_requires_normalized_weights() {
        let mut ps = uniform_set(&[(0.0, 0.0), (1.0, 0.0)], 1);
        set_weights(&mut ps, &[0.9, 0.9]);
        assert!(matches!(ps.resample_sus(), Err(FilterError::NotNormalized(_))));
        let mut ps = uniform_set(&[(0.0, 0.0), (1.0, 0.0)], 1);
        assert!(matches!(
            ps.resample_sus_at(0.7),
            Err(FilterError::InvalidOffset { .. })
        ));
    }

    #[test]
    fn resample_is_deterministic_per_seed() {
        let make = || {
            let mut ps = uniform_set(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)], 42);
            set_weights(&mut ps, &[0.4, 0.3, 0.2, 0.1]);
            ps.resample_sus().unwrap();
            ps.particles().iter().map(|p| p.position.x).collect::<Vec<_>>()
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn estimate_matches_examples() {
        let ps = uniform_set(&[(0.0, 0.0), (2.0, 0.0)], 1);
        assert_eq!(ps.estimate(), Position2::new(1.0, 0.0));

        let mut ps = uniform_set(&[(5.0, -7.0), (100.0, 100.0)], 1);
        set_weights(&mut ps, &[1.0, 0.0]);
        assert_eq!(ps.estimate(), Position2::new(5.0, -7.0));
    }

    #[test]
    fn step_converges_on_measurement() {
        let db = grid_db(5, 20.0, 4);
        let mut c = cfg();
        c.motion_noise_sigma = 0.0;
        c.measurement_variance = [0.25, 0.25];
        c.seed = 7;
        let truth = Position2::new(50.0, 50.0);
        let mut ps = ParticleSet::init_gaussian(&c, Position2::new(44.0, 56.0)).unwrap();
        let mut est = ps.estimate();
        for _ in 0..10 {
            let m = Measurement { z: truth, support: 20 };
            est = ps.step(Velocity2::new(0.0, 0.0), 1.0, Observation::Position(m), &c, &db).unwrap();
        }
        assert!(est.distance(&truth) < 2.0 * c.init_sigma, "converged to {est:?}");
    }

    #[test]
    fn step_single_entry_capf_tracks_dead_reckoning() {
        // One aerial cell → every particle gets the same weight, so the
        // estimate is exactly the initial cloud mean dead-reckoned forward.
        let db = AerialDatabase::new(vec![GeoDescriptor {
            id: 0,
            position: Position2::new(0.0, 0.0),
            descriptor: Descriptor::new(vec![1.0, 0.0]).unwrap(),
        }])
        .unwrap();
        let mut c = cfg();
        c.strategy = Strategy::Capf;
        c.motion_noise_sigma = 0.0;
        c.num_particles = 50;
        let q = Descriptor::new(vec![0.4, 0.4]).unwrap();
        let mut ps = ParticleSet::init_gaussian(&c, Position2::new(10.0, 10.0)).unwrap();
        let start = ps.estimate();
        let v = Velocity2::new(2.0, -1.0);
        let mut expected = start;
        for _ in 0..5 {
            let est = ps.step(v, 1.0, Observation::Query(&q), &c, &db).unwrap();
            expected = expected + v.displacement(1.0);
            assert!(est.distance(&expected) < 1e-9);
        }
    }

    #[test]
    fn step_rejects_mismatched_observation() {
        let db = grid_db(3, 10.0, 4);
        let q = db.entries()[0].descriptor.clone();
        let mut ps = ParticleSet::init_gaussian(&cfg(), Position2::new(0.0, 0.0)).unwrap();
        let err = ps.step(Velocity2::new(0.0, 0.0), 1.0, Observation::Query(&q), &cfg(), &db);
        assert!(matches!(err, Err(FilterError::ObservationMismatch { .. })));

        let mut c = cfg();
        c.strategy = Strategy::Capf;
        let mut ps = ParticleSet::init_gaussian(&c, Position2::new(0.0, 0.0)).unwrap();
        let m = Measurement { z: Position2::new(0.0, 0.0), support: 1 };
        let err = ps.step(Velocity2::new(0.0, 0.0), 1.0, Observation::Position(m), &c, &db);
        assert!(matches!(err, Err(FilterError::ObservationMismatch { .. })));
    }

    #[test]
    fn step_is_reproducible() {
        let db = grid_db(6, 15.0, 6);
        let mut c = cfg();
        c.strategy = Strategy::Capf;
        c.seed = 99;
        let run = || {
            let mut loc =
                Localizer::from_known_start(Arc::new(db.clone()), c.clone(), Position2::new(45.0, 45.0))
                    .unwrap();
            let mut track = Vec::new();
            for i in 0..20 {
                let q = db.entries()[i % db.len()].descriptor.clone();
                track.push(loc.step_query(Velocity2::new(1.0, 0.5), 1.0, &q).unwrap());
            }
            track
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn localizer_ppf_steps_from_queries() {
        let db = grid_db(6, 15.0, 6);
        let truth_entry = db.get(14).unwrap().clone();
        let mut c = cfg();
        c.top_k = 5;
        c.seed = 3;
        let mut loc = Localizer::from_known_start(
            Arc::new(db),
            c,
            truth_entry.position + Position2::new(-3.0, 2.0),
        )
        .unwrap();
        // Repeated queries that retrieve the same entry pull the estimate in.
        let mut est = loc.estimate();
        for _ in 0..10 {
            est = loc.step_query(Velocity2::new(0.0, 0.0), 1.0, &truth_entry.descriptor).unwrap();
        }
        assert!(est.distance(&truth_entry.position) < 8.0);
    }

    #[test]
    fn strategy_round_trips_through_strings() {
        assert_eq!("ppf".parse::<Strategy>().unwrap(), Strategy::Ppf);
        assert_eq!("capf".parse::<Strategy>().unwrap(), Strategy::Capf);
        assert!("pf".parse::<Strategy>().is_err());
        assert_eq!(Strategy::Capf.to_string(), "capf");
        assert_eq!(serde_json::to_string(&Strategy::Ppf).unwrap(), "\"ppf\"");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn normalize_sums_to_one(weights in proptest::collection::vec(0.0f64..10.0, 2..50)) {
            prop_assume!(weights.iter().sum::<f64>() > 1e-12);
            let positions: Vec<(f64, f64)> = (0..weights.len()).map(|i| (i as f64, 0.0)).collect();
            let mut ps = uniform_set(&positions, 1);
            set_weights(&mut ps, &weights);
            let degenerate = ps.normalize();
            prop_assert!(!degenerate);
            let sum: f64 = ps.particles().iter().map(|p| p.weight).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }

        #[test]
        fn resample_copy_counts_within_one_of_expectation(
            raw in proptest::collection::vec(0.01f64..1.0, 3..40),
            offset_frac in 0.0f64..0.999,
        ) {
            let sum: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
            let m = weights.len();
            let positions: Vec<(f64, f64)> = (0..m).map(|i| (i as f64, 0.0)).collect();
            let mut ps = uniform_set(&positions, 1);
            set_weights(&mut ps, &weights);
            ps.resample_sus_at(offset_frac / m as f64).unwrap();
            prop_assert_eq!(ps.len(), m);
            for (i, &w) in weights.iter().enumerate() {
                let copies = ps.particles().iter().filter(|p| p.position.x == i as f64).count();
                let expected = m as f64 * w;
                prop_assert!(
                    copies == expected.floor() as usize || copies == expected.ceil() as usize,
                    "particle {} got {} copies, expected {}", i, copies, expected
                );
            }
        }

        #[test]
        fn estimate_matches_independent_sum(
            raw in proptest::collection::vec((0.01f64..1.0, -100.0f64..100.0, -100.0f64..100.0), 1..40),
        ) {
            let sum: f64 = raw.iter().map(|(w, _, _)| w).sum();
            let positions: Vec<(f64, f64)> = raw.iter().map(|&(_, x, y)| (x, y)).collect();
            let weights: Vec<f64> = raw.iter().map(|(w, _, _)| w / sum).collect();
            let mut ps = uniform_set(&positions, 1);
            set_weights(&mut ps, &weights);
            // Oracle: reversed-order summation.
            let ox: f64 = raw.iter().rev().map(|&(w, x, _)| (w / sum) * x).sum();
            let oy: f64 = raw.iter().rev().map(|&(w, _, y)| (w / sum) * y).sum();
            let est = ps.estimate();
            prop_assert!((est.x - ox).abs() < 1e-9);
            prop_assert!((est.y - oy).abs() < 1e-9);
        }

        #[test]
        fn step_preserves_count_and_normalization(seed in 0u64..30) {
            let db = grid_db(4, 25.0, 4);
            let mut c = cfg();
            c.strategy = Strategy::Capf;
            c.num_particles = 64;
            c.seed = seed;
            let mut ps = ParticleSet::init_gaussian(&c, Position2::new(50.0, 50.0)).unwrap();
            for i in 0..5 {
                let q = db.entries()[i % db.len()].descriptor.clone();
                ps.step(Velocity2::new(1.0, 0.0), 1.0, Observation::Query(&q), &c, &db).unwrap();
                prop_assert_eq!(ps.len(), 64);
                prop_assert!(ps.is_normalized());
            }
        }
    }
}
