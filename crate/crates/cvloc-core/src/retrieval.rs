//! Turning retrieval results into position measurements, and measuring
//! retrieval quality.
//!
//! The measurement path mirrors the prediction-based fusion strategy: the
//! geotags of the top-k retrieved entries are clustered with flat-kernel
//! mean shift and the winning cluster's mean becomes the position
//! measurement. The quality path computes recall-at-k curves against known
//! true matches.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::{AerialDatabase, DbError, GeoDescriptor};
use crate::descriptor::Descriptor;
use crate::geo::Position2;

/// Mean-shift iteration stops once an iterate moves less than this (meters).
const CONVERGENCE_TOL_M: f64 = 1e-3;
/// Hard cap on mean-shift iterations per point.
const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error(transparent)]
    Db(#[from] DbError),
    #[error("true id {0} is not in the database")]
    UnknownTrueId(u64),
}

/// One mean-shift cluster: the indices of the input points assigned to it,
/// their positions, and their arithmetic mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Indices into the input point list, ascending.
    pub indices: Vec<usize>,
    pub members: Vec<Position2>,
    pub mean: Position2,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// A position measurement distilled from a retrieval set: the winning
/// cluster's mean and how many retrievals back it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub z: Position2,
    pub support: usize,
}

/// Flat-kernel mean shift over 2-d points.
///
/// Each point iterates toward the mean of all input points within
/// `bandwidth` of its current iterate (inclusive) until the shift drops
/// below 1e-3 m or 100 iterations pass. Converged modes closer than
/// `bandwidth / 2` are merged, and every input point joins the cluster of
/// its mode. Cluster means are arithmetic means of the assigned input
/// points; clusters are ordered by their lowest member index.
pub fn mean_shift(points: &[Position2], bandwidth: f64) -> Vec<Cluster> {
    assert!(!points.is_empty(), "mean_shift needs at least one point");
    assert!(bandwidth > 0.0, "mean_shift bandwidth must be positive");

    let modes: Vec<Position2> = points.iter().map(|&p| seek_mode(points, p, bandwidth)).collect();

    // Merge modes within bandwidth/2 of each other. Connected components
    // (not just pairwise proximity to a representative) so that chains of
    // nearby modes land in one cluster regardless of input order.
    let merge_radius = bandwidth / 2.0;
    let mut uf = UnionFind::new(modes.len());
    for i in 0..modes.len() {
        for j in (i + 1)..modes.len() {
            if modes[i].distance(&modes[j]) <= merge_radius {
                uf.union(i, j);
            }
        }
    }

    let mut clusters: Vec<Cluster> = Vec::new();
    let mut root_to_cluster = vec![usize::MAX; modes.len()];
    for (i, &point) in points.iter().enumerate() {
        let root = uf.find(i);
        if root_to_cluster[root] == usize::MAX {
            root_to_cluster[root] = clusters.len();
            clusters.push(Cluster { indices: Vec::new(), members: Vec::new(), mean: point });
        }
        let c = &mut clusters[root_to_cluster[root]];
        c.indices.push(i);
        c.members.push(point);
    }
    for c in &mut clusters {
        let n = c.members.len() as f64;
        let sx: f64 = c.members.iter().map(|p| p.x).sum();
        let sy: f64 = c.members.iter().map(|p| p.y).sum();
        c.mean = Position2::new(sx / n, sy / n);
    }
    clusters
}

fn seek_mode(points: &[Position2], start: Position2, bandwidth: f64) -> Position2 {
    let mut m = start;
    for _ in 0..MAX_ITERATIONS {
        let mut n = 0usize;
        let mut sx = 0.0;
        let mut sy = 0.0;
        for p in points {
            if p.distance(&m) <= bandwidth {
                n += 1;
                sx += p.x;
                sy += p.y;
            }
        }
        // The window always holds at least one point: the mean of the
        // previous window lies within the bandwidth of some window member.
        let next = Position2::new(sx / n as f64, sy / n as f64);
        let shift = next.distance(&m);
        m = next;
        if shift < CONVERGENCE_TOL_M {
            break;
        }
    }
    m
}

/// Distills a retrieval set into a single position measurement.
///
/// Retrieval geotags are clustered with [`mean_shift`]; the measurement is
/// the mean of the largest cluster. Size ties go to the cluster containing
/// the rank-1 retrieval (index 0), then to the cluster with the lowest
/// member entry id.
pub fn measurement_from_retrievals(retrievals: &[&GeoDescriptor], bandwidth: f64) -> Measurement {
    assert!(!retrievals.is_empty(), "measurement needs at least one retrieval");
    let points: Vec<Position2> = retrievals.iter().map(|r| r.position).collect();
    let clusters = mean_shift(&points, bandwidth);
    let winner = clusters
        .iter()
        .max_by(|a, b| {
            let key = |c: &Cluster| {
                let min_id = c.indices.iter().map(|&i| retrievals[i].id).min().unwrap();
                // Larger is better for size and rank-1 membership; lower
                // member id wins the final tie, hence the reversal.
                (c.len(), c.indices.contains(&0), std::cmp::Reverse(min_id))
            };
            key(a).cmp(&key(b))
        })
        .expect("at least one cluster");
    Measurement { z: winner.mean, support: winner.len() }
}

/// Recall as a function of retrieval depth, with depth expressed as a
/// fraction of the database size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallCurve {
    pub points: Vec<RecallPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallPoint {
    pub k_fraction: f64,
    pub recall: f64,
}

impl RecallCurve {
    /// Recall at the given fraction, if it is one of the tabulated points.
    pub fn at_fraction(&self, k_fraction: f64) -> Option<f64> {
        self.points.iter().find(|p| p.k_fraction == k_fraction).map(|p| p.recall)
    }
}

/// Zero-based rank of each query's true entry in the full descriptor
/// ordering (rank 0 = top retrieval).
pub fn true_match_ranks(
    db: &AerialDatabase,
    queries: &[(Descriptor, u64)],
) -> Result<Vec<usize>, RetrievalError> {
    queries
        .iter()
        .map(|(q, true_id)| {
            if db.get(*true_id).is_none() {
                return Err(RetrievalError::UnknownTrueId(*true_id));
            }
            let ranked = db.rank_by_descriptor(q)?;
            let rank = ranked
                .iter()
                .position(|&(_, idx)| db.entries()[idx].id == *true_id)
                .expect("true id verified present");
            Ok(rank)
        })
        .collect()
}

/// Fraction of queries whose true entry appears in the top `k` retrievals.
pub fn recall_at_k(
    db: &AerialDatabase,
    queries: &[(Descriptor, u64)],
    k: usize,
) -> Result<f64, RetrievalError> {
    assert!(k >= 1 && k <= db.len(), "k must be in [1, database size]");
    assert!(!queries.is_empty(), "recall needs at least one query");
    let ranks = true_match_ranks(db, queries)?;
    Ok(ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64)
}

/// Recall with the retrieval depth given as a fraction of the database
/// size: k = ceil(k_fraction * |db|).
pub fn recall_at_fraction(
    db: &AerialDatabase,
    queries: &[(Descriptor, u64)],
    k_fraction: f64,
) -> Result<f64, RetrievalError> {
    assert!(
        k_fraction > 0.0 && k_fraction <= 1.0,
        "k_fraction must be in (0, 1], got {k_fraction}"
    );
    let k = (k_fraction * db.len() as f64).ceil() as usize;
    recall_at_k(db, queries, k)
}

/// Evaluates recall at several depth fractions using one ranking pass per
/// query.
pub fn recall_curve(
    db: &AerialDatabase,
    queries: &[(Descriptor, u64)],
    k_fractions: &[f64],
) -> Result<RecallCurve, RetrievalError> {
    assert!(!queries.is_empty(), "recall needs at least one query");
    for &f in k_fractions {
        assert!(f > 0.0 && f <= 1.0, "k_fraction must be in (0, 1], got {f}");
    }
    let ranks = true_match_ranks(db, queries)?;
    let n = ranks.len() as f64;
    let points = k_fractions
        .iter()
        .map(|&k_fraction| {
            let k = (k_fraction * db.len() as f64).ceil() as usize;
            let recall = ranks.iter().filter(|&&r| r < k).count() as f64 / n;
            RecallPoint { k_fraction, recall }
        })
        .collect();
    Ok(RecallCurve { points })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}
