//! Geotagged aerial descriptor database with position-space and
//! descriptor-space queries.
//!
//! Both query paths are exact: the position query is served by a 2-d tree
//! whose pruning bound is conservative enough to visit every candidate that
//! could win under the tie-break rule, and the descriptor query is an
//! exhaustive linear scan (tree indices do not help at embedding
//! dimensions). Results are deterministic: ties in either metric are broken
//! by the lowest entry id.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

use crate::descriptor::Descriptor;
use crate::geo::Position2;

#[derive(Debug, Error, PartialEq)]
pub enum DbError {
    #[error("aerial database must not be empty")]
    Empty,
    #[error("duplicate aerial entry id {0}")]
    DuplicateId(u64),
    #[error("entry id {id} has descriptor dimension {got}, expected {expected}")]
    DimensionMismatch { id: u64, expected: usize, got: usize },
    #[error("query descriptor dimension {got} does not match database dimension {expected}")]
    QueryDimension { expected: usize, got: usize },
    #[error("k = {k} out of range [1, {len}]")]
    InvalidK { k: usize, len: usize },
}

/// One aerial image stand-in: a unique id, the geotag projected into the
/// local frame, and the image's embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoDescriptor {
    pub id: u64,
    pub position: Position2,
    pub descriptor: Descriptor,
}

/// Immutable collection of geotagged descriptors. Built once, then queried
/// concurrently from any number of threads.
#[derive(Debug, Clone)]
pub struct AerialDatabase {
    entries: Vec<GeoDescriptor>,
    by_id: HashMap<u64, usize>,
    tree: KdTree,
    dimension: usize,
}

impl AerialDatabase {
    pub fn new(entries: Vec<GeoDescriptor>) -> Result<Self, DbError> {
        let dimension = entries.first().ok_or(DbError::Empty)?.descriptor.dim();
        let mut by_id = HashMap::with_capacity(entries.len());
        for (idx, e) in entries.iter().enumerate() {
            if e.descriptor.dim() != dimension {
                return Err(DbError::DimensionMismatch {
                    id: e.id,
                    expected: dimension,
                    got: e.descriptor.dim(),
                });
            }
            if by_id.insert(e.id, idx).is_some() {
                return Err(DbError::DuplicateId(e.id));
            }
        }
        let tree = KdTree::build(&entries);
        Ok(Self { entries, by_id, tree, dimension })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn entries(&self) -> &[GeoDescriptor] {
        &self.entries
    }

    pub fn get(&self, id: u64) -> Option<&GeoDescriptor> {
        self.by_id.get(&id).map(|&i| &self.entries[i])
    }

    /// The entry whose position is closest to `p` in Euclidean distance,
    /// ties broken by lowest id.
    pub fn nearest_by_position(&self, p: Position2) -> &GeoDescriptor {
        let idx = self.tree.nearest(&self.entries, p);
        &self.entries[idx]
    }

    /// The `k` entries with the smallest descriptor L2 distance to `q`,
    /// ascending by distance, distance ties broken by lowest id.
    pub fn top_k_by_descriptor(
        &self,
        q: &Descriptor,
        k: usize,
    ) -> Result<Vec<&GeoDescriptor>, DbError> {
        if q.dim() != self.dimension {
            return Err(DbError::QueryDimension { expected: self.dimension, got: q.dim() });
        }
        if k == 0 || k > self.entries.len() {
            return Err(DbError::InvalidK { k, len: self.entries.len() });
        }
        let ranked = self.rank_by_descriptor(q)?;
        Ok(ranked.into_iter().take(k).map(|(_, idx)| &self.entries[idx]).collect())
    }

    /// Every entry index ordered by ascending (descriptor distance, id).
    /// Shared by top-k retrieval and recall evaluation so both see the
    /// identical ordering.
    pub(crate) fn rank_by_descriptor(&self, q: &Descriptor) -> Result<Vec<(f64, usize)>, DbError> {
        if q.dim() != self.dimension {
            return Err(DbError::QueryDimension { expected: self.dimension, got: q.dim() });
        }
        let mut ranked: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(idx, e)| (q.l2_distance_unchecked(&e.descriptor), idx))
            .collect();
        ranked.sort_unstable_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("descriptor distances are finite")
                .then_with(|| self.entries[a.1].id.cmp(&self.entries[b.1].id))
        });
        Ok(ranked)
    }
}

/// Static 2-d tree over entry positions. Nodes are stored in build order;
/// each subtree owns a contiguous index range and splits it on the median
/// of the alternating axis.
#[derive(Debug, Clone)]
struct KdTree {
    nodes: Vec<KdNode>,
    root: usize,
}

#[derive(Debug, Clone)]
struct KdNode {
    entry: usize,
    axis: u8,
    left: Option<usize>,
    right: Option<usize>,
}

struct Best {
    d2: f64,
    id: u64,
    entry: usize,
}

impl KdTree {
    fn build(entries: &[GeoDescriptor]) -> Self {
        let mut order: Vec<usize> = (0..entries.len()).collect();
        let mut nodes = Vec::with_capacity(entries.len());
        let root = Self::build_range(entries, &mut order, 0, &mut nodes).expect("non-empty");
        Self { nodes, root }
    }

    fn build_range(
        entries: &[GeoDescriptor],
        order: &mut [usize],
        depth: usize,
        nodes: &mut Vec<KdNode>,
    ) -> Option<usize> {
        if order.is_empty() {
            return None;
        }
        let axis = (depth % 2) as u8;
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            let ka = coord(entries[a].position, axis);
            let kb = coord(entries[b].position, axis);
            ka.partial_cmp(&kb).expect("finite positions").then(entries[a].id.cmp(&entries[b].id))
        });
        let entry = order[mid];
        let node_idx = nodes.len();
        nodes.push(KdNode { entry, axis, left: None, right: None });
        let (lo, hi) = order.split_at_mut(mid);
        let left = Self::build_range(entries, lo, depth + 1, nodes);
        let right = Self::build_range(entries, &mut hi[1..], depth + 1, nodes);
        nodes[node_idx].left = left;
        nodes[node_idx].right = right;
        Some(node_idx)
    }

    fn nearest(&self, entries: &[GeoDescriptor], p: Position2) -> usize {
        let mut best = Best { d2: f64::INFINITY, id: u64::MAX, entry: 0 };
        self.search(entries, p, self.root, &mut best);
        best.entry
    }

    fn search(&self, entries: &[GeoDescriptor], p: Position2, node_idx: usize, best: &mut Best) {
        let node = &self.nodes[node_idx];
        let e = &entries[node.entry];
        let dx = e.position.x - p.x;
        let dy = e.position.y - p.y;
        let d2 = dx * dx + dy * dy;
        if d2 < best.d2 || (d2 == best.d2 && e.id < best.id) {
            *best = Best { d2, id: e.id, entry: node.entry };
        }
        let delta = coord(p, node.axis) - coord(e.position, node.axis);
        let (near, far) = if delta < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        if let Some(n) = near {
            self.search(entries, p, n, best);
        }
        // The far side may still hold a winner when the splitting plane is
        // exactly at the best distance (an equal-distance entry with a lower
        // id), so prune only on strict inequality.
        if let Some(f) = far {
            if delta * delta <= best.d2 {
                self.search(entries, p, f, best);
            }
        }
    }
}

fn coord(p: Position2, axis: u8) -> f64 {
    if axis == 0 {
        p.x
    } else {
        p.y
    }
}
