//! DBSCAN over a sparse distance map.
//!
//! Neighbourhoods are read from a [`SparseDistanceMap`] instead of a dense
//! matrix, which is exact as long as `epsilon <= cutoff`: every pair within
//! epsilon is guaranteed to be present in the map.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spatial_index::{within, SparseDistanceMap};

pub const DEFAULT_MIN_SAMPLES: usize = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ClusteringError {
    #[error("epsilon {epsilon} exceeds the distance cutoff {cutoff}")]
    EpsilonExceedsCutoff { epsilon: f64, cutoff: f64 },
    #[error("min_samples must be at least 1")]
    InvalidMinSamples,
    #[error("pair ({0}, {1}) references a group outside 0..{2}")]
    GroupOutOfRange(usize, usize, usize),
}

/// Cluster assignment per group id. `None` marks noise.
///
/// Cluster ids are consecutive and numbered by each cluster's smallest member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub labels: Vec<Option<usize>>,
    pub epsilon: f64,
    pub min_samples: usize,
}

impl Clustering {
    pub fn cluster_count(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |m| m + 1)
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Members of every cluster, indexed by cluster id.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count()];
        for (g, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                out[*c].push(g);
            }
        }
        out
    }

    /// Cluster membership as a sorted set of sorted sets, independent of ids.
    pub fn partition(&self) -> Vec<Vec<usize>> {
        let mut p = self.clusters();
        p.sort();
        p
    }

    /// Renumbers clusters by smallest member.
    fn canonicalize(mut self) -> Self {
        let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
        for l in self.labels.iter().flatten() {
            let next = remap.len();
            remap.entry(*l).or_insert(next);
        }
        for l in self.labels.iter_mut().flatten() {
            *l = remap[l];
        }
        self
    }
}

fn neighbor_lists(n: usize, d: &SparseDistanceMap, epsilon: f64) -> Result<Vec<Vec<usize>>, ClusteringError> {
    let mut adj = vec![Vec::new(); n];
    for (a, b, dist) in d.iter() {
        if a >= n || b >= n {
            return Err(ClusteringError::GroupOutOfRange(a, b, n));
        }
        if within(dist, epsilon) && a != b {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    for l in &mut adj {
        l.sort_unstable();
    }
    Ok(adj)
}

/// Standard DBSCAN: a point is core when at least `min_samples` points
/// (itself included) lie within `epsilon`; clusters are the density-connected
/// sets grown from core points; border points join the first cluster that
/// reaches them; everything else is noise.
pub fn dbscan(n: usize, d: &SparseDistanceMap, epsilon: f64, min_samples: usize) -> Result<Clustering, ClusteringError> {
    if !within(epsilon, d.cutoff) {
        return Err(ClusteringError::EpsilonExceedsCutoff {
            epsilon,
            cutoff: d.cutoff,
        });
    }
    if min_samples == 0 {
        return Err(ClusteringError::InvalidMinSamples);
    }
    let adj = neighbor_lists(n, d, epsilon)?;
    let core: Vec<bool> = adj.iter().map(|l| l.len() + 1 >= min_samples).collect();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for start in 0..n {
        if labels[start].is_some() || !core[start] {
            continue;
        }
        let id = next;
        next += 1;
        labels[start] = Some(id);
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            // only core points propagate the cluster
            if !core[p] {
                continue;
            }
            for &q in &adj[p] {
                if labels[q].is_none() {
                    labels[q] = Some(id);
                    queue.push_back(q);
                }
            }
        }
    }
    Ok(Clustering {
        labels,
        epsilon,
        min_samples,
    }
    .canonicalize())
}

/// Union-find over `n` nodes.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Connected components of an edge list; equivalent to DBSCAN with
/// `min_samples = 1` on the epsilon-adjacency graph.
pub fn connected_components(pairs: &[(usize, usize)], n: usize) -> Result<Clustering, ClusteringError> {
    let mut ds = DisjointSet::new(n);
    for &(a, b) in pairs {
        if a >= n || b >= n {
            return Err(ClusteringError::GroupOutOfRange(a, b, n));
        }
        ds.union(a, b);
    }
    let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
    let labels = (0..n)
        .map(|g| {
            let root = ds.find(g);
            let next = ids.len();
            Some(*ids.entry(root).or_insert(next))
        })
        .collect();
    Ok(Clustering {
        labels,
        epsilon: f64::NAN,
        min_samples: 1,
    })
}
