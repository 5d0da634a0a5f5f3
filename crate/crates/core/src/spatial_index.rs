//! Uniform-grid spatial hash over group point sets.
//!
//! All points are voxel centers on one shared grid, so squared distances are
//! computed exactly as integer sums over voxel-key differences and only
//! converted to meters at the end. Queries visit neighbour cells in order of
//! their lower-bound distance and stop once the current best is certified or
//! the cutoff is exceeded.

use std::collections::BTreeMap;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{voxel_center, PointSet, VoxelKey};
use crate::grouping::MeshGroup;
use crate::math::Box3;

pub const DEFAULT_CUTOFF: f64 = 0.05;
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Relative slack for inclusive length comparisons (`d <= limit`), absorbing
/// the rounding of `pitch * sqrt(n)` against decimal thresholds.
pub const LENGTH_REL_TOL: f64 = 1e-9;

/// `d <= limit`, tolerant to floating-point rounding at the boundary.
pub fn within(d: f64, limit: f64) -> bool {
    d <= limit + limit.abs() * LENGTH_REL_TOL
}

#[derive(Debug, Error, PartialEq)]
pub enum SpatialError {
    #[error("cell size must be positive and finite, got {0}")]
    InvalidCellSize(f64),
    #[error("point sets use different grid pitches ({0} vs {1})")]
    PitchMismatch(f64, f64),
    #[error("point set of owner {0} is empty")]
    EmptyPointSet(usize),
    #[error("unknown owner {0}")]
    UnknownOwner(usize),
    #[error("epsilon {epsilon} exceeds the distance cutoff {cutoff}")]
    EpsilonExceedsCutoff { epsilon: f64, cutoff: f64 },
}

pub type CellKey = [i64; 3];

#[derive(Debug, Clone)]
struct Owner {
    keys: Vec<VoxelKey>,
    bounds: Option<Box3>,
}

/// Cell offsets sorted by the smallest possible distance between a point in
/// the center cell and a point in the offset cell.
#[derive(Debug, Clone)]
pub struct OffsetTable {
    entries: Vec<(CellKey, f64)>,
}

impl OffsetTable {
    pub fn new(cell_size: f64, radius: f64) -> Self {
        let reach = (radius / cell_size).floor() as i64 + 1;
        let mut entries = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let gap = |d: i64| (d.abs() - 1).max(0) as f64;
                    let lb = cell_size * (gap(dx).powi(2) + gap(dy).powi(2) + gap(dz).powi(2)).sqrt();
                    if within(lb, radius) {
                        entries.push(([dx, dy, dz], lb));
                    }
                }
            }
        }
        entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Grid of `(owner, point index)` entries, sorted by owner within a cell.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell_size: f64,
    pitch: f64,
    owners: Vec<Owner>,
    cells: FxHashMap<CellKey, Vec<(u32, u32)>>,
}

fn key_dist2(a: VoxelKey, b: VoxelKey) -> i64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl GridIndex {
    /// Indexes every point of every set; owner ids are positions in `sets`.
    pub fn build(sets: &[&PointSet], cell_size: f64) -> Result<Self, SpatialError> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(SpatialError::InvalidCellSize(cell_size));
        }
        let pitch = sets.first().map(|s| s.grid_pitch).unwrap_or(cell_size);
        if let Some(s) = sets.iter().find(|s| s.grid_pitch != pitch) {
            return Err(SpatialError::PitchMismatch(pitch, s.grid_pitch));
        }
        let mut index = Self {
            cell_size,
            pitch,
            owners: Vec::with_capacity(sets.len()),
            cells: FxHashMap::default(),
        };
        for (o, set) in sets.iter().enumerate() {
            for (i, &k) in set.keys.iter().enumerate() {
                let c = index.cell_of(k);
                index.cells.entry(c).or_default().push((o as u32, i as u32));
            }
            index.owners.push(Owner {
                keys: set.keys.clone(),
                bounds: Box3::from_points(set.points.iter().copied()),
            });
        }
        // owners are inserted in ascending order, so each cell list is already sorted
        Ok(index)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn owner_count(&self) -> usize {
        self.owners.len()
    }

    pub fn point_count(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_of(&self, k: VoxelKey) -> CellKey {
        if self.cell_size == self.pitch {
            return k;
        }
        let p = voxel_center(k, self.pitch);
        [
            (p.x / self.cell_size).floor() as i64,
            (p.y / self.cell_size).floor() as i64,
            (p.z / self.cell_size).floor() as i64,
        ]
    }

    pub fn cell(&self, c: CellKey) -> &[(u32, u32)] {
        self.cells.get(&c).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All entries in the 3x3x3 block of cells around `c`.
    pub fn neighborhood(&self, c: CellKey) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    out.extend_from_slice(self.cell([c[0] + dx, c[1] + dy, c[2] + dz]));
                }
            }
        }
        out
    }

    fn owner(&self, o: usize) -> Result<&Owner, SpatialError> {
        let owner = self.owners.get(o).ok_or(SpatialError::UnknownOwner(o))?;
        if owner.keys.is_empty() {
            return Err(SpatialError::EmptyPointSet(o));
        }
        Ok(owner)
    }

    /// Smallest squared key distance from any of `query` to owner `target`,
    /// considering only pairs within `cutoff` meters.
    fn best_sq(&self, query: &[VoxelKey], target: usize, cutoff: f64, offsets: &OffsetTable) -> Option<i64> {
        let bounds = self.owners[target].bounds?;
        let t = target as u32;
        let mut best: Option<i64> = None;
        let mut bound = cutoff;
        for &q in query {
            let qp = voxel_center(q, self.pitch);
            if !within(bounds.distance_to_point(qp), bound) {
                continue;
            }
            let cq = self.cell_of(q);
            for &(off, lb) in &offsets.entries {
                if !within(lb, bound) {
                    break;
                }
                let Some(entries) = self.cells.get(&[cq[0] + off[0], cq[1] + off[1], cq[2] + off[2]]) else {
                    continue;
                };
                let start = entries.partition_point(|e| e.0 < t);
                for &(o, pi) in entries[start..].iter().take_while(|e| e.0 == t) {
                    let d2 = key_dist2(q, self.owners[o as usize].keys[pi as usize]);
                    if best.is_none_or(|b| d2 < b) {
                        best = Some(d2);
                        bound = bound.min(self.pitch * (d2 as f64).sqrt());
                    }
                }
            }
            if best == Some(0) {
                break;
            }
        }
        best.filter(|&b| within(self.pitch * (b as f64).sqrt(), cutoff))
    }

    /// Exact minimum point distance between indexed owners `a` and `b`,
    /// or `None` when it exceeds `cutoff`.
    pub fn min_distance(&self, a: usize, b: usize, cutoff: f64) -> Result<Option<f64>, SpatialError> {
        let table = OffsetTable::new(self.cell_size, cutoff);
        self.min_distance_with(a, b, cutoff, &table)
    }

    pub fn min_distance_with(
        &self,
        a: usize,
        b: usize,
        cutoff: f64,
        offsets: &OffsetTable,
    ) -> Result<Option<f64>, SpatialError> {
        let oa = self.owner(a)?;
        let ob = self.owner(b)?;
        // iterate the smaller set against the larger one
        let (query, target) = if oa.keys.len() <= ob.keys.len() { (a, b) } else { (b, a) };
        let sq = self.best_sq(&self.owners[query].keys, target, cutoff, offsets);
        Ok(sq.map(|s| self.pitch * (s as f64).sqrt()))
    }

    /// Exact minimum distance from an external point set to owner `target`.
    pub fn min_distance_to(
        &self,
        query: &PointSet,
        target: usize,
        cutoff: f64,
        offsets: &OffsetTable,
    ) -> Result<Option<f64>, SpatialError> {
        self.owner(target)?;
        if query.is_empty() {
            return Err(SpatialError::EmptyPointSet(usize::MAX));
        }
        if query.grid_pitch != self.pitch {
            return Err(SpatialError::PitchMismatch(self.pitch, query.grid_pitch));
        }
        let sq = self.best_sq(&query.keys, target, cutoff, offsets);
        Ok(sq.map(|s| self.pitch * (s as f64).sqrt()))
    }

    /// Owners whose bounding boxes come within `radius` of `b`.
    pub fn owners_near(&self, b: &Box3, radius: f64) -> Vec<usize> {
        self.owners
            .iter()
            .enumerate()
            .filter(|(_, o)| o.bounds.is_some_and(|ob| within(ob.distance_to_box(b), radius)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Candidate owner pairs `(a, b)`, `a < b`, whose boxes are within `cutoff`.
    fn candidate_pairs(&self, cutoff: f64) -> Vec<(usize, usize)> {
        let mut order: Vec<(usize, Box3)> = self
            .owners
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.bounds.map(|b| (i, b)))
            .collect();
        order.sort_by(|x, y| x.1.min.x.total_cmp(&y.1.min.x).then(x.0.cmp(&y.0)));
        let mut pairs = Vec::new();
        for (n, (i, bi)) in order.iter().enumerate() {
            for (j, bj) in &order[n + 1..] {
                if !within(bj.min.x - bi.max.x, cutoff) {
                    break;
                }
                if within(bi.distance_to_box(bj), cutoff) {
                    pairs.push(((*i).min(*j), (*i).max(*j)));
                }
            }
        }
        pairs.sort_unstable();
        pairs
    }

    /// Every owner pair whose minimum distance is within `cutoff`.
    pub fn pairwise_min_distances(&self, cutoff: f64) -> SparseDistanceMap {
        let table = OffsetTable::new(self.cell_size, cutoff);
        let found: Vec<((usize, usize), f64)> = self
            .candidate_pairs(cutoff)
            .into_par_iter()
            .filter_map(|(a, b)| {
                self.min_distance_with(a, b, cutoff, &table)
                    .ok()
                    .flatten()
                    .map(|d| ((a, b), d))
            })
            .collect();
        SparseDistanceMap {
            cutoff,
            entries: found.into_iter().collect(),
        }
    }
}

/// Grid over the merged points of mesh groups; owner id = position in `groups`.
pub fn build_grid(groups: &[MeshGroup], cell_size: f64) -> Result<GridIndex, SpatialError> {
    let sets: Vec<&PointSet> = groups.iter().map(|g| &g.merged_points).collect();
    GridIndex::build(&sets, cell_size)
}

pub fn min_distance(
    a: &MeshGroup,
    b: &MeshGroup,
    grid: &GridIndex,
    cutoff: f64,
) -> Result<Option<f64>, SpatialError> {
    grid.min_distance(a.id, b.id, cutoff)
}

pub fn pairwise_min_distances(grid: &GridIndex, cutoff: f64) -> SparseDistanceMap {
    grid.pairwise_min_distances(cutoff)
}

/// Minimum distances for the group pairs that lie within `cutoff`.
/// Keys are `(a, b)` with `a < b`; absent pairs are farther than `cutoff`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseDistanceMap {
    pub cutoff: f64,
    pub entries: BTreeMap<(usize, usize), f64>,
}

#[derive(Serialize, Deserialize)]
struct DistanceEntry {
    a: usize,
    b: usize,
    distance: f64,
}

#[derive(Serialize, Deserialize)]
struct DistanceMapDoc {
    cutoff: f64,
    entries: Vec<DistanceEntry>,
}

impl Serialize for SparseDistanceMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        DistanceMapDoc {
            cutoff: self.cutoff,
            entries: self
                .entries
                .iter()
                .map(|(&(a, b), &distance)| DistanceEntry { a, b, distance })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SparseDistanceMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = DistanceMapDoc::deserialize(d)?;
        let mut map = SparseDistanceMap::new(doc.cutoff);
        for e in doc.entries {
            map.insert(e.a, e.b, e.distance);
        }
        Ok(map)
    }
}

impl SparseDistanceMap {
    pub fn new(cutoff: f64) -> Self {
        Self {
            cutoff,
            entries: BTreeMap::new(),
        }
    }

    /// Stores `d` under the unordered pair; ignored when `d` exceeds the cutoff.
    pub fn insert(&mut self, a: usize, b: usize, d: f64) {
        if within(d, self.cutoff) {
            self.entries.insert((a.min(b), a.max(b)), d);
        }
    }

    pub fn get(&self, a: usize, b: usize) -> Option<f64> {
        self.entries.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(a, b), &d)| (a, b, d))
    }
}

/// Pairs at distance not larger than `epsilon`.
pub fn adjacency_pairs(d: &SparseDistanceMap, epsilon: f64) -> Result<Vec<(usize, usize)>, SpatialError> {
    if !within(epsilon, d.cutoff) {
        return Err(SpatialError::EpsilonExceedsCutoff {
            epsilon,
            cutoff: d.cutoff,
        });
    }
    Ok(d.iter().filter(|&(_, _, dist)| within(dist, epsilon)).map(|(a, b, _)| (a, b)).collect())
}
