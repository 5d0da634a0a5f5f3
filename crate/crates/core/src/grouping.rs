//! Merging of sub-threshold meshes into their nearest large neighbour.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{centroid, GeometryError, MeshGeometry, PointSet};
use crate::math::{Box3, Vec3};
use crate::spatial_index::{within, GridIndex, OffsetTable, SpatialError};

/// 1 cm^3.
pub const DEFAULT_VOLUME_THRESHOLD: f64 = 1e-6;
pub const DEFAULT_R_MAX: f64 = 0.10;

#[derive(Debug, Error, PartialEq)]
pub enum GroupingError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
}

/// A scene-graph node candidate: one large mesh plus the small meshes merged into it.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshGroup {
    pub id: usize,
    pub representative_path: String,
    /// Sorted; always contains `representative_path`.
    pub member_paths: Vec<String>,
    pub merged_points: PointSet,
    pub aabb: Box3,
    pub centroid: Vec3,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Classification {
    pub small: Vec<String>,
    pub large: Vec<String>,
}

fn is_small(g: &MeshGeometry, v_thresh: f64) -> bool {
    within(g.volume, v_thresh)
}

/// Splits meshes at `v_thresh`; a volume equal to the threshold counts as small.
pub fn classify_meshes(geoms: &[MeshGeometry], v_thresh: f64) -> Classification {
    let mut c = Classification::default();
    for g in geoms {
        if is_small(g, v_thresh) {
            c.small.push(g.path.clone());
        } else {
            c.large.push(g.path.clone());
        }
    }
    c.small.sort();
    c.large.sort();
    c
}

/// Where one small mesh ended up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub small: String,
    /// `None` when no large mesh lies within `r_max` (the mesh was promoted).
    pub target: Option<String>,
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupingOutcome {
    pub groups: Vec<MeshGroup>,
    pub assignments: Vec<Assignment>,
}

impl GroupingOutcome {
    pub fn promoted(&self) -> impl Iterator<Item = &str> {
        self.assignments
            .iter()
            .filter(|a| a.target.is_none())
            .map(|a| a.small.as_str())
    }
}

fn make_group(id: usize, members: &[&MeshGeometry]) -> Result<MeshGroup, GeometryError> {
    let mut sorted: Vec<&MeshGeometry> = members.to_vec();
    sorted.sort_by(|a, b| a.path.cmp(&b.path));
    let representative_path = members[0].path.clone();
    let merged_points = PointSet::union_of(sorted.iter().map(|g| &g.points), representative_path.clone())?;
    let aabb = sorted[1..].iter().fold(sorted[0].aabb, |acc, g| acc.union(&g.aabb));
    Ok(MeshGroup {
        id,
        centroid: centroid(&merged_points)?,
        member_paths: sorted.iter().map(|g| g.path.clone()).collect(),
        representative_path,
        merged_points,
        aabb,
    })
}

/// Assigns every small mesh to the large mesh with the smallest surface-point
/// distance, provided it is within `r_max`; ties go to the lexicographically
/// smallest large path. Unmatched small meshes become groups of their own.
/// Group ids follow the order of representative paths.
pub fn group_small_meshes(geoms: &[MeshGeometry], v_thresh: f64, r_max: f64) -> Result<GroupingOutcome, GroupingError> {
    let mut large: Vec<&MeshGeometry> = geoms.iter().filter(|g| !is_small(g, v_thresh)).collect();
    let mut small: Vec<&MeshGeometry> = geoms.iter().filter(|g| is_small(g, v_thresh)).collect();
    large.sort_by(|a, b| a.path.cmp(&b.path));
    small.sort_by(|a, b| a.path.cmp(&b.path));

    let mut assignments = Vec::with_capacity(small.len());
    if !small.is_empty() && !large.is_empty() {
        let sets: Vec<&PointSet> = large.iter().map(|g| &g.points).collect();
        let grid = GridIndex::build(&sets, sets[0].grid_pitch)?;
        let table = OffsetTable::new(grid.cell_size(), r_max);
        let found: Vec<Result<Option<(usize, f64)>, SpatialError>> = small
            .par_iter()
            .map(|s| {
                let mut best: Option<(usize, f64)> = None;
                let bounds = Box3::from_points(s.points.points.iter().copied()).unwrap_or(s.aabb);
                // candidates come back in ascending owner order = ascending path order
                for cand in grid.owners_near(&bounds, r_max) {
                    if let Some(d) = grid.min_distance_to(&s.points, cand, r_max, &table)? {
                        if best.is_none_or(|(_, bd)| d < bd) {
                            best = Some((cand, d));
                        }
                    }
                }
                Ok(best)
            })
            .collect();
        for (s, r) in small.iter().zip(found) {
            let hit = r?;
            assignments.push(Assignment {
                small: s.path.clone(),
                target: hit.map(|(i, _)| large[i].path.clone()),
                distance: hit.map(|(_, d)| d),
            });
        }
    } else {
        assignments.extend(small.iter().map(|s| Assignment {
            small: s.path.clone(),
            target: None,
            distance: None,
        }));
    }

    // anchor path -> members (anchor first)
    let by_path: BTreeMap<&str, &MeshGeometry> = geoms.iter().map(|g| (g.path.as_str(), g)).collect();
    let mut members: BTreeMap<&str, Vec<&MeshGeometry>> = BTreeMap::new();
    for g in &large {
        members.insert(&g.path, vec![*g]);
    }
    for a in &assignments {
        let g = by_path[a.small.as_str()];
        match &a.target {
            Some(t) => members.get_mut(t.as_str()).expect("target is a large mesh").push(g),
            None => {
                members.insert(&g.path, vec![g]);
            }
        }
    }
    let groups = members
        .values()
        .enumerate()
        .map(|(id, m)| make_group(id, m))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GroupingOutcome { groups, assignments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{mesh_geometry, SamplingOptions};
    use crate::scene_io::Mesh;

    fn cube(path: &str, min: Vec3, size: f64) -> MeshGeometry {
        let mut v = Vec::new();
        for i in 0..8 {
            v.push(
                min + Vec3::new(
                    (i & 1) as f64 * size,
                    ((i >> 1) & 1) as f64 * size,
                    ((i >> 2) & 1) as f64 * size,
                ),
            );
        }
        let faces = vec![
            [0, 1, 3],
            [0, 3, 2],
            [4, 5, 7],
            [4, 7, 6],
            [0, 1, 5],
            [0, 5, 4],
            [2, 3, 7],
            [2, 7, 6],
            [0, 2, 6],
            [0, 6, 4],
            [1, 3, 7],
            [1, 7, 5],
        ];
        mesh_geometry(&Mesh::new(path, v, faces), &SamplingOptions::default()).unwrap()
    }

    #[test]
    fn classification_boundary_goes_small() {
        let bolt = cube("/bolt", Vec3::new(0.001, 0.001, 0.001), 0.008);
        let pipe = cube("/pipe", Vec3::ZERO, 0.4);
        let exact = MeshGeometry {
            volume: 1e-6,
            ..bolt.clone()
        };
        let c = classify_meshes(&[bolt.clone(), pipe], 1e-6);
        assert_eq!(c.small, vec!["/bolt".to_string()]);
        assert_eq!(c.large, vec!["/pipe".to_string()]);
        assert!(classify_meshes(&[exact], 1e-6).large.is_empty());
    }

    #[test]
    fn no_small_meshes_is_identity() {
        let g = vec![cube("/a", Vec3::ZERO, 0.2), cube("/b", Vec3::new(1.0, 0.0, 0.0), 0.2)];
        let out = group_small_meshes(&g, 1e-6, 0.1).unwrap();
        assert_eq!(out.groups.len(), 2);
        assert!(out.assignments.is_empty());
        assert_eq!(out.groups[1].member_paths, vec!["/b".to_string()]);
    }

    #[test]
    fn bolt_joins_nearest_pipe() {
        // bolt voxel center x = 0.225; A's face snaps to 0.205, B's to 0.275
        let a = cube("/pipe_a", Vec3::ZERO, 0.2);
        let bolt = cube("/bolt", Vec3::new(0.2205, 0.05, 0.05), 0.007);
        let b = cube("/pipe_b", Vec3::new(0.2785, 0.0, 0.0), 0.2);
        let out = group_small_meshes(&[a, bolt, b], 1e-6, 0.1).unwrap();
        assert_eq!(out.groups.len(), 2);
        assert_eq!(out.groups[0].member_paths, vec!["/bolt".to_string(), "/pipe_a".to_string()]);
        assert_eq!(out.assignments[0].target.as_deref(), Some("/pipe_a"));
    }

    #[test]
    fn isolated_small_is_promoted() {
        let a = cube("/a", Vec3::ZERO, 0.2);
        let bolt = cube("/bolt", Vec3::new(2.0, 0.0, 0.0), 0.005);
        let out = group_small_meshes(&[a, bolt], 1e-6, 0.1).unwrap();
        assert_eq!(out.groups.len(), 2);
        assert_eq!(out.promoted().collect::<Vec<_>>(), vec!["/bolt"]);
        assert_eq!(out.groups[1].representative_path, "/bolt");
    }

    #[test]
    fn equidistant_tie_goes_to_smaller_path() {
        // both faces snap two voxels away from the bolt's voxel
        let a = cube("/z_pipe", Vec3::new(-0.212, 0.0, 0.0), 0.2);
        let b = cube("/a_pipe", Vec3::new(0.025, 0.0, 0.0), 0.2);
        let bolt = cube("/bolt", Vec3::new(0.001, 0.001, 0.001), 0.008);
        let out = group_small_meshes(&[a, b, bolt], 1e-6, 0.1).unwrap();
        let hit = &out.assignments[0];
        assert_eq!(hit.target.as_deref(), Some("/a_pipe"), "{hit:?}");
    }

    #[test]
    fn merged_box_contains_members() {
        let a = cube("/pipe_a", Vec3::ZERO, 0.2);
        let bolt = cube("/bolt", Vec3::new(0.2005, 0.05, 0.05), 0.007);
        let out = group_small_meshes(&[a.clone(), bolt.clone()], 1e-6, 0.1).unwrap();
        let g = &out.groups[0];
        assert!(g.aabb.contains_box(&a.aabb) && g.aabb.contains_box(&bolt.aabb));
        assert!(g.member_paths.contains(&g.representative_path));
    }
}
