//! Per-mesh geometric reductions.
//!
//! Every mesh is reduced to a [`PointSet`]: its vertices and points sampled
//! along its triangle edges, snapped to the centers of a world-anchored voxel
//! grid and deduplicated. Point sets are the only geometry used for
//! inter-mesh distances.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{Box3, Vec3};
use crate::scene_io::{Mesh, Scene};

pub const DEFAULT_PITCH: f64 = 0.01;

/// Integer voxel coordinates on a grid anchored at the world origin.
pub type VoxelKey = [i64; 3];

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("mesh {0} has no vertices")]
    EmptyMesh(String),
    #[error("grid pitch must be positive and finite, got {0}")]
    InvalidPitch(f64),
    #[error("point sets use different grid pitches ({0} vs {1})")]
    PitchMismatch(f64, f64),
}

pub fn voxel_key(p: Vec3, pitch: f64) -> VoxelKey {
    [
        (p.x / pitch).floor() as i64,
        (p.y / pitch).floor() as i64,
        (p.z / pitch).floor() as i64,
    ]
}

pub fn voxel_center(k: VoxelKey, pitch: f64) -> Vec3 {
    Vec3::new(
        (k[0] as f64 + 0.5) * pitch,
        (k[1] as f64 + 0.5) * pitch,
        (k[2] as f64 + 0.5) * pitch,
    )
}

fn check_pitch(pitch: f64) -> Result<(), GeometryError> {
    if pitch > 0.0 && pitch.is_finite() {
        Ok(())
    } else {
        Err(GeometryError::InvalidPitch(pitch))
    }
}

/// Voxel-snapped, deduplicated points of one mesh (or mesh group).
///
/// `keys` is sorted and unique; `points[i]` is the center of `keys[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub points: Vec<Vec3>,
    #[serde(skip)]
    pub keys: Vec<VoxelKey>,
    pub source_mesh: String,
    pub grid_pitch: f64,
}

impl PointSet {
    pub fn from_keys(keys: BTreeSet<VoxelKey>, source_mesh: impl Into<String>, pitch: f64) -> Self {
        let keys: Vec<VoxelKey> = keys.into_iter().collect();
        let points = keys.iter().map(|&k| voxel_center(k, pitch)).collect();
        Self {
            points,
            keys,
            source_mesh: source_mesh.into(),
            grid_pitch: pitch,
        }
    }

    /// Snaps arbitrary points onto the grid.
    pub fn snap<I: IntoIterator<Item = Vec3>>(points: I, source_mesh: impl Into<String>, pitch: f64) -> Self {
        let keys = points.into_iter().map(|p| voxel_key(p, pitch)).collect();
        Self::from_keys(keys, source_mesh, pitch)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key_set(&self) -> BTreeSet<VoxelKey> {
        self.keys.iter().copied().collect()
    }

    /// Deduplicated union of several point sets on the same grid.
    pub fn union_of<'a, I>(sets: I, source_mesh: impl Into<String>) -> Result<Self, GeometryError>
    where
        I: IntoIterator<Item = &'a PointSet>,
    {
        let mut keys = BTreeSet::new();
        let mut pitch: Option<f64> = None;
        for s in sets {
            match pitch {
                Some(p) if p != s.grid_pitch => return Err(GeometryError::PitchMismatch(p, s.grid_pitch)),
                _ => pitch = Some(s.grid_pitch),
            }
            keys.extend(s.keys.iter().copied());
        }
        Ok(Self::from_keys(keys, source_mesh, pitch.unwrap_or(DEFAULT_PITCH)))
    }

    /// Recomputes `keys` from `points` (used after deserialization).
    pub fn rekey(&mut self) {
        let set: BTreeSet<VoxelKey> = self.points.iter().map(|&p| voxel_key(p, self.grid_pitch)).collect();
        *self = Self::from_keys(set, std::mem::take(&mut self.source_mesh), self.grid_pitch);
    }
}

/// Evenly spaced points on segment `a`-`b`, endpoints included:
/// `ceil(L / spacing) + 1` points, or one point for a zero-length segment.
pub fn sample_segment(a: Vec3, b: Vec3, spacing: f64) -> Vec<Vec3> {
    let len = a.distance(b);
    let n = (len / spacing).ceil() as usize;
    if n == 0 {
        return vec![a];
    }
    (0..=n).map(|i| a.lerp(b, i as f64 / n as f64)).collect()
}

/// Barycentric lattice covering the triangle interior with at most `spacing`
/// between neighbouring lattice points.
pub fn sample_triangle_interior(a: Vec3, b: Vec3, c: Vec3, spacing: f64) -> Vec<Vec3> {
    let longest = a.distance(b).max(b.distance(c)).max(c.distance(a));
    let n = (longest / spacing).ceil() as usize;
    if n == 0 {
        return vec![a];
    }
    let mut out = Vec::with_capacity((n + 1) * (n + 2) / 2);
    for i in 0..=n {
        for j in 0..=(n - i) {
            out.push(a + (b - a) * (i as f64 / n as f64) + (c - a) * (j as f64 / n as f64));
        }
    }
    out
}

pub fn voxelize_vertices(mesh: &Mesh, pitch: f64) -> Result<PointSet, GeometryError> {
    check_pitch(pitch)?;
    if mesh.vertices.is_empty() {
        return Err(GeometryError::EmptyMesh(mesh.path.clone()));
    }
    Ok(PointSet::snap(mesh.vertices.iter().copied(), mesh.path.clone(), pitch))
}

fn face_samples(mesh: &Mesh, spacing: f64, fill_interior: bool) -> BTreeSet<VoxelKey> {
    let mut keys = BTreeSet::new();
    for f in &mesh.faces {
        let [a, b, c] = mesh.triangle(f);
        for (p, q) in [(a, b), (b, c), (c, a)] {
            keys.extend(sample_segment(p, q, spacing).into_iter().map(|s| voxel_key(s, spacing)));
        }
        if fill_interior {
            keys.extend(
                sample_triangle_interior(a, b, c, spacing)
                    .into_iter()
                    .map(|s| voxel_key(s, spacing)),
            );
        }
    }
    keys
}

/// Points along every triangle edge at `spacing`, snapped at pitch `spacing`.
pub fn sample_face_edges(mesh: &Mesh, spacing: f64) -> Result<PointSet, GeometryError> {
    check_pitch(spacing)?;
    if mesh.vertices.is_empty() {
        return Err(GeometryError::EmptyMesh(mesh.path.clone()));
    }
    Ok(PointSet::from_keys(face_samples(mesh, spacing, false), mesh.path.clone(), spacing))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    pub pitch: f64,
    /// Also fill triangle interiors, not only their edges.
    pub fill_interior: bool,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            pitch: DEFAULT_PITCH,
            fill_interior: false,
        }
    }
}

/// Union of the voxelized vertices and the edge samples.
pub fn surface_points(mesh: &Mesh, pitch: f64) -> Result<PointSet, GeometryError> {
    surface_points_with(
        mesh,
        &SamplingOptions {
            pitch,
            fill_interior: false,
        },
    )
}

pub fn surface_points_with(mesh: &Mesh, opts: &SamplingOptions) -> Result<PointSet, GeometryError> {
    check_pitch(opts.pitch)?;
    if mesh.vertices.is_empty() {
        return Err(GeometryError::EmptyMesh(mesh.path.clone()));
    }
    let mut keys: BTreeSet<VoxelKey> = mesh.vertices.iter().map(|&v| voxel_key(v, opts.pitch)).collect();
    keys.extend(face_samples(mesh, opts.pitch, opts.fill_interior));
    Ok(PointSet::from_keys(keys, mesh.path.clone(), opts.pitch))
}

/// Component-wise bounds of the raw vertices.
pub fn aabb(mesh: &Mesh) -> Result<Box3, GeometryError> {
    Box3::from_points(mesh.vertices.iter().copied()).ok_or_else(|| GeometryError::EmptyMesh(mesh.path.clone()))
}

/// Arithmetic mean of the deduplicated points.
pub fn centroid(points: &PointSet) -> Result<Vec3, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyMesh(points.source_mesh.clone()));
    }
    let sum = points.points.iter().fold(Vec3::ZERO, |acc, &p| acc + p);
    Ok(sum / points.len() as f64)
}

/// Product of box extents, each extent clamped to at least one `pitch`.
pub fn volume_proxy(b: &Box3, pitch: f64) -> f64 {
    let e = b.extents();
    e.x.max(pitch) * e.y.max(pitch) * e.z.max(pitch)
}

/// Geometry of one active mesh, as consumed by grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshGeometry {
    pub path: String,
    pub points: PointSet,
    pub aabb: Box3,
    pub volume: f64,
}

pub fn mesh_geometry(mesh: &Mesh, opts: &SamplingOptions) -> Result<MeshGeometry, GeometryError> {
    let points = surface_points_with(mesh, opts)?;
    let bounds = aabb(mesh)?;
    Ok(MeshGeometry {
        path: mesh.path.clone(),
        volume: volume_proxy(&bounds, opts.pitch),
        aabb: bounds,
        points,
    })
}

/// Geometry for every active (non-excluded, non-ground) mesh, in scene order.
pub fn scene_geometry(scene: &Scene, opts: &SamplingOptions) -> Result<Vec<MeshGeometry>, GeometryError> {
    let active: Vec<&Mesh> = scene.active_meshes().collect();
    active.par_iter().map(|m| mesh_geometry(m, opts)).collect()
}
