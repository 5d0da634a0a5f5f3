//! Low-poly primitives. Rings are computed by one function so that pieces
//! sharing a station produce bit-identical contact vertices.

use std::f64::consts::TAU;

use crate::math::Vec3;

#[derive(Debug, Clone, Default)]
pub(super) struct MeshData {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl MeshData {
    pub fn append(&mut self, other: MeshData) {
        let base = self.vertices.len() as u32;
        self.vertices.extend(other.vertices);
        self.faces
            .extend(other.faces.into_iter().map(|f| f.map(|i| i + base)));
    }
}

/// Unit vectors `(u, w)` spanning the plane normal to `axis`. `u` points as
/// far up (+z) as possible, or along +x for vertical axes.
pub(super) fn basis(axis: Vec3) -> (Vec3, Vec3) {
    let up = Vec3::new(0.0, 0.0, 1.0);
    let u = (up - axis * up.dot(axis))
        .normalized()
        .filter(|_| axis.cross(up).norm() > 1e-9)
        .unwrap_or_else(|| {
            let x = Vec3::new(1.0, 0.0, 0.0);
            (x - axis * x.dot(axis)).normalized().expect("axis is a unit vector")
        });
    (u, axis.cross(u))
}

/// `sides` points around `center`; point 0 lies along `u` of [`basis`].
pub(super) fn ring(center: Vec3, axis: Vec3, radius: f64, sides: usize) -> Vec<Vec3> {
    let (u, w) = basis(axis);
    (0..sides)
        .map(|k| {
            let a = TAU * k as f64 / sides as f64;
            center + u * (radius * a.cos()) + w * (radius * a.sin())
        })
        .collect()
}

/// Closed tube through equal-size rings; the end caps fan to `caps`.
pub(super) fn tube_from_rings(rings: Vec<Vec<Vec3>>, caps: (Vec3, Vec3)) -> MeshData {
    let n = rings[0].len() as u32;
    let count = rings.len() as u32;
    let mut vertices: Vec<Vec3> = rings.into_iter().flatten().collect();
    let first = vertices.len() as u32;
    vertices.push(caps.0);
    vertices.push(caps.1);
    let mut faces = Vec::new();
    for j in 0..count - 1 {
        for k in 0..n {
            let (a, b) = (j * n + k, j * n + (k + 1) % n);
            let (c, d) = (a + n, b + n);
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    let last = (count - 1) * n;
    for k in 0..n {
        faces.push([first, (k + 1) % n, k]);
        faces.push([first + 1, last + k, last + (k + 1) % n]);
    }
    MeshData { vertices, faces }
}

/// Prism with one ring per station, capped at the first and last station.
pub(super) fn tube(stations: &[Vec3], axis: Vec3, radius: f64, sides: usize) -> MeshData {
    let rings = stations.iter().map(|&c| ring(c, axis, radius, sides)).collect();
    tube_from_rings(rings, (stations[0], stations[stations.len() - 1]))
}

/// Axis-aligned cube.
pub(super) fn cube(center: Vec3, half: f64) -> MeshData {
    let vertices = (0..8)
        .map(|i| {
            let s = |bit: usize| if i & bit != 0 { half } else { -half };
            center + Vec3::new(s(1), s(2), s(4))
        })
        .collect();
    let faces = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    MeshData { vertices, faces }
}

/// Horizontal rectangle at height `z`.
pub(super) fn quad(min: Vec3, max: Vec3, z: f64) -> MeshData {
    MeshData {
        vertices: vec![
            Vec3::new(min.x, min.y, z),
            Vec3::new(max.x, min.y, z),
            Vec3::new(max.x, max.y, z),
            Vec3::new(min.x, max.y, z),
        ],
        faces: vec![[0, 1, 2], [0, 2, 3]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_orthonormal_and_points_up() {
        for axis in [
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(0.6, 0.0, 0.8),
        ] {
            let (u, w) = basis(axis);
            assert!((u.norm() - 1.0).abs() < 1e-12 && (w.norm() - 1.0).abs() < 1e-12);
            assert!(u.dot(axis).abs() < 1e-12 && w.dot(axis).abs() < 1e-12 && u.dot(w).abs() < 1e-12);
        }
        assert_eq!(basis(Vec3::new(1.0, 0.0, 0.0)).0, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn tube_is_closed() {
        let m = tube(
            &[Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)],
            Vec3::new(1.0, 0.0, 0.0),
            0.1,
            6,
        );
        assert_eq!(m.vertices.len(), 20);
        assert_eq!(m.faces.len(), 2 * 2 * 6 + 2 * 6);
        // every undirected edge is shared by exactly two faces
        let mut edges = std::collections::BTreeMap::new();
        for f in &m.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 2));
        let c = cube(Vec3::ZERO, 1.0);
        assert_eq!(c.faces.len(), 12);
    }
}
