//! Deterministic software rasterizer for the labeling images.
//!
//! Perspective camera, near-plane clipping, z-buffer, flat shading by the
//! absolute cosine between face normal and a fixed light direction.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{Box3, Vec3};
use crate::scene_io::Scene;

pub const DEFAULT_RESOLUTION: u32 = 512;
pub const DEFAULT_VFOV_DEG: f64 = 60.0;
pub const DEFAULT_ELEVATION_DEG: f64 = 30.0;
pub const DEFAULT_AZIMUTHS_DEG: [f64; 3] = [0.0, 120.0, 240.0];
pub const MIN_CAMERA_DISTANCE: f64 = 0.5;

pub const BACKGROUND: [u8; 3] = [128, 128, 128];
const BASE_COLOR: [f64; 3] = [200.0, 200.0, 205.0];
const HIGHLIGHT_COLOR: [f64; 3] = [230.0, 40.0, 30.0];
const AMBIENT: f64 = 0.25;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),
    #[error("nothing to render: visible set is empty")]
    EmptyVisibleSet,
    #[error("mesh {0} is not in the scene")]
    UnknownMesh(String),
    #[error("png encoding failed: {0}")]
    Png(String),
    #[error("could not write {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub eye: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    /// Radians.
    pub vertical_fov: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraView {
    pub fn new(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        Self {
            eye,
            target,
            up,
            vertical_fov: DEFAULT_VFOV_DEG.to_radians(),
            width: DEFAULT_RESOLUTION,
            height: DEFAULT_RESOLUTION,
        }
    }

    /// Right, up and forward unit vectors.
    fn basis(&self) -> Result<(Vec3, Vec3, Vec3), RenderError> {
        if !(self.eye.is_finite() && self.target.is_finite() && self.up.is_finite()) {
            return Err(RenderError::InvalidCamera("non-finite coordinates"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::InvalidCamera("zero resolution"));
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI) {
            return Err(RenderError::InvalidCamera("field of view outside (0, pi)"));
        }
        let f = (self.target - self.eye)
            .normalized()
            .ok_or(RenderError::InvalidCamera("eye equals target"))?;
        let side = f.cross(self.up);
        if side.norm() <= 1e-9 * self.up.norm() {
            return Err(RenderError::InvalidCamera("up is parallel to the view direction"));
        }
        let r = side / side.norm();
        Ok((r, r.cross(f), f))
    }
}

/// Three cameras orbiting the box center at fixed azimuths, looking at `centroid`.
pub fn default_views(aabb: &Box3, centroid: Vec3) -> [CameraView; 3] {
    let dist = (2.0 * aabb.diagonal()).max(MIN_CAMERA_DISTANCE);
    let el = DEFAULT_ELEVATION_DEG.to_radians();
    let c = aabb.center();
    DEFAULT_AZIMUTHS_DEG.map(|az| {
        let az = az.to_radians();
        let dir = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        CameraView::new(c + dir * dist, centroid, Vec3::new(0.0, 0.0, 1.0))
    })
}

/// 8-bit RGB image, rows top to bottom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        let rgb = fill.repeat((width * height) as usize);
        Self { width, height, rgb }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y * self.width + x) as usize;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    fn set(&mut self, i: usize, c: [u8; 3]) {
        self.rgb[3 * i..3 * i + 3].copy_from_slice(&c);
    }

    pub fn try_to_png(&self) -> Result<Vec<u8>, RenderError> {
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut buf, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| RenderError::Png(e.to_string()))?;
            w.write_image_data(&self.rgb).map_err(|e| RenderError::Png(e.to_string()))?;
        }
        Ok(buf)
    }

    pub fn to_png(&self) -> Vec<u8> {
        self.try_to_png().expect("in-memory png encoding")
    }

    pub fn write_png(&self, path: &Path) -> Result<(), RenderError> {
        std::fs::write(path, self.try_to_png()?).map_err(|e| RenderError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RenderWarning {
    /// Nothing that should be seen landed on a pixel.
    NothingVisible,
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: Image,
    /// Scene mesh index that owns each pixel, row-major.
    pub owner: Vec<Option<u32>>,
    /// Camera-space depth per pixel (`f64::INFINITY` for background).
    pub depth: Vec<f64>,
    pub warning: Option<RenderWarning>,
}

impl Rendered {
    pub fn owner_at(&self, x: u32, y: u32) -> Option<u32> {
        self.owner[(y * self.image.width + x) as usize]
    }
}

fn light_dir() -> Vec3 {
    Vec3::new(0.4, 0.3, 0.866).normalized().expect("nonzero")
}

#[derive(Clone, Copy)]
struct ClipVert {
    cam: Vec3,
}

/// Sutherland-Hodgman against z >= near.
fn clip_near(tri: [Vec3; 3], near: f64) -> Vec<ClipVert> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let ain = a.z >= near;
        let bin = b.z >= near;
        if ain {
            out.push(ClipVert { cam: a });
        }
        if ain != bin {
            let t = (near - a.z) / (b.z - a.z);
            out.push(ClipVert { cam: a.lerp(b, t) });
        }
    }
    out
}

struct Raster<'a> {
    w: u32,
    h: u32,
    focal: f64,
    inv_depth: &'a mut [f64],
    owner: &'a mut [Option<u32>],
    image: &'a mut Image,
}

impl Raster<'_> {
    fn project(&self, p: Vec3) -> (f64, f64, f64) {
        let iz = 1.0 / p.z;
        (
            self.w as f64 / 2.0 + p.x * iz * self.focal,
            self.h as f64 / 2.0 - p.y * iz * self.focal,
            iz,
        )
    }

    fn triangle(&mut self, v: [(f64, f64, f64); 3], color: [u8; 3], id: u32) {
        let edge = |a: (f64, f64, f64), b: (f64, f64, f64), px: f64, py: f64| {
            (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0)
        };
        let mut v = v;
        let mut area = edge(v[0], v[1], v[2].0, v[2].1);
        if area == 0.0 || !area.is_finite() {
            return;
        }
        if area < 0.0 {
            v.swap(1, 2);
            area = -area;
        }
        // edges with this orientation own their boundary pixels
        let owns = |a: (f64, f64, f64), b: (f64, f64, f64)| {
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            dy < 0.0 || (dy == 0.0 && dx > 0.0)
        };
        let e = [(v[1], v[2]), (v[2], v[0]), (v[0], v[1])];
        let own = e.map(|(a, b)| owns(a, b));
        let xs = [v[0].0, v[1].0, v[2].0];
        let ys = [v[0].1, v[1].1, v[2].1];
        let fmin = |a: [f64; 3]| a[0].min(a[1]).min(a[2]);
        let fmax = |a: [f64; 3]| a[0].max(a[1]).max(a[2]);
        let x0 = (fmin(xs) - 0.5).floor().max(0.0) as i64;
        let x1 = ((fmax(xs) - 0.5).ceil() as i64).min(self.w as i64 - 1);
        let y0 = (fmin(ys) - 0.5).floor().max(0.0) as i64;
        let y1 = ((fmax(ys) - 0.5).ceil() as i64).min(self.h as i64 - 1);
        for py in y0..=y1 {
            let cy = py as f64 + 0.5;
            for px in x0..=x1 {
                let cx = px as f64 + 0.5;
                let mut w = [0.0; 3];
                let mut inside = true;
                for k in 0..3 {
                    w[k] = edge(e[k].0, e[k].1, cx, cy);
                    if w[k] < 0.0 || (w[k] == 0.0 && !own[k]) {
                        inside = false;
                        break;
                    }
                }
                if !inside {
                    continue;
                }
                let iz = (w[0] * v[0].2 + w[1] * v[1].2 + w[2] * v[2].2) / area;
                let i = (py as u32 * self.w + px as u32) as usize;
                if iz > self.inv_depth[i] {
                    self.inv_depth[i] = iz;
                    self.owner[i] = Some(id);
                    self.image.set(i, color);
                }
            }
        }
    }
}

fn shade(base: [f64; 3], n: Vec3) -> [u8; 3] {
    let k = AMBIENT + (1.0 - AMBIENT) * n.dot(light_dir()).abs();
    base.map(|c| (c * k).round().clamp(0.0, 255.0) as u8)
}

/// Renders the meshes in `visible`; meshes in `highlight` get the highlight tint.
///
/// Meshes are drawn in scene order and faces in file order; a fragment only
/// replaces a strictly nearer one, so the output is fully determined by the inputs.
pub fn render(
    scene: &Scene,
    visible: &BTreeSet<String>,
    highlight: &BTreeSet<String>,
    view: &CameraView,
) -> Result<Rendered, RenderError> {
    if visible.is_empty() {
        return Err(RenderError::EmptyVisibleSet);
    }
    for p in visible.iter().chain(highlight) {
        if scene.mesh(p).is_none() {
            return Err(RenderError::UnknownMesh(p.clone()));
        }
    }
    let (r, u, f) = view.basis()?;
    let (w, h) = (view.width, view.height);
    let focal = (h as f64 / 2.0) / (view.vertical_fov / 2.0).tan();
    let extent = scene
        .meshes
        .iter()
        .filter(|m| visible.contains(&m.path))
        .flat_map(|m| m.vertices.iter())
        .map(|p| (*p - view.eye).norm())
        .fold(0.0f64, f64::max);
    let near = (extent * 1e-6).max(1e-6);

    let n = (w * h) as usize;
    let mut image = Image::new(w, h, BACKGROUND);
    let mut inv_depth = vec![0.0; n];
    let mut owner = vec![None; n];
    let mut raster = Raster {
        w,
        h,
        focal,
        inv_depth: &mut inv_depth,
        owner: &mut owner,
        image: &mut image,
    };
    for (id, mesh) in scene.meshes.iter().enumerate() {
        if !visible.contains(&mesh.path) {
            continue;
        }
        let base = if highlight.contains(&mesh.path) {
            HIGHLIGHT_COLOR
        } else {
            BASE_COLOR
        };
        let to_cam = |p: Vec3| {
            let d = p - view.eye;
            Vec3::new(d.dot(r), d.dot(u), d.dot(f))
        };
        for face in &mesh.faces {
            let t = mesh.triangle(face);
            let Some(normal) = (t[1] - t[0]).cross(t[2] - t[0]).normalized() else {
                continue;
            };
            let color = shade(base, normal);
            let poly = clip_near(t.map(to_cam), near);
            if poly.len() < 3 {
                continue;
            }
            let proj: Vec<_> = poly.iter().map(|c| raster.project(c.cam)).collect();
            for k in 1..proj.len() - 1 {
                raster.triangle([proj[0], proj[k], proj[k + 1]], color, id as u32);
            }
        }
    }
    let wanted: BTreeSet<u32> = scene
        .meshes
        .iter()
        .enumerate()
        .filter(|(_, m)| {
            if highlight.is_empty() {
                visible.contains(&m.path)
            } else {
                highlight.contains(&m.path) && visible.contains(&m.path)
            }
        })
        .map(|(i, _)| i as u32)
        .collect();
    let seen = owner.iter().flatten().any(|o| wanted.contains(o));
    let depth = inv_depth
        .iter()
        .map(|&iz| if iz > 0.0 { 1.0 / iz } else { f64::INFINITY })
        .collect();
    Ok(Rendered {
        image,
        owner,
        depth,
        warning: (!seen).then_some(RenderWarning::NothingVisible),
    })
}

/// The three context/isolated pairs for one mesh group, in request order.
pub fn render_label_images(
    scene: &Scene,
    members: &BTreeSet<String>,
    aabb: &Box3,
    centroid: Vec3,
) -> Result<(Vec<Image>, Vec<RenderWarning>), RenderError> {
    let all: BTreeSet<String> = scene.active_meshes().map(|m| m.path.clone()).collect();
    let mut images = Vec::with_capacity(6);
    let mut warnings = Vec::new();
    for view in default_views(aabb, centroid) {
        for visible in [&all, members] {
            let out = render(scene, visible, members, &view)?;
            warnings.extend(out.warning);
            images.push(out.image);
        }
    }
    Ok((images, warnings))
}
