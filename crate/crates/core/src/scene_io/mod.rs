//! Scene ingestion: OBJ, glTF and the native JSON scene format.
//!
//! Every importer produces a [`Scene`] whose meshes are sorted by their
//! hierarchical identity path, with coordinates converted to meters.

mod gltf_import;
mod obj;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use glob::Pattern;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{Box3, Vec3};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {format} input: {reason}")]
    Parse { format: SceneFormat, reason: String },
    #[error("malformed geometry in {mesh}: {reason}")]
    MalformedGeometry { mesh: String, reason: String },
    #[error("length unit {0:?} is not convertible to meters")]
    UnitMismatch(String),
    #[error("mesh path {0} occurs more than once")]
    DuplicatePath(String),
    #[error("invalid glob pattern {pattern:?}: {reason}")]
    InvalidPattern { pattern: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneFormat {
    Obj,
    Gltf,
    Json,
}

impl fmt::Display for SceneFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneFormat::Obj => "obj",
            SceneFormat::Gltf => "gltf",
            SceneFormat::Json => "json",
        })
    }
}

impl FromStr for SceneFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "obj" => Ok(SceneFormat::Obj),
            "gltf" | "glb" => Ok(SceneFormat::Gltf),
            "json" => Ok(SceneFormat::Json),
            other => Err(format!("unknown scene format {other:?} (expected obj, gltf or json)")),
        }
    }
}

/// Length unit declared by an input file or its sidecar configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[serde(alias = "m")]
    Meters,
    #[serde(alias = "cm")]
    Centimeters,
    #[serde(alias = "mm")]
    Millimeters,
    #[serde(alias = "in")]
    Inches,
    #[serde(alias = "ft")]
    Feet,
}

impl LengthUnit {
    pub fn to_meters(self) -> f64 {
        match self {
            LengthUnit::Meters => 1.0,
            LengthUnit::Centimeters => 0.01,
            LengthUnit::Millimeters => 0.001,
            LengthUnit::Inches => 0.0254,
            LengthUnit::Feet => 0.3048,
        }
    }
}

impl FromStr for LengthUnit {
    type Err = SceneError;
    fn from_str(s: &str) -> Result<Self, SceneError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "meter" | "meters" | "metre" | "metres" => Ok(LengthUnit::Meters),
            "cm" | "centimeter" | "centimeters" => Ok(LengthUnit::Centimeters),
            "mm" | "millimeter" | "millimeters" => Ok(LengthUnit::Millimeters),
            "in" | "inch" | "inches" => Ok(LengthUnit::Inches),
            "ft" | "foot" | "feet" => Ok(LengthUnit::Feet),
            _ => Err(SceneError::UnitMismatch(s.to_string())),
        }
    }
}

/// One CAD mesh with its identity path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub path: String,
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub excluded: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_ground: bool,
}

impl Mesh {
    pub fn new(path: impl Into<String>, vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        Self {
            path: path.into(),
            vertices,
            faces,
            excluded: false,
            is_ground: false,
        }
    }

    /// Participates in grouping and clustering.
    pub fn is_active(&self) -> bool {
        !self.excluded && !self.is_ground
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let n = self.vertices.len();
        if let Some(v) = self.vertices.iter().find(|v| !v.is_finite()) {
            return Err(SceneError::MalformedGeometry {
                mesh: self.path.clone(),
                reason: format!("non-finite vertex {:?}", v.to_array()),
            });
        }
        for f in &self.faces {
            if f.iter().any(|&i| i as usize >= n) {
                return Err(SceneError::MalformedGeometry {
                    mesh: self.path.clone(),
                    reason: format!("face {f:?} references a missing vertex (vertex count {n})"),
                });
            }
        }
        Ok(())
    }

    pub fn triangle(&self, face: &[u32; 3]) -> [Vec3; 3] {
        face.map(|i| self.vertices[i as usize])
    }

    pub fn surface_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                (b - a).cross(c - a).norm() * 0.5
            })
            .sum()
    }
}

/// An ingested environment. Units are meters and meshes are sorted by path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scene {
    pub units: String,
    pub meshes: Vec<Mesh>,
}

impl Default for Scene {
    fn default() -> Self {
        Self {
            units: "m".into(),
            meshes: Vec::new(),
        }
    }
}

impl Scene {
    /// Builds a scene from meshes in any order; validates geometry and path uniqueness.
    pub fn from_meshes(mut meshes: Vec<Mesh>) -> Result<Self, SceneError> {
        meshes.sort_by(|a, b| a.path.cmp(&b.path));
        for w in meshes.windows(2) {
            if w[0].path == w[1].path {
                return Err(SceneError::DuplicatePath(w[0].path.clone()));
            }
        }
        for m in &meshes {
            m.validate()?;
        }
        Ok(Self {
            units: "m".into(),
            meshes,
        })
    }

    pub fn mesh(&self, path: &str) -> Option<&Mesh> {
        self.meshes
            .binary_search_by(|m| m.path.as_str().cmp(path))
            .ok()
            .map(|i| &self.meshes[i])
    }

    pub fn index_of(&self, path: &str) -> Option<usize> {
        self.meshes.binary_search_by(|m| m.path.as_str().cmp(path)).ok()
    }

    pub fn active_meshes(&self) -> impl Iterator<Item = &Mesh> {
        self.meshes.iter().filter(|m| m.is_active())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene serialization cannot fail")
    }

    /// Parses the native JSON scene format. Polygon faces are fan-triangulated.
    pub fn from_json_str(text: &str, unit_override: Option<LengthUnit>) -> Result<Self, SceneError> {
        #[derive(Deserialize)]
        struct RawMesh {
            path: Option<String>,
            vertices: Vec<[f64; 3]>,
            #[serde(default)]
            faces: Vec<Vec<i64>>,
            #[serde(default)]
            excluded: bool,
            #[serde(default)]
            is_ground: bool,
        }
        #[derive(Deserialize)]
        struct RawScene {
            #[serde(default)]
            units: Option<String>,
            meshes: Vec<RawMesh>,
        }

        let raw: RawScene = serde_json::from_str(text).map_err(|e| SceneError::Parse {
            format: SceneFormat::Json,
            reason: e.to_string(),
        })?;
        let unit = match (unit_override, raw.units.as_deref()) {
            (Some(u), _) => u,
            (None, Some(s)) => s.parse()?,
            (None, None) => LengthUnit::Meters,
        };
        let scale = unit.to_meters();
        let mut meshes = Vec::with_capacity(raw.meshes.len());
        let mut unnamed = 0usize;
        for rm in raw.meshes {
            let path = match rm.path {
                Some(p) if !p.is_empty() => p,
                _ => {
                    let p = format!("/unnamed/{unnamed}");
                    unnamed += 1;
                    p
                }
            };
            let n = rm.vertices.len();
            let mut faces = Vec::with_capacity(rm.faces.len());
            for poly in &rm.faces {
                let idx: Vec<u32> = poly
                    .iter()
                    .map(|&i| {
                        if i < 0 || i as usize >= n {
                            Err(SceneError::MalformedGeometry {
                                mesh: path.clone(),
                                reason: format!("face index {i} out of range (vertex count {n})"),
                            })
                        } else {
                            Ok(i as u32)
                        }
                    })
                    .collect::<Result<_, _>>()?;
                fan_triangulate(&idx, &mut faces).map_err(|reason| SceneError::MalformedGeometry {
                    mesh: path.clone(),
                    reason,
                })?;
            }
            let vertices = rm.vertices.iter().map(|&v| Vec3::from(v) * scale).collect();
            let mut mesh = Mesh::new(path, vertices, faces);
            mesh.excluded = rm.excluded;
            mesh.is_ground = rm.is_ground;
            meshes.push(mesh);
        }
        Scene::from_meshes(meshes)
    }
}

/// Splits a polygon `(i, j, k, l, ...)` into the fan `(i, j, k), (i, k, l), ...`.
pub fn fan_triangulate(polygon: &[u32], out: &mut Vec<[u32; 3]>) -> Result<(), String> {
    if polygon.len() < 3 {
        return Err(format!("face with {} vertices", polygon.len()));
    }
    for w in 1..polygon.len() - 1 {
        out.push([polygon[0], polygon[w], polygon[w + 1]]);
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Units of the input coordinates; glTF is always meters.
    pub units: Option<LengthUnit>,
}

pub fn load_scene(source: &Path, format: SceneFormat, options: &LoadOptions) -> Result<Scene, SceneError> {
    let unreadable = |e| SceneError::UnreadableFile {
        path: source.to_path_buf(),
        source: e,
    };
    match format {
        SceneFormat::Json => {
            let text = std::fs::read_to_string(source).map_err(unreadable)?;
            Scene::from_json_str(&text, options.units)
        }
        SceneFormat::Obj => {
            let text = std::fs::read_to_string(source).map_err(unreadable)?;
            let unit = options.units.unwrap_or(LengthUnit::Meters);
            Scene::from_meshes(obj::parse_obj(&text, unit.to_meters())?)
        }
        SceneFormat::Gltf => {
            if !source.exists() {
                return Err(unreadable(std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
            if let Some(u) = options.units {
                if u != LengthUnit::Meters {
                    return Err(SceneError::UnitMismatch(format!(
                        "{u:?} declared for glTF, which is meters by definition"
                    )));
                }
            }
            Scene::from_meshes(gltf_import::import(source)?)
        }
    }
}

/// Parses an OBJ document held in memory.
pub fn parse_obj_str(text: &str, unit: LengthUnit) -> Result<Scene, SceneError> {
    Scene::from_meshes(obj::parse_obj(text, unit.to_meters())?)
}

/// Outcome of flagging meshes by glob pattern.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub excluded: usize,
    pub ground: usize,
    pub active: usize,
    /// Patterns that matched nothing.
    pub unmatched_patterns: Vec<String>,
}

fn compile(patterns: &[String]) -> Result<Vec<Pattern>, SceneError> {
    patterns
        .iter()
        .map(|p| {
            Pattern::new(p).map_err(|e| SceneError::InvalidPattern {
                pattern: p.clone(),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Flags meshes matched by `exclude` as excluded and by `ground` as ground.
/// Meshes are never removed. `*` in a pattern also matches `/`.
pub fn apply_exclusions(
    mut scene: Scene,
    exclude: &[String],
    ground: &[String],
) -> Result<(Scene, ExclusionReport), SceneError> {
    let ex = compile(exclude)?;
    let gr = compile(ground)?;
    let mut hit_ex = vec![false; ex.len()];
    let mut hit_gr = vec![false; gr.len()];
    for mesh in &mut scene.meshes {
        for (i, p) in ex.iter().enumerate() {
            if p.matches(&mesh.path) {
                mesh.excluded = true;
                hit_ex[i] = true;
            }
        }
        for (i, p) in gr.iter().enumerate() {
            if p.matches(&mesh.path) {
                mesh.is_ground = true;
                hit_gr[i] = true;
            }
        }
    }
    let unmatched_patterns = exclude
        .iter()
        .zip(&hit_ex)
        .chain(ground.iter().zip(&hit_gr))
        .filter(|(_, hit)| !**hit)
        .map(|(p, _)| p.clone())
        .collect();
    let report = ExclusionReport {
        excluded: scene.meshes.iter().filter(|m| m.excluded).count(),
        ground: scene.meshes.iter().filter(|m| m.is_ground).count(),
        active: scene.meshes.iter().filter(|m| m.is_active()).count(),
        unmatched_patterns,
    };
    Ok((scene, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SceneStats {
    pub mesh_count: usize,
    pub active_count: usize,
    pub excluded_count: usize,
    pub ground_count: usize,
    pub vertex_count: usize,
    pub face_count: usize,
    pub bounds: Option<Box3>,
}

pub fn scene_stats(scene: &Scene) -> SceneStats {
    SceneStats {
        mesh_count: scene.meshes.len(),
        active_count: scene.meshes.iter().filter(|m| m.is_active()).count(),
        excluded_count: scene.meshes.iter().filter(|m| m.excluded).count(),
        ground_count: scene.meshes.iter().filter(|m| m.is_ground).count(),
        vertex_count: scene.meshes.iter().map(|m| m.vertices.len()).sum(),
        face_count: scene.meshes.iter().map(|m| m.faces.len()).sum(),
        bounds: Box3::from_points(scene.meshes.iter().flat_map(|m| m.vertices.iter().copied())),
    }
}

/// Paths of all meshes matched by any of `patterns`.
pub fn matching_paths(scene: &Scene, patterns: &[String]) -> Result<BTreeSet<String>, SceneError> {
    let compiled = compile(patterns)?;
    Ok(scene
        .meshes
        .iter()
        .filter(|m| compiled.iter().any(|p| p.matches(&m.path)))
        .map(|m| m.path.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(path: &str, faces: usize) -> Mesh {
        let vertices = vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        Mesh::new(path, vertices, vec![[0, 1, 2]; faces])
    }

    #[test]
    fn json_roundtrip_and_sorting() {
        let text = r#"{"units":"cm","meshes":[
            {"path":"/b","vertices":[[0,0,0],[100,0,0],[0,100,0]],"faces":[[0,1,2]]},
            {"path":"/a","vertices":[[0,0,0],[1,0,0],[1,1,0],[0,1,0]],"faces":[[0,1,2,3]]}]}"#;
        let scene = Scene::from_json_str(text, None).unwrap();
        assert_eq!(scene.meshes[0].path, "/a");
        assert_eq!(scene.meshes[0].faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert_eq!(scene.meshes[1].vertices[1], Vec3::new(1.0, 0.0, 0.0));
        let again = Scene::from_json_str(&scene.to_json(), None).unwrap();
        assert_eq!(again, scene);
    }

    #[test]
    fn json_rejects_bad_index_and_units() {
        let bad = r#"{"meshes":[{"path":"/a","vertices":[[0,0,0]],"faces":[[0,1,2]]}]}"#;
        assert!(matches!(
            Scene::from_json_str(bad, None),
            Err(SceneError::MalformedGeometry { .. })
        ));
        let furlong = r#"{"units":"furlong","meshes":[]}"#;
        assert!(matches!(Scene::from_json_str(furlong, None), Err(SceneError::UnitMismatch(_))));
        let dup = r#"{"meshes":[{"path":"/a","vertices":[]},{"path":"/a","vertices":[]}]}"#;
        assert!(matches!(Scene::from_json_str(dup, None), Err(SceneError::DuplicatePath(_))));
    }

    #[test]
    fn unnamed_meshes_get_index_paths() {
        let text = r#"{"meshes":[{"vertices":[[0,0,0]]},{"path":"","vertices":[[1,0,0]]}]}"#;
        let scene = Scene::from_json_str(text, None).unwrap();
        let paths: Vec<_> = scene.meshes.iter().map(|m| m.path.as_str()).collect();
        assert_eq!(paths, vec!["/unnamed/0", "/unnamed/1"]);
    }

    #[test]
    fn missing_file_is_unreadable() {
        let err = load_scene(Path::new("/nonexistent/x.json"), SceneFormat::Json, &LoadOptions::default());
        assert!(matches!(err, Err(SceneError::UnreadableFile { .. })));
    }

    #[test]
    fn exclusions_flag_without_removing() {
        let scene = Scene::from_meshes(vec![tri("/ground", 1), tri("/area/pipe", 1), tri("/area/junk_1", 1)]).unwrap();
        let (same, report) = apply_exclusions(scene.clone(), &[], &[]).unwrap();
        assert_eq!(same, scene);
        assert_eq!(report.active, 3);

        let (flagged, report) =
            apply_exclusions(scene, &["/area/junk*".into(), "/nothing".into()], &["/ground*".into()]).unwrap();
        assert_eq!(flagged.meshes.len(), 3);
        assert!(flagged.mesh("/ground").unwrap().is_ground);
        assert!(!flagged.mesh("/area/pipe").unwrap().is_ground);
        assert!(flagged.mesh("/area/junk_1").unwrap().excluded);
        assert_eq!((report.excluded, report.ground, report.active), (1, 1, 1));
        assert_eq!(report.unmatched_patterns, vec!["/nothing".to_string()]);
    }

    #[test]
    fn star_crosses_separators() {
        let scene = Scene::from_meshes(vec![tri("/a/b/c", 1), tri("/d", 1)]).unwrap();
        assert_eq!(matching_paths(&scene, &["/*".into()]).unwrap().len(), 2);
    }

    #[test]
    fn stats() {
        assert_eq!(scene_stats(&Scene::default()), SceneStats::default());
        let scene = Scene::from_meshes(vec![tri("/a", 3), tri("/b", 5)]).unwrap();
        let s = scene_stats(&scene);
        assert_eq!(s.face_count, 8);
        assert_eq!(s.vertex_count, 6);
        assert_eq!(s.mesh_count, 2);
    }
}
