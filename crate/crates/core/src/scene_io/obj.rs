//! Wavefront OBJ reader. Only geometry is read: `v`, `f`, `o` and `g`.

use std::collections::BTreeMap;

use super::{fan_triangulate, Mesh, SceneError, SceneFormat};
use crate::math::Vec3;

#[derive(Default)]
struct Builder {
    /// global vertex index -> local index
    remap: BTreeMap<usize, u32>,
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
}

impl Builder {
    fn local(&mut self, global: usize, positions: &[Vec3]) -> u32 {
        if let Some(&i) = self.remap.get(&global) {
            return i;
        }
        let i = self.vertices.len() as u32;
        self.vertices.push(positions[global]);
        self.remap.insert(global, i);
        i
    }
}

fn mesh_path(object: Option<&str>, group: Option<&str>) -> Option<String> {
    match (object, group) {
        (Some(o), Some(g)) => Some(format!("/{o}/{g}")),
        (Some(n), None) | (None, Some(n)) => Some(format!("/{n}")),
        (None, None) => None,
    }
}

fn parse_err(line_no: usize, reason: impl std::fmt::Display) -> SceneError {
    SceneError::Parse {
        format: SceneFormat::Obj,
        reason: format!("line {line_no}: {reason}"),
    }
}

pub(super) fn parse_obj(text: &str, scale: f64) -> Result<Vec<Mesh>, SceneError> {
    let mut positions: Vec<Vec3> = Vec::new();
    // keyed by (object, group); insertion order tracked for unnamed indexing
    let mut builders: BTreeMap<(Option<String>, Option<String>), Builder> = BTreeMap::new();
    let mut object: Option<String> = None;
    let mut group: Option<String> = None;

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        let Some(kw) = tok.next() else { continue };
        match kw {
            "v" => {
                let c: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| parse_err(line_no, e)))
                    .collect::<Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(parse_err(line_no, "vertex needs three coordinates"));
                }
                positions.push(Vec3::new(c[0], c[1], c[2]) * scale);
            }
            "o" => {
                let name = tok.collect::<Vec<_>>().join(" ");
                object = (!name.is_empty()).then_some(name);
                group = None;
            }
            "g" => {
                let name = tok.collect::<Vec<_>>().join("_");
                group = (!name.is_empty() && name != "default").then_some(name);
            }
            "f" => {
                let key = (object.clone(), group.clone());
                let label = mesh_path(object.as_deref(), group.as_deref()).unwrap_or_else(|| "/unnamed/0".into());
                let mut globals = Vec::new();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|e| parse_err(line_no, e))?;
                    let global = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        positions.len() as i64 + i
                    } else {
                        -1
                    };
                    if global < 0 || global as usize >= positions.len() {
                        return Err(SceneError::MalformedGeometry {
                            mesh: label,
                            reason: format!("line {line_no}: vertex reference {i} does not exist"),
                        });
                    }
                    globals.push(global as usize);
                }
                let b = builders.entry(key).or_default();
                let local: Vec<u32> = globals.iter().map(|&g| b.local(g, &positions)).collect();
                fan_triangulate(&local, &mut b.faces).map_err(|reason| SceneError::MalformedGeometry {
                    mesh: label,
                    reason: format!("line {line_no}: {reason}"),
                })?;
            }
            _ => {}
        }
    }

    let mut meshes = Vec::with_capacity(builders.len());
    for ((o, g), b) in builders {
        let path = mesh_path(o.as_deref(), g.as_deref()).unwrap_or_else(|| "/unnamed/0".to_string());
        meshes.push(Mesh::new(path, b.vertices, b.faces));
    }
    Ok(meshes)
}
