//! glTF 2.0 import (`.gltf` with embedded or external buffers, and `.glb`).
//!
//! Only what triangle geometry needs is read: node hierarchy and transforms,
//! POSITION accessors, index accessors and the three triangle topologies.
//! The hierarchy is flattened into world-space meshes whose paths are the
//! slash-joined node names from the scene root.

use std::collections::BTreeMap;
use std::path::Path;

use base64::Engine;
use serde::Deserialize;

use super::{Mesh, SceneError, SceneFormat};
use crate::math::Vec3;

type Mat4 = [[f64; 4]; 4];

const IDENTITY: Mat4 = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

const GLB_MAGIC: &[u8; 4] = b"glTF";
const CHUNK_JSON: u32 = 0x4E4F_534A;
const CHUNK_BIN: u32 = 0x004E_4942;

const MODE_TRIANGLES: u32 = 4;
const MODE_STRIP: u32 = 5;
const MODE_FAN: u32 = 6;

#[derive(Deserialize)]
struct Document {
    scene: Option<usize>,
    #[serde(default)]
    scenes: Vec<SceneDef>,
    #[serde(default)]
    nodes: Vec<NodeDef>,
    #[serde(default)]
    meshes: Vec<MeshDef>,
    #[serde(default)]
    accessors: Vec<Accessor>,
    #[serde(default, rename = "bufferViews")]
    buffer_views: Vec<BufferView>,
    #[serde(default)]
    buffers: Vec<Buffer>,
}

#[derive(Deserialize)]
struct SceneDef {
    #[serde(default)]
    nodes: Vec<usize>,
}

#[derive(Deserialize)]
struct NodeDef {
    name: Option<String>,
    #[serde(default)]
    children: Vec<usize>,
    mesh: Option<usize>,
    matrix: Option<[f64; 16]>,
    translation: Option<[f64; 3]>,
    rotation: Option<[f64; 4]>,
    scale: Option<[f64; 3]>,
}

#[derive(Deserialize)]
struct MeshDef {
    #[serde(default)]
    primitives: Vec<Primitive>,
}

fn triangles() -> u32 {
    MODE_TRIANGLES
}

#[derive(Deserialize)]
struct Primitive {
    attributes: BTreeMap<String, usize>,
    indices: Option<usize>,
    #[serde(default = "triangles")]
    mode: u32,
}

#[derive(Deserialize)]
struct Accessor {
    #[serde(rename = "bufferView")]
    buffer_view: Option<usize>,
    #[serde(default, rename = "byteOffset")]
    byte_offset: usize,
    #[serde(rename = "componentType")]
    component_type: u32,
    count: usize,
    #[serde(rename = "type")]
    kind: String,
    sparse: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct BufferView {
    buffer: usize,
    #[serde(default, rename = "byteOffset")]
    byte_offset: usize,
    #[serde(rename = "byteLength")]
    byte_length: usize,
    #[serde(rename = "byteStride")]
    byte_stride: Option<usize>,
}

#[derive(Deserialize)]
struct Buffer {
    uri: Option<String>,
    #[serde(rename = "byteLength")]
    byte_length: usize,
}

fn err(reason: impl std::fmt::Display) -> SceneError {
    SceneError::Parse {
        format: SceneFormat::Gltf,
        reason: reason.to_string(),
    }
}

// column-major, as in glTF
fn mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut r = [[0.0; 4]; 4];
    for (c, col) in r.iter_mut().enumerate() {
        for (row, out) in col.iter_mut().enumerate() {
            *out = (0..4).map(|k| a[k][row] * b[c][k]).sum();
        }
    }
    r
}

fn apply(m: &Mat4, p: [f64; 3]) -> Vec3 {
    let p = [p[0], p[1], p[2], 1.0];
    let mut o = [0.0; 4];
    for (row, out) in o.iter_mut().enumerate() {
        *out = (0..4).map(|k| m[k][row] * p[k]).sum();
    }
    let w = if o[3] != 0.0 { o[3] } else { 1.0 };
    Vec3::new(o[0] / w, o[1] / w, o[2] / w)
}

fn local_matrix(n: &NodeDef) -> Mat4 {
    if let Some(m) = n.matrix {
        let mut r = [[0.0; 4]; 4];
        for (c, col) in r.iter_mut().enumerate() {
            col.copy_from_slice(&m[4 * c..4 * c + 4]);
        }
        return r;
    }
    let [tx, ty, tz] = n.translation.unwrap_or([0.0; 3]);
    let [x, y, z, w] = n.rotation.unwrap_or([0.0, 0.0, 0.0, 1.0]);
    let [sx, sy, sz] = n.scale.unwrap_or([1.0; 3]);
    // rotation columns from the unit quaternion, each scaled
    let rot = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y + z * w), 2.0 * (x * z - y * w)],
        [2.0 * (x * y - z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z + x * w)],
        [2.0 * (x * z + y * w), 2.0 * (y * z - x * w), 1.0 - 2.0 * (x * x + y * y)],
    ];
    let s = [sx, sy, sz];
    let mut r = IDENTITY;
    for c in 0..3 {
        for row in 0..3 {
            r[c][row] = rot[c][row] * s[c];
        }
    }
    r[3] = [tx, ty, tz, 1.0];
    r
}

fn split_glb(bytes: &[u8]) -> Result<(&[u8], Option<&[u8]>), SceneError> {
    let u32_at = |o: usize| -> Result<u32, SceneError> {
        bytes
            .get(o..o + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| err("truncated GLB"))
    };
    if u32_at(4)? != 2 {
        return Err(err("unsupported GLB version"));
    }
    let total = (u32_at(8)? as usize).min(bytes.len());
    let mut off = 12;
    let (mut json, mut bin) = (None, None);
    while off + 8 <= total {
        let len = u32_at(off)? as usize;
        let kind = u32_at(off + 4)?;
        let body = bytes.get(off + 8..off + 8 + len).ok_or_else(|| err("truncated GLB chunk"))?;
        match kind {
            CHUNK_JSON if json.is_none() => json = Some(body),
            CHUNK_BIN if bin.is_none() => bin = Some(body),
            _ => {}
        }
        off += 8 + len;
    }
    Ok((json.ok_or_else(|| err("GLB has no JSON chunk"))?, bin))
}

fn load_buffers(doc: &Document, base: Option<&Path>, blob: Option<&[u8]>) -> Result<Vec<Vec<u8>>, SceneError> {
    doc.buffers
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let data = match &b.uri {
                None => blob.ok_or_else(|| err(format!("buffer {i} has no uri and there is no GLB blob")))?.to_vec(),
                Some(uri) if uri.starts_with("data:") => {
                    let (_, payload) = uri
                        .split_once(";base64,")
                        .ok_or_else(|| err(format!("buffer {i}: only base64 data URIs are supported")))?;
                    base64::engine::general_purpose::STANDARD
                        .decode(payload)
                        .map_err(|e| err(format!("buffer {i}: {e}")))?
                }
                Some(uri) => {
                    let p = base.map(|d| d.join(uri)).unwrap_or_else(|| uri.into());
                    std::fs::read(&p).map_err(|source| SceneError::UnreadableFile {
                        path: p.clone(),
                        source,
                    })?
                }
            };
            if data.len() < b.byte_length {
                return Err(err(format!("buffer {i} is shorter than its byteLength")));
            }
            Ok(data)
        })
        .collect()
}

struct Reader<'a> {
    doc: &'a Document,
    buffers: &'a [Vec<u8>],
}

impl Reader<'_> {
    /// Raw component values of an accessor as f64, `width` per element.
    fn read(&self, index: usize, width: usize, kinds: &[u32]) -> Result<Vec<f64>, SceneError> {
        let a = self
            .doc
            .accessors
            .get(index)
            .ok_or_else(|| err(format!("accessor {index} does not exist")))?;
        if a.sparse.is_some() {
            return Err(err("sparse accessors are not supported"));
        }
        let expected = match width {
            1 => "SCALAR",
            3 => "VEC3",
            _ => unreachable!(),
        };
        if a.kind != expected || !kinds.contains(&a.component_type) {
            return Err(err(format!("accessor {index}: unexpected {} / {}", a.kind, a.component_type)));
        }
        let size = match a.component_type {
            5120 | 5121 => 1,
            5122 | 5123 => 2,
            5125 | 5126 => 4,
            other => return Err(err(format!("unknown component type {other}"))),
        };
        let Some(vi) = a.buffer_view else {
            return Ok(vec![0.0; a.count * width]);
        };
        let view = self
            .doc
            .buffer_views
            .get(vi)
            .ok_or_else(|| err(format!("buffer view {vi} does not exist")))?;
        let buf = self
            .buffers
            .get(view.buffer)
            .ok_or_else(|| err(format!("buffer {} does not exist", view.buffer)))?;
        let stride = view.byte_stride.unwrap_or(size * width);
        let start = view.byte_offset + a.byte_offset;
        let end = view.byte_offset + view.byte_length;
        let mut out = Vec::with_capacity(a.count * width);
        for e in 0..a.count {
            for c in 0..width {
                let o = start + e * stride + c * size;
                let b = buf
                    .get(o..o + size)
                    .filter(|_| o + size <= end)
                    .ok_or_else(|| err(format!("accessor {index} reads past its buffer view")))?;
                out.push(match a.component_type {
                    5120 => b[0] as i8 as f64,
                    5121 => b[0] as f64,
                    5122 => i16::from_le_bytes([b[0], b[1]]) as f64,
                    5123 => u16::from_le_bytes([b[0], b[1]]) as f64,
                    5125 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    _ => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                });
            }
        }
        Ok(out)
    }
}

struct Walker<'a> {
    reader: Reader<'a>,
    meshes: Vec<Mesh>,
    seen: BTreeMap<String, usize>,
    on_path: Vec<bool>,
}

impl Walker<'_> {
    fn unique(&mut self, path: String) -> String {
        let n = self.seen.entry(path.clone()).or_insert(0);
        *n += 1;
        if *n == 1 {
            path
        } else {
            format!("{path}~{}", *n - 1)
        }
    }

    fn mesh(&self, mi: usize, world: &Mat4, path: &str) -> Result<Mesh, SceneError> {
        let def = self
            .reader
            .doc
            .meshes
            .get(mi)
            .ok_or_else(|| err(format!("mesh {mi} does not exist")))?;
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for prim in &def.primitives {
            let Some(&pos) = prim.attributes.get("POSITION") else { continue };
            let base = vertices.len() as u32;
            let raw = self.reader.read(pos, 3, &[5126])?;
            vertices.extend(raw.chunks_exact(3).map(|p| apply(world, [p[0], p[1], p[2]])));
            let count = vertices.len() as u32 - base;
            let idx: Vec<u32> = match prim.indices {
                Some(i) => self.reader.read(i, 1, &[5121, 5123, 5125])?.into_iter().map(|v| v as u32).collect(),
                None => (0..count).collect(),
            };
            if let Some(&bad) = idx.iter().find(|&&i| i >= count) {
                return Err(SceneError::MalformedGeometry {
                    mesh: path.to_string(),
                    reason: format!("index {bad} out of range (vertex count {count})"),
                });
            }
            match prim.mode {
                MODE_TRIANGLES => {
                    for t in idx.chunks_exact(3) {
                        faces.push([base + t[0], base + t[1], base + t[2]]);
                    }
                }
                MODE_STRIP => {
                    for k in 2..idx.len() {
                        let (a, b) = if k % 2 == 0 {
                            (idx[k - 2], idx[k - 1])
                        } else {
                            (idx[k - 1], idx[k - 2])
                        };
                        faces.push([base + a, base + b, base + idx[k]]);
                    }
                }
                MODE_FAN => {
                    for k in 2..idx.len() {
                        faces.push([base + idx[0], base + idx[k - 1], base + idx[k]]);
                    }
                }
                // points and lines carry no surface
                _ => {}
            }
        }
        Ok(Mesh::new(path, vertices, faces))
    }

    fn visit(&mut self, ni: usize, parent: &str, parent_m: &Mat4) -> Result<(), SceneError> {
        let node = self
            .reader
            .doc
            .nodes
            .get(ni)
            .ok_or_else(|| err(format!("node {ni} does not exist")))?;
        if std::mem::replace(&mut self.on_path[ni], true) {
            return Err(err(format!("node {ni} is its own ancestor")));
        }
        let name = node
            .name
            .clone()
            .filter(|n| !n.is_empty())
            .unwrap_or_else(|| format!("node{ni}"));
        let path = format!("{parent}/{name}");
        let world = mul(parent_m, &local_matrix(node));
        if let Some(mi) = node.mesh {
            let mut m = self.mesh(mi, &world, &path)?;
            m.path = self.unique(path.clone());
            self.meshes.push(m);
        }
        for &c in &node.children {
            self.visit(c, &path, &world)?;
        }
        self.on_path[ni] = false;
        Ok(())
    }
}

pub(super) fn parse(bytes: &[u8], base: Option<&Path>) -> Result<Vec<Mesh>, SceneError> {
    let (json, blob) = if bytes.starts_with(GLB_MAGIC) {
        split_glb(bytes)?
    } else {
        (bytes, None)
    };
    let doc: Document = serde_json::from_slice(json).map_err(err)?;
    let buffers = load_buffers(&doc, base, blob)?;
    let roots: Vec<usize> = match doc.scene.or(if doc.scenes.is_empty() { None } else { Some(0) }) {
        Some(s) => doc
            .scenes
            .get(s)
            .ok_or_else(|| err(format!("scene {s} does not exist")))?
            .nodes
            .clone(),
        None => {
            let mut is_child = vec![false; doc.nodes.len()];
            for n in &doc.nodes {
                for &c in &n.children {
                    if let Some(f) = is_child.get_mut(c) {
                        *f = true;
                    }
                }
            }
            (0..doc.nodes.len()).filter(|&i| !is_child[i]).collect()
        }
    };
    let mut walker = Walker {
        on_path: vec![false; doc.nodes.len()],
        reader: Reader {
            doc: &doc,
            buffers: &buffers,
        },
        meshes: Vec::new(),
        seen: BTreeMap::new(),
    };
    for r in roots {
        walker.visit(r, "", &IDENTITY)?;
    }
    Ok(walker.meshes)
}

pub(super) fn import(source: &Path) -> Result<Vec<Mesh>, SceneError> {
    let bytes = std::fs::read(source).map_err(|e| SceneError::UnreadableFile {
        path: source.to_path_buf(),
        source: e,
    })?;
    parse(&bytes, source.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One triangle (three f32 positions + three u16 indices) as a data URI.
    fn triangle_buffer() -> (String, usize) {
        let mut b = Vec::new();
        for v in [0.0f32, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for i in [0u16, 1, 2] {
            b.extend_from_slice(&i.to_le_bytes());
        }
        b.extend_from_slice(&[0, 0]);
        let uri = format!(
            "data:application/octet-stream;base64,{}",
            base64::engine::general_purpose::STANDARD.encode(&b)
        );
        (uri, b.len())
    }

    fn document(nodes: &str) -> String {
        let (uri, len) = triangle_buffer();
        format!(
            r#"{{"asset":{{"version":"2.0"}},"scene":0,"scenes":[{{"nodes":[0]}}],"nodes":{nodes},
            "meshes":[{{"primitives":[{{"attributes":{{"POSITION":0}},"indices":1}}]}}],
            "accessors":[{{"bufferView":0,"componentType":5126,"count":3,"type":"VEC3"}},
                         {{"bufferView":1,"componentType":5123,"count":3,"type":"SCALAR"}}],
            "bufferViews":[{{"buffer":0,"byteOffset":0,"byteLength":36}},{{"buffer":0,"byteOffset":36,"byteLength":6}}],
            "buffers":[{{"uri":"{uri}","byteLength":{len}}}]}}"#
        )
    }

    #[test]
    fn nested_nodes_become_paths_with_world_transforms() {
        let doc = document(
            r#"[{"name":"root","children":[1],"translation":[10,0,0]},
                {"name":"tank","children":[2],"scale":[2,2,2]},
                {"name":"shell","mesh":0}]"#,
        );
        let meshes = parse(doc.as_bytes(), None).unwrap();
        assert_eq!(meshes.len(), 1);
        assert_eq!(meshes[0].path, "/root/tank/shell");
        assert_eq!(meshes[0].vertices[1], Vec3::new(12.0, 0.0, 0.0));
        assert_eq!(meshes[0].faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn unnamed_and_duplicate_nodes() {
        let doc = document(r#"[{"children":[1,2]},{"name":"m","mesh":0},{"name":"m","mesh":0,"rotation":[0,0,0.7071068,0.7071068]}]"#);
        let meshes = parse(doc.as_bytes(), None).unwrap();
        let paths: Vec<_> = meshes.iter().map(|m| m.path.as_str()).collect();
        assert_eq!(paths, vec!["/node0/m", "/node0/m~1"]);
        // 90 degrees about z maps +x to +y
        let v = meshes[1].vertices[1];
        assert!((v.x).abs() < 1e-6 && (v.y - 1.0).abs() < 1e-6);
    }

    #[test]
    fn glb_container() {
        let json = document(r#"[{"name":"a","mesh":0}]"#);
        let mut padded = json.into_bytes();
        while !padded.len().is_multiple_of(4) {
            padded.push(b' ');
        }
        let mut glb = Vec::new();
        glb.extend_from_slice(GLB_MAGIC);
        glb.extend_from_slice(&2u32.to_le_bytes());
        glb.extend_from_slice(&((12 + 8 + padded.len()) as u32).to_le_bytes());
        glb.extend_from_slice(&(padded.len() as u32).to_le_bytes());
        glb.extend_from_slice(&CHUNK_JSON.to_le_bytes());
        glb.extend_from_slice(&padded);
        let meshes = parse(&glb, None).unwrap();
        assert_eq!(meshes[0].path, "/a");
    }

    #[test]
    fn bad_documents() {
        assert!(parse(b"not json", None).is_err());
        let cyclic = document(r#"[{"name":"a","children":[0]}]"#);
        assert!(parse(cyclic.as_bytes(), None).is_err());
        let bad_index = document(r#"[{"name":"a","mesh":3}]"#);
        assert!(parse(bad_index.as_bytes(), None).is_err());
    }
}
