//! Multi-layer scene graph: mesh-group nodes, cluster parent nodes,
//! intra-cluster adjacency and membership edges.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::clustering::Clustering;
use crate::grouping::MeshGroup;
use crate::labeling::SemanticLabel;
use crate::math::{Box3, Vec3};

pub const SCHEMA: &str = "cadgraph/1";

pub type NodeId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("adjacency pair ({0}, {1}) references an unknown group")]
    UnknownGroupInAdjacency(usize, usize),
    #[error("group count {groups} does not match clustering size {labels}")]
    ClusteringSizeMismatch { groups: usize, labels: usize },
    #[error("schema {found:?} is not supported (expected {SCHEMA:?})")]
    SchemaVersionMismatch { found: String },
    #[error("invalid graph document: {0}")]
    Parse(String),
    #[error("unknown selector {0:?}")]
    UnknownSelector(String),
    #[error("invalid path pattern {0:?}")]
    InvalidPattern(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeKind {
    Mesh,
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Representative mesh path; absent on cluster nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub centroid: Vec3,
    pub aabb: Box3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name_label: Option<String>,
    /// Mesh paths merged into this node; for clusters, all member meshes.
    pub member_paths: Vec<String>,
    /// Cluster index; for mesh nodes, the cluster they belong to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EdgeKind {
    Adjacent,
    MemberOf,
}

/// ADJACENT edges are stored with `a < b`; MEMBER_OF edges point from mesh to cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn adjacent(a: NodeId, b: NodeId) -> Self {
        Self {
            a: a.min(b),
            b: a.max(b),
            kind: EdgeKind::Adjacent,
        }
    }

    pub fn member_of(mesh: NodeId, cluster: NodeId) -> Self {
        Self {
            a: mesh,
            b: cluster,
            kind: EdgeKind::MemberOf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneGraph {
    pub nodes: BTreeMap<NodeId, Node>,
    pub edges: BTreeSet<Edge>,
    /// Unknown top-level document fields, kept for round trips.
    pub extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    schema: String,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// Mesh nodes get ids `0..groups.len()` (the group id); cluster `c` gets
/// `groups.len() + c`. Adjacency pairs across clusters or touching noise are dropped.
pub fn build_scene_graph(
    groups: &[MeshGroup],
    clustering: &Clustering,
    adjacency: &[(usize, usize)],
    labels: &BTreeMap<String, SemanticLabel>,
) -> Result<SceneGraph, GraphError> {
    let n = groups.len();
    if clustering.labels.len() != n {
        return Err(GraphError::ClusteringSizeMismatch {
            groups: n,
            labels: clustering.labels.len(),
        });
    }
    let mut g = SceneGraph::default();
    for (i, grp) in groups.iter().enumerate() {
        let label = labels.get(&grp.representative_path);
        g.nodes.insert(
            i as NodeId,
            Node {
                id: i as NodeId,
                kind: NodeKind::Mesh,
                path: Some(grp.representative_path.clone()),
                centroid: grp.centroid,
                aabb: grp.aabb,
                group_label: label.map(|l| l.group.clone()),
                name_label: label.map(|l| l.name.clone()),
                member_paths: grp.member_paths.clone(),
                cluster: clustering.labels[i],
                extra: Map::new(),
            },
        );
    }
    for (c, members) in clustering.clusters().iter().enumerate() {
        let id = (n + c) as NodeId;
        let aabb = members[1..]
            .iter()
            .fold(groups[members[0]].aabb, |acc, &m| acc.union(&groups[m].aabb));
        let mut paths: Vec<String> = members
            .iter()
            .flat_map(|&m| groups[m].member_paths.iter().cloned())
            .collect();
        paths.sort();
        let weight: usize = members.iter().map(|&m| groups[m].merged_points.len().max(1)).sum();
        let centroid = members.iter().fold(Vec3::ZERO, |acc, &m| {
            acc + groups[m].centroid * (groups[m].merged_points.len().max(1) as f64 / weight as f64)
        });
        g.nodes.insert(
            id,
            Node {
                id,
                kind: NodeKind::Cluster,
                path: None,
                centroid,
                aabb,
                group_label: None,
                name_label: None,
                member_paths: paths,
                cluster: Some(c),
                extra: Map::new(),
            },
        );
        for &m in members {
            g.edges.insert(Edge::member_of(m as NodeId, id));
        }
    }
    for &(a, b) in adjacency {
        if a >= n || b >= n {
            return Err(GraphError::UnknownGroupInAdjacency(a, b));
        }
        if a == b {
            continue;
        }
        if let (Some(ca), Some(cb)) = (clustering.labels[a], clustering.labels[b]) {
            if ca == cb {
                g.edges.insert(Edge::adjacent(a as NodeId, b as NodeId));
            }
        }
    }
    Ok(g)
}

/// Parsed query selector.
#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    GroupLabel(String),
    Cluster(usize),
    PathGlob(String),
    NeighborsOf(NodeId),
}

impl std::str::FromStr for Selector {
    type Err = GraphError;

    /// `group:<label>`, `cluster:<n>`, `path:<glob>`, `neighbors:<id>`.
    fn from_str(s: &str) -> Result<Self, GraphError> {
        let bad = || GraphError::UnknownSelector(s.to_string());
        let (k, v) = s.split_once(':').ok_or_else(bad)?;
        match k {
            "group" => Ok(Selector::GroupLabel(v.to_string())),
            "cluster" => v.parse().map(Selector::Cluster).map_err(|_| bad()),
            "path" => Ok(Selector::PathGlob(v.to_string())),
            "neighbors" => v.parse().map(Selector::NeighborsOf).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

impl SceneGraph {
    pub fn mesh_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(|n| n.kind == NodeKind::Mesh)
    }

    pub fn cluster_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(|n| n.kind == NodeKind::Cluster)
    }

    pub fn edges_of(&self, kind: EdgeKind) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.kind == kind)
    }

    /// ADJACENT neighbours in ascending id order.
    pub fn neighbors(&self, id: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .edges_of(EdgeKind::Adjacent)
            .filter_map(|e| {
                if e.a == id {
                    Some(e.b)
                } else if e.b == id {
                    Some(e.a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Neighbour lists for every node, built once.
    pub fn adjacency_lists(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut out: BTreeMap<NodeId, Vec<NodeId>> = self.nodes.keys().map(|&k| (k, Vec::new())).collect();
        for e in self.edges_of(EdgeKind::Adjacent) {
            out.entry(e.a).or_default().push(e.b);
            out.entry(e.b).or_default().push(e.a);
        }
        for l in out.values_mut() {
            l.sort_unstable();
        }
        out
    }

    /// Writes semantic labels onto mesh nodes keyed by representative path.
    pub fn apply_labels(&mut self, labels: &BTreeMap<String, SemanticLabel>) {
        for n in self.nodes.values_mut() {
            if let Some(l) = n.path.as_ref().and_then(|p| labels.get(p)) {
                n.group_label = Some(l.group.clone());
                n.name_label = Some(l.name.clone());
            }
        }
    }

    pub fn query(&self, selector: &Selector) -> Result<Vec<&Node>, GraphError> {
        Ok(match selector {
            Selector::GroupLabel(g) => self
                .mesh_nodes()
                .filter(|n| n.group_label.as_deref() == Some(g.as_str()))
                .collect(),
            Selector::Cluster(c) => self.mesh_nodes().filter(|n| n.cluster == Some(*c)).collect(),
            Selector::PathGlob(p) => {
                let pat = glob::Pattern::new(p).map_err(|_| GraphError::InvalidPattern(p.clone()))?;
                self.mesh_nodes()
                    .filter(|n| n.path.as_deref().is_some_and(|s| pat.matches(s)))
                    .collect()
            }
            Selector::NeighborsOf(id) => self.neighbors(*id).iter().filter_map(|i| self.nodes.get(i)).collect(),
        })
    }

    pub fn to_json(&self) -> String {
        let doc = Document {
            schema: SCHEMA.to_string(),
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges.iter().copied().collect(),
            extra: self.extra.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("graph serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, GraphError> {
        let v: Value = serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
        let found = v.get("schema").and_then(Value::as_str).unwrap_or("");
        if found != SCHEMA {
            return Err(GraphError::SchemaVersionMismatch {
                found: found.to_string(),
            });
        }
        let doc: Document = serde_json::from_value(v).map_err(|e| GraphError::Parse(e.to_string()))?;
        let mut g = SceneGraph {
            extra: doc.extra,
            ..Default::default()
        };
        for n in doc.nodes {
            g.nodes.insert(n.id, n);
        }
        for e in doc.edges {
            let e = if e.kind == EdgeKind::Adjacent { Edge::adjacent(e.a, e.b) } else { e };
            g.edges.insert(e);
        }
        Ok(g)
    }

    /// Graphviz export. Cluster nodes become subgraphs, ordered by id.
    pub fn to_dot(&self, options: &DotOptions) -> String {
        let mut s = String::from("graph scene {\n  node [shape=box, fontsize=10];\n");
        for n in self.nodes.values() {
            let _ = writeln!(s, "  n{} [label=\"{}\"{}];", n.id, dot_escape(&node_label(n)), node_style(n));
        }
        for e in &self.edges {
            match e.kind {
                EdgeKind::Adjacent => {
                    let _ = writeln!(s, "  n{} -- n{};", e.a, e.b);
                }
                EdgeKind::MemberOf if options.membership_edges => {
                    let _ = writeln!(s, "  n{} -- n{} [style=dashed];", e.a, e.b);
                }
                EdgeKind::MemberOf => {}
            }
        }
        s.push_str("}\n");
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DotOptions {
    pub membership_edges: bool,
}

impl Default for DotOptions {
    fn default() -> Self {
        Self { membership_edges: true }
    }
}

fn node_label(n: &Node) -> String {
    match n.kind {
        NodeKind::Cluster => format!("cluster {}", n.cluster.unwrap_or_default()),
        NodeKind::Mesh => {
            let path = n.path.as_deref().unwrap_or("");
            match (&n.group_label, &n.name_label) {
                (Some(g), Some(name)) => format!("{path}\n{g}: {name}"),
                (Some(g), None) => format!("{path}\n{g}"),
                _ => path.to_string(),
            }
        }
    }
}

fn node_style(n: &Node) -> &'static str {
    match n.kind {
        NodeKind::Cluster => ", shape=ellipse, style=filled, fillcolor=lightgray",
        NodeKind::Mesh => "",
    }
}

pub(crate) fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}
