//! Functional units and the expansion that links them through pipe nodes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Vec3;
use crate::scene_graph::{dot_escape, EdgeKind, NodeId, SceneGraph};

pub const FUNCTIONAL_SCHEMA: &str = "cadgraph-functional/1";

pub fn default_pipe_groups() -> BTreeSet<String> {
    ["Pipe assembly"].map(String::from).into()
}

pub fn default_functional_groups() -> BTreeSet<String> {
    ["Valve assembly", "Gauge", "Tank", "Pump Unit"].map(String::from).into()
}

#[derive(Debug, Error, PartialEq)]
pub enum FunctionalError {
    #[error("node {node} belongs to units {first} and {second}")]
    OverlappingUnits { node: NodeId, first: usize, second: usize },
    #[error("unit indices must be 1..k in order; found {found} at position {position}")]
    BadUnitIndex { position: usize, found: usize },
    #[error("invalid functional graph document: {0}")]
    Parse(String),
    #[error("schema {found:?} is not supported (expected {FUNCTIONAL_SCHEMA:?})")]
    SchemaVersionMismatch { found: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionalUnit {
    /// 1-based.
    pub index: usize,
    pub unit_group: String,
    pub members: BTreeSet<NodeId>,
}

/// Group label per mesh node; unlabeled nodes are absent.
pub fn semantic_map(graph: &SceneGraph) -> BTreeMap<NodeId, String> {
    graph
        .mesh_nodes()
        .filter_map(|n| Some((n.id, n.group_label.clone()?)))
        .collect()
}

pub fn unlabeled_mesh_nodes(graph: &SceneGraph) -> Vec<NodeId> {
    graph.mesh_nodes().filter(|n| n.group_label.is_none()).map(|n| n.id).collect()
}

fn smallest_path(graph: &SceneGraph, members: &BTreeSet<NodeId>) -> String {
    members
        .iter()
        .filter_map(|id| graph.nodes.get(id)?.path.clone())
        .min()
        .unwrap_or_default()
}

/// Connected components of same-label mesh nodes over ADJACENT edges, for every
/// label in `functional_groups`. Units are numbered from 1 by smallest member path.
pub fn identify_functional_units(graph: &SceneGraph, functional_groups: &BTreeSet<String>) -> Vec<FunctionalUnit> {
    let s = semantic_map(graph);
    let adj = graph.adjacency_lists();
    let mut seen = BTreeSet::new();
    let mut found: Vec<(String, String, BTreeSet<NodeId>)> = Vec::new();
    for (&id, label) in &s {
        if !functional_groups.contains(label) || seen.contains(&id) {
            continue;
        }
        let mut comp = BTreeSet::from([id]);
        let mut stack = vec![id];
        seen.insert(id);
        while let Some(v) = stack.pop() {
            for &u in &adj[&v] {
                if s.get(&u) == Some(label) && seen.insert(u) {
                    comp.insert(u);
                    stack.push(u);
                }
            }
        }
        found.push((smallest_path(graph, &comp), label.clone(), comp));
    }
    found.sort();
    found
        .into_iter()
        .enumerate()
        .map(|(i, (_, unit_group, members))| FunctionalUnit {
            index: i + 1,
            unit_group,
            members,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitNode {
    pub index: usize,
    pub group: String,
    /// Representative paths of the seed nodes, sorted.
    pub seed_paths: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid: Option<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FunctionalGraph {
    pub units: Vec<UnitNode>,
    /// `(i, j)` with `i < j`.
    pub edges: BTreeSet<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub graph: FunctionalGraph,
    /// Member sets after expansion, same order as the input units.
    pub expanded: Vec<FunctionalUnit>,
    /// Passes of the outer loop, including the final one that claimed nothing.
    pub outer_iterations: usize,
    /// Nodes claimed during expansion.
    pub claimed: BTreeSet<NodeId>,
}

/// Grows every unit through unclaimed neighbours whose group label is in
/// `s_pipe`, one ring per pass, until a pass claims nothing; then links units
/// whose grown member sets contain adjacent nodes.
///
/// Units are visited by ascending index and nodes and neighbours by ascending
/// id, so a pipe node reachable from two units goes to the lower index.
pub fn extract_functional_relations(
    graph: &SceneGraph,
    s: &BTreeMap<NodeId, String>,
    s_pipe: &BTreeSet<String>,
    units: &[FunctionalUnit],
) -> Result<Extraction, FunctionalError> {
    for (pos, u) in units.iter().enumerate() {
        if u.index != pos + 1 {
            return Err(FunctionalError::BadUnitIndex {
                position: pos,
                found: u.index,
            });
        }
    }
    let mut owner: BTreeMap<NodeId, usize> = BTreeMap::new();
    for (i, u) in units.iter().enumerate() {
        for &v in &u.members {
            if let Some(&j) = owner.get(&v) {
                return Err(FunctionalError::OverlappingUnits {
                    node: v,
                    first: units[j].index,
                    second: u.index,
                });
            }
            owner.insert(v, i);
        }
    }
    let adj = graph.adjacency_lists();
    let no_neighbors = Vec::new();
    let mut f: Vec<BTreeSet<NodeId>> = units.iter().map(|u| u.members.clone()).collect();
    let mut marked: BTreeSet<NodeId> = owner.keys().copied().collect();
    let mut claimed = BTreeSet::new();
    let mut outer_iterations = 0;
    loop {
        outer_iterations += 1;
        let before = marked.len();
        for fi in f.iter_mut() {
            let mut new = BTreeSet::new();
            for v in fi.iter() {
                for &u in adj.get(v).unwrap_or(&no_neighbors) {
                    if !marked.contains(&u) && s.get(&u).is_some_and(|l| s_pipe.contains(l)) {
                        new.insert(u);
                        marked.insert(u);
                        claimed.insert(u);
                    }
                }
            }
            fi.extend(new);
        }
        if marked.len() == before {
            break;
        }
    }

    let mut unit_of: BTreeMap<NodeId, usize> = BTreeMap::new();
    for (i, fi) in f.iter().enumerate() {
        for &v in fi {
            unit_of.insert(v, i + 1);
        }
    }
    let mut edges = BTreeSet::new();
    for e in graph.edges_of(EdgeKind::Adjacent) {
        if let (Some(&i), Some(&j)) = (unit_of.get(&e.a), unit_of.get(&e.b)) {
            if i != j {
                edges.insert((i.min(j), i.max(j)));
            }
        }
    }

    let unit_nodes = units
        .iter()
        .map(|u| {
            let nodes: Vec<_> = u.members.iter().filter_map(|id| graph.nodes.get(id)).collect();
            let mut seed_paths: Vec<String> = nodes.iter().filter_map(|n| n.path.clone()).collect();
            seed_paths.sort();
            let centroid = (!nodes.is_empty())
                .then(|| nodes.iter().fold(Vec3::ZERO, |acc, n| acc + n.centroid) / nodes.len() as f64);
            UnitNode {
                index: u.index,
                group: u.unit_group.clone(),
                seed_paths,
                centroid,
            }
        })
        .collect();
    let expanded = units
        .iter()
        .zip(f)
        .map(|(u, members)| FunctionalUnit {
            index: u.index,
            unit_group: u.unit_group.clone(),
            members,
        })
        .collect();
    Ok(Extraction {
        graph: FunctionalGraph {
            units: unit_nodes,
            edges,
        },
        expanded,
        outer_iterations,
        claimed,
    })
}

/// Unit identification followed by extraction, using the graph's own labels.
pub fn functional_graph(
    graph: &SceneGraph,
    s_pipe: &BTreeSet<String>,
    functional_groups: &BTreeSet<String>,
) -> Result<Extraction, FunctionalError> {
    let units = identify_functional_units(graph, functional_groups);
    extract_functional_relations(graph, &semantic_map(graph), s_pipe, &units)
}

#[derive(Serialize, Deserialize)]
struct Document {
    schema: String,
    units: Vec<UnitNode>,
    edges: Vec<[usize; 2]>,
}

impl FunctionalGraph {
    /// Equality ignoring display centroids.
    pub fn same_topology(&self, other: &FunctionalGraph) -> bool {
        self.edges == other.edges
            && self.units.len() == other.units.len()
            && self
                .units
                .iter()
                .zip(&other.units)
                .all(|(a, b)| a.index == b.index && a.group == b.group && a.seed_paths == b.seed_paths)
    }

    pub fn degree(&self, index: usize) -> usize {
        self.edges.iter().filter(|(a, b)| *a == index || *b == index).count()
    }

    pub fn to_json(&self) -> String {
        let doc = Document {
            schema: FUNCTIONAL_SCHEMA.to_string(),
            units: self.units.clone(),
            edges: self.edges.iter().map(|&(a, b)| [a, b]).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("functional graph serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, FunctionalError> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| FunctionalError::Parse(e.to_string()))?;
        let found = v.get("schema").and_then(|s| s.as_str()).unwrap_or("");
        if found != FUNCTIONAL_SCHEMA {
            return Err(FunctionalError::SchemaVersionMismatch {
                found: found.to_string(),
            });
        }
        let doc: Document = serde_json::from_value(v).map_err(|e| FunctionalError::Parse(e.to_string()))?;
        Ok(Self {
            units: doc.units,
            edges: doc.edges.into_iter().map(|[a, b]| (a.min(b), a.max(b))).collect(),
        })
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("graph functional {\n  node [shape=ellipse, fontsize=10];\n");
        for u in &self.units {
            let _ = writeln!(s, "  u{} [label=\"{}\"];", u.index, dot_escape(&format!("{}: {}", u.index, u.group)));
        }
        for (a, b) in &self.edges {
            let _ = writeln!(s, "  u{a} -- u{b};");
        }
        s.push_str("}\n");
        s
    }
}
