//! Stage orchestration. Every stage reads the previous stage's files and
//! writes its own into one output directory, together with a manifest
//! (input hashes, config snapshot, stage timings) and a JSON-lines log.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clustering::{dbscan, Clustering};
use crate::config::{ConfigError, LabelerKind, PipelineConfig};
use crate::evaluation::{evaluate, EvalReport, GtUnit};
use crate::functional::{functional_graph, Extraction, FunctionalGraph};
use crate::geometry::{mesh_geometry, MeshGeometry, PointSet, SamplingOptions, VoxelKey};
use crate::grouping::{classify_meshes, group_small_meshes, Assignment, MeshGroup};
use crate::labeling::{
    label_scene, load_vocabulary, FileLabeler, LabelPair, Labeler, LabelingOutcome, RemoteLabeler, SemanticLabel,
    Vocabulary,
};
use crate::math::{Box3, Vec3};
use crate::rendering::render_label_images;
use crate::scene_graph::{build_scene_graph, DotOptions, EdgeKind, NodeId, SceneGraph, Selector};
use crate::scene_io::{apply_exclusions, load_scene, scene_stats, LoadOptions, Scene};
use crate::spatial_index::{adjacency_pairs, build_grid, pairwise_min_distances, SparseDistanceMap};

pub const MANIFEST_SCHEMA: &str = "cadgraph-manifest/1";

pub const SCENE_FILE: &str = "scene.json";
pub const INGEST_FILE: &str = "ingest.json";
pub const GEOMETRY_FILE: &str = "geometry.json";
pub const PREPROCESS_REPORT_FILE: &str = "preprocess_report.json";
pub const GROUPS_FILE: &str = "groups.json";
pub const GROUP_REPORT_FILE: &str = "group_report.json";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const CLUSTER_REPORT_FILE: &str = "cluster_report.json";
pub const GRAPH_FILE: &str = "graph.json";
pub const GRAPH_DOT_FILE: &str = "graph.dot";
pub const LABELS_FILE: &str = "labels.json";
pub const VOCABULARY_FILE: &str = "vocabulary.json";
pub const FUNCTIONAL_FILE: &str = "functional.json";
pub const FUNCTIONAL_DOT_FILE: &str = "functional.dot";
pub const EXPANSION_FILE: &str = "expansion.json";
pub const EVAL_FILE: &str = "eval.json";
pub const RENDER_DIR: &str = "renders";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "log.jsonl";

/// Stage names in pipeline order.
pub const STAGES: [&str; 9] = [
    "ingest",
    "preprocess",
    "group",
    "cluster",
    "graph",
    "render",
    "label",
    "functional",
    "eval",
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage} stage failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    /// 2 for configuration problems, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 3,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, std::io::Error> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialization cannot fail")
}

fn read_text(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, String> {
    serde_json::from_str(&read_text(path)?).map_err(|e| format!("cannot parse {}: {e}", path.display()))
}

/// Serialized preprocess output: voxel keys per active mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryDoc {
    pub pitch: f64,
    pub meshes: Vec<GeometryRecord>,
    /// Active meshes without vertices, left out of every later stage.
    pub skipped_empty: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub path: String,
    pub aabb: Box3,
    pub volume: f64,
    pub keys: Vec<VoxelKey>,
}

impl GeometryDoc {
    pub fn new(geoms: &[MeshGeometry], pitch: f64, skipped_empty: Vec<String>) -> Self {
        Self {
            pitch,
            meshes: geoms
                .iter()
                .map(|g| GeometryRecord {
                    path: g.path.clone(),
                    aabb: g.aabb,
                    volume: g.volume,
                    keys: g.points.keys.clone(),
                })
                .collect(),
            skipped_empty,
        }
    }

    pub fn geometries(&self) -> Vec<MeshGeometry> {
        self.meshes
            .iter()
            .map(|r| MeshGeometry {
                path: r.path.clone(),
                points: PointSet::from_keys(r.keys.iter().copied().collect(), r.path.clone(), self.pitch),
                aabb: r.aabb,
                volume: r.volume,
            })
            .collect()
    }
}

/// Serialized grouping output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupsDoc {
    pub pitch: f64,
    pub volume_threshold: f64,
    pub proximity_r_max: f64,
    pub groups: Vec<GroupRecord>,
    pub assignments: Vec<Assignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub id: usize,
    pub representative_path: String,
    pub member_paths: Vec<String>,
    pub aabb: Box3,
    pub centroid: Vec3,
    pub keys: Vec<VoxelKey>,
}

impl GroupsDoc {
    pub fn groups(&self) -> Vec<MeshGroup> {
        self.groups
            .iter()
            .map(|g| MeshGroup {
                id: g.id,
                representative_path: g.representative_path.clone(),
                member_paths: g.member_paths.clone(),
                merged_points: PointSet::from_keys(
                    g.keys.iter().copied().collect(),
                    g.representative_path.clone(),
                    self.pitch,
                ),
                aabb: g.aabb,
                centroid: g.centroid,
            })
            .collect()
    }
}

/// Serialized clustering output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersDoc {
    pub clustering: Clustering,
    pub distance_cutoff: f64,
    /// Group pairs within epsilon.
    pub adjacency: Vec<(usize, usize)>,
    pub distances: SparseDistanceMap,
}

/// Per-node labels plus the same labels spread over every member mesh.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelsDoc {
    pub labels: BTreeMap<String, SemanticLabel>,
    pub mesh_labels: BTreeMap<String, LabelPair>,
    pub failures: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionDoc {
    pub outer_iterations: usize,
    pub claimed: Vec<NodeId>,
    /// Unit index → expanded member node ids.
    pub members: BTreeMap<usize, Vec<NodeId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDoc {
    pub report: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub functional_match: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters_match: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub elapsed_ms: f64,
    pub outputs: Vec<String>,
    pub counters: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub version: String,
    pub config: PipelineConfig,
    /// File path → sha256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
}

/// Output bookkeeping handed to each stage body.
pub struct StageCtx<'a> {
    dir: &'a Path,
    outputs: Vec<String>,
    counters: Map<String, Value>,
}

impl StageCtx<'_> {
    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), String> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| format!("cannot create {}: {e}", parent.display()))?;
        }
        std::fs::write(&p, text).map_err(|e| format!("cannot write {}: {e}", p.display()))?;
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<(), String> {
        self.write_text(name, &pretty(v))
    }

    pub fn count(&mut self, key: &str, v: impl Into<Value>) {
        self.counters.insert(key.to_string(), v.into());
    }
}

/// Runs stages against one output directory.
pub struct Runner<'c> {
    pub config: &'c PipelineConfig,
    pub dir: PathBuf,
    records: Vec<StageRecord>,
    inputs: BTreeMap<String, String>,
}

impl<'c> Runner<'c> {
    /// Validates the config and creates the output directory. With `fresh`,
    /// earlier log lines and manifest stages are discarded.
    pub fn new(config: &'c PipelineConfig, fresh: bool) -> Result<Self, PipelineError> {
        config.validate()?;
        let dir = config.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| {
            ConfigError::Invalid(format!("cannot create output directory {}: {e}", dir.display()))
        })?;
        let mut records = Vec::new();
        let mut inputs = BTreeMap::new();
        if fresh {
            let _ = std::fs::remove_file(dir.join(LOG_FILE));
        } else if let Ok(m) = read_json::<Manifest>(&dir.join(MANIFEST_FILE)) {
            records = m.stages;
            inputs = m.inputs;
        }
        Ok(Self {
            config,
            dir,
            records,
            inputs,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Records the sha256 of an input file.
    pub fn hash_input(&mut self, stage: &'static str, path: &Path) -> Result<(), PipelineError> {
        let h = hash_file(path).map_err(|e| PipelineError::Stage {
            stage,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        self.inputs.insert(path.display().to_string(), h);
        Ok(())
    }

    fn log(&self, line: Value) {
        if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(self.dir.join(LOG_FILE)) {
            let _ = writeln!(f, "{line}");
        }
    }

    /// Rewrites the manifest from the records so far.
    pub fn write_manifest(&self) -> Result<(), PipelineError> {
        let mut stages = self.records.clone();
        stages.sort_by_key(|r| STAGES.iter().position(|s| *s == r.stage).unwrap_or(usize::MAX));
        let m = Manifest {
            schema: MANIFEST_SCHEMA.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.clone(),
            inputs: self.inputs.clone(),
            stages,
        };
        std::fs::write(self.dir.join(MANIFEST_FILE), pretty(&m)).map_err(|e| PipelineError::Stage {
            stage: "manifest",
            message: e.to_string(),
        })
    }

    pub fn records(&self) -> &[StageRecord] {
        &self.records
    }

    /// Times `body`, logs start/finish (or error) and records the stage.
    pub fn stage<T>(
        &mut self,
        name: &'static str,
        body: impl FnOnce(&mut StageCtx) -> Result<T, String>,
    ) -> Result<T, PipelineError> {
        self.log(json!({"stage": name, "event": "start"}));
        let t0 = Instant::now();
        let mut ctx = StageCtx {
            dir: &self.dir,
            outputs: Vec::new(),
            counters: Map::new(),
        };
        let result = body(&mut ctx);
        let elapsed_ms = t0.elapsed().as_secs_f64() * 1000.0;
        let StageCtx { outputs, counters, .. } = ctx;
        match result {
            Ok(v) => {
                self.log(json!({"stage": name, "event": "finish", "elapsed_ms": elapsed_ms, "counters": counters}));
                self.records.retain(|r| r.stage != name);
                self.records.push(StageRecord {
                    stage: name.to_string(),
                    elapsed_ms,
                    outputs,
                    counters,
                });
                self.write_manifest()?;
                Ok(v)
            }
            Err(message) => {
                self.log(json!({"stage": name, "event": "error", "elapsed_ms": elapsed_ms, "message": message}));
                let _ = self.write_manifest();
                Err(PipelineError::Stage { stage: name, message })
            }
        }
    }

    pub fn ingest(&mut self, input: &Path) -> Result<Scene, PipelineError> {
        let format = self.config.resolved_format(input)?;
        if input.exists() {
            self.hash_input("ingest", input)?;
        }
        let cfg = self.config;
        self.stage("ingest", |ctx| {
            let scene = load_scene(input, format, &LoadOptions { units: cfg.units }).map_err(|e| e.to_string())?;
            let (scene, report) = apply_exclusions(scene, &cfg.exclude, &cfg.ground).map_err(|e| e.to_string())?;
            let stats = scene_stats(&scene);
            ctx.count("mesh_count", stats.mesh_count);
            ctx.count("active_count", stats.active_count);
            ctx.count("excluded_count", stats.excluded_count);
            ctx.count("ground_count", stats.ground_count);
            ctx.count("face_count", stats.face_count);
            ctx.write_text(SCENE_FILE, &scene.to_json())?;
            ctx.write_json(INGEST_FILE, &json!({"stats": stats, "exclusions": report}))?;
            Ok(scene)
        })
    }

    pub fn preprocess(&mut self, scene: &Scene) -> Result<Vec<MeshGeometry>, PipelineError> {
        let opts = SamplingOptions {
            pitch: self.config.voxel_pitch,
            fill_interior: self.config.fill_interior,
        };
        self.stage("preprocess", |ctx| {
            use rayon::prelude::*;
            let (empty, meshes): (Vec<_>, Vec<_>) = scene.active_meshes().partition(|m| m.vertices.is_empty());
            let skipped: Vec<String> = empty.iter().map(|m| m.path.clone()).collect();
            let geoms: Vec<MeshGeometry> = meshes
                .par_iter()
                .map(|m| mesh_geometry(m, &opts))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            ctx.count("meshes", geoms.len());
            ctx.count("skipped_empty", skipped.len());
            ctx.count("points", geoms.iter().map(|g| g.points.len()).sum::<usize>());
            let counts: BTreeMap<&str, usize> = geoms.iter().map(|g| (g.path.as_str(), g.points.len())).collect();
            ctx.write_json(PREPROCESS_REPORT_FILE, &json!({"point_counts": counts, "skipped_empty": skipped}))?;
            ctx.write_json(GEOMETRY_FILE, &GeometryDoc::new(&geoms, opts.pitch, skipped))?;
            Ok(geoms)
        })
    }

    pub fn group(&mut self, geoms: &[MeshGeometry]) -> Result<Vec<MeshGroup>, PipelineError> {
        let cfg = self.config;
        self.stage("group", |ctx| {
            let class = classify_meshes(geoms, cfg.volume_threshold);
            let out = group_small_meshes(geoms, cfg.volume_threshold, cfg.proximity_r_max).map_err(|e| e.to_string())?;
            ctx.count("small", class.small.len());
            ctx.count("large", class.large.len());
            ctx.count("groups", out.groups.len());
            ctx.count("promoted", out.promoted().count());
            let doc = GroupsDoc {
                pitch: cfg.voxel_pitch,
                volume_threshold: cfg.volume_threshold,
                proximity_r_max: cfg.proximity_r_max,
                groups: out
                    .groups
                    .iter()
                    .map(|g| GroupRecord {
                        id: g.id,
                        representative_path: g.representative_path.clone(),
                        member_paths: g.member_paths.clone(),
                        aabb: g.aabb,
                        centroid: g.centroid,
                        keys: g.merged_points.keys.clone(),
                    })
                    .collect(),
                assignments: out.assignments.clone(),
            };
            ctx.write_json(GROUPS_FILE, &doc)?;
            let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
            for g in &out.groups {
                *histogram.entry(g.member_paths.len()).or_default() += 1;
            }
            ctx.write_json(
                GROUP_REPORT_FILE,
                &json!({"group_count": out.groups.len(), "merge_histogram": histogram}),
            )?;
            Ok(out.groups)
        })
    }

    pub fn cluster(&mut self, groups: &[MeshGroup]) -> Result<ClustersDoc, PipelineError> {
        let cfg = self.config;
        self.stage("cluster", |ctx| {
            let grid = build_grid(groups, cfg.voxel_pitch.max(cfg.distance_cutoff)).map_err(|e| e.to_string())?;
            let distances = pairwise_min_distances(&grid, cfg.distance_cutoff);
            let adjacency = adjacency_pairs(&distances, cfg.epsilon).map_err(|e| e.to_string())?;
            let clustering =
                dbscan(groups.len(), &distances, cfg.epsilon, cfg.min_samples).map_err(|e| e.to_string())?;
            ctx.count("groups", groups.len());
            ctx.count("distance_pairs", distances.len());
            ctx.count("adjacent_pairs", adjacency.len());
            ctx.count("clusters", clustering.cluster_count());
            ctx.count("noise", clustering.noise_count());
            let doc = ClustersDoc {
                clustering,
                distance_cutoff: cfg.distance_cutoff,
                adjacency,
                distances,
            };
            ctx.write_json(CLUSTERS_FILE, &doc)?;
            let members = |ids: &[usize]| -> Vec<&str> {
                ids.iter()
                    .flat_map(|&i| groups[i].member_paths.iter().map(String::as_str))
                    .collect()
            };
            let clusters: BTreeMap<usize, Vec<&str>> =
                doc.clustering.clusters().iter().enumerate().map(|(c, ids)| (c, members(ids))).collect();
            let noise: Vec<usize> = (0..groups.len()).filter(|&i| doc.clustering.labels[i].is_none()).collect();
            ctx.write_json(CLUSTER_REPORT_FILE, &json!({"clusters": clusters, "noise": members(&noise)}))?;
            Ok(doc)
        })
    }

    pub fn graph(
        &mut self,
        groups: &[MeshGroup],
        clusters: &ClustersDoc,
        labels: &BTreeMap<String, SemanticLabel>,
    ) -> Result<SceneGraph, PipelineError> {
        self.stage("graph", |ctx| {
            let g = build_scene_graph(groups, &clusters.clustering, &clusters.adjacency, labels)
                .map_err(|e| e.to_string())?;
            write_graph(ctx, &g)?;
            Ok(g)
        })
    }

    /// Writes the six labeling images of the given mesh nodes (all when
    /// `None`) into `images` (default: the render directory of the output).
    pub fn render(
        &mut self,
        graph: &SceneGraph,
        scene: &Scene,
        nodes: Option<&[NodeId]>,
        images: Option<&Path>,
    ) -> Result<usize, PipelineError> {
        let image_dir = images.map_or_else(|| self.dir.join(RENDER_DIR), Path::to_path_buf);
        self.stage("render", |ctx| {
            let nodes: Vec<_> = match nodes {
                Some(ids) => graph.mesh_nodes().filter(|n| ids.contains(&n.id)).collect(),
                None => graph.mesh_nodes().collect(),
            };
            let mut images = 0;
            let mut warnings = 0;
            for n in nodes.into_iter().filter(|n| n.path.is_some()) {
                let members: BTreeSet<String> = n.member_paths.iter().cloned().collect();
                let (imgs, warn) =
                    render_label_images(scene, &members, &n.aabb, n.centroid).map_err(|e| e.to_string())?;
                warnings += warn.len();
                for (k, img) in imgs.iter().enumerate() {
                    let kind = if k % 2 == 0 { "context" } else { "isolated" };
                    let p = image_dir.join(format!("n{:05}_v{}_{kind}.png", n.id, k / 2));
                    std::fs::create_dir_all(p.parent().expect("render dir")).map_err(|e| e.to_string())?;
                    img.write_png(&p).map_err(|e| e.to_string())?;
                    images += 1;
                }
            }
            ctx.outputs.push(image_dir.display().to_string());
            ctx.count("images", images);
            ctx.count("nothing_visible_warnings", warnings);
            Ok(images)
        })
    }

    /// Labels every mesh node with the configured labeler and rewrites the graph.
    pub fn label(&mut self, mut graph: SceneGraph, scene: &Scene) -> Result<(SceneGraph, LabelingOutcome), PipelineError> {
        let cfg = self.config;
        let lc = &cfg.labeler;
        if let Some(p) = &lc.vocabulary {
            self.hash_input("label", p)?;
        }
        if let (LabelerKind::File, Some(p)) = (lc.kind, &lc.labels) {
            self.hash_input("label", p)?;
        }
        let vocabulary = match &lc.vocabulary {
            Some(p) => load_vocabulary(p).map_err(|e| PipelineError::Stage {
                stage: "label",
                message: e.to_string(),
            })?,
            None if lc.kind == LabelerKind::Remote => {
                return Err(ConfigError::Invalid("the remote labeler needs a vocabulary".into()).into())
            }
            None => Vocabulary::default(),
        };
        let labeler: Box<dyn Labeler + '_> = match lc.kind {
            LabelerKind::File => {
                let p = lc
                    .labels
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("the file labeler needs a labels table".into()))?;
                Box::new(FileLabeler::load(p).map_err(|e| PipelineError::Stage {
                    stage: "label",
                    message: e.to_string(),
                })?)
            }
            LabelerKind::Remote => {
                if lc.remote.endpoint.is_empty() || lc.remote.model.is_empty() {
                    return Err(ConfigError::Invalid("the remote labeler needs an endpoint and a model".into()).into());
                }
                Box::new(RemoteLabeler::new(scene, lc.remote.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
            LabelerKind::None => return Err(ConfigError::Invalid("labeler kind is none".into()).into()),
        };
        self.stage("label", |ctx| {
            let outcome = label_scene(&graph, labeler.as_ref(), &vocabulary, &lc.retry);
            graph.apply_labels(&outcome.labels);
            let mut mesh_labels = BTreeMap::new();
            for n in graph.mesh_nodes() {
                if let (Some(g), Some(name)) = (&n.group_label, &n.name_label) {
                    for p in &n.member_paths {
                        mesh_labels.insert(
                            p.clone(),
                            LabelPair {
                                group: g.clone(),
                                name: name.clone(),
                            },
                        );
                    }
                }
            }
            let mut tally: BTreeMap<String, usize> = BTreeMap::new();
            for l in outcome.labels.values() {
                *tally.entry(l.group.clone()).or_default() += 1;
            }
            ctx.count("labeled", outcome.labels.len());
            ctx.count("failed", outcome.failures.len());
            ctx.count("vocabulary_names", outcome.vocabulary.name_count());
            ctx.count("group_tally", serde_json::to_value(&tally).expect("tally"));
            ctx.write_json(
                LABELS_FILE,
                &LabelsDoc {
                    labels: outcome.labels.clone(),
                    mesh_labels,
                    failures: outcome.failures.clone(),
                },
            )?;
            ctx.write_text(VOCABULARY_FILE, &outcome.vocabulary.to_json())?;
            write_graph(ctx, &graph)?;
            Ok((graph, outcome))
        })
    }

    pub fn functional(&mut self, graph: &SceneGraph) -> Result<Extraction, PipelineError> {
        let cfg = self.config;
        self.stage("functional", |ctx| {
            let ext = functional_graph(graph, &cfg.pipe_groups, &cfg.functional_groups).map_err(|e| e.to_string())?;
            ctx.count("units", ext.graph.units.len());
            ctx.count("edges", ext.graph.edges.len());
            ctx.count("outer_iterations", ext.outer_iterations);
            ctx.count("claimed", ext.claimed.len());
            ctx.count("unlabeled_nodes", crate::functional::unlabeled_mesh_nodes(graph).len());
            ctx.write_text(FUNCTIONAL_FILE, &ext.graph.to_json())?;
            ctx.write_text(FUNCTIONAL_DOT_FILE, &ext.graph.to_dot())?;
            ctx.write_json(
                EXPANSION_FILE,
                &ExpansionDoc {
                    outer_iterations: ext.outer_iterations,
                    claimed: ext.claimed.iter().copied().collect(),
                    members: ext
                        .expanded
                        .iter()
                        .map(|u| (u.index, u.members.iter().copied().collect()))
                        .collect(),
                },
            )?;
            Ok(ext)
        })
    }

    /// Compares predictions (a labels file or a plain path → label table;
    /// default: this output's labels) with ground truth. Functional and
    /// cluster comparisons run when both sides exist.
    pub fn eval(&mut self, pred: Option<&Path>, gt: &GroundTruthFiles) -> Result<EvalDoc, PipelineError> {
        let pred = pred.map_or_else(|| self.dir.join(LABELS_FILE), Path::to_path_buf);
        for p in [&Some(gt.labels.clone()), &gt.units, &gt.functional, &gt.clusters]
            .into_iter()
            .flatten()
        {
            self.hash_input("eval", p)?;
        }
        let fold = self.config.fold_threshold;
        let dir = self.dir.clone();
        self.stage("eval", |ctx| {
            let text = read_text(&pred)?;
            let pred = match serde_json::from_str::<LabelsDoc>(&text) {
                Ok(doc) => doc.mesh_labels,
                Err(_) => serde_json::from_str::<BTreeMap<String, LabelPair>>(&text)
                    .map_err(|e| format!("cannot parse {}: {e}", pred.display()))?,
            };
            let gt_labels: BTreeMap<String, LabelPair> = read_json(&gt.labels)?;
            let gt_units: Vec<GtUnit> = match &gt.units {
                Some(p) => read_json(p)?,
                None => Vec::new(),
            };
            let report = evaluate(&pred, &gt_labels, &gt_units, None, fold).map_err(|e| e.to_string())?;
            let functional_match = match &gt.functional {
                Some(p) if dir.join(FUNCTIONAL_FILE).exists() => {
                    let want = FunctionalGraph::from_json_str(&read_text(p)?).map_err(|e| e.to_string())?;
                    let got = FunctionalGraph::from_json_str(&read_text(&dir.join(FUNCTIONAL_FILE))?)
                        .map_err(|e| e.to_string())?;
                    Some(got.same_topology(&want))
                }
                _ => None,
            };
            let clusters_match = match &gt.clusters {
                Some(p) if dir.join(GRAPH_FILE).exists() => {
                    let want: Vec<Vec<String>> = read_json(p)?;
                    let graph = load_graph(&dir)?;
                    Some(cluster_partition(&graph) == normalize_partition(want))
                }
                _ => None,
            };
            ctx.count("name_accuracy", report.name_accuracy_display.clone());
            ctx.count("group_accuracy", report.group_accuracy_display.clone());
            if let Some(m) = functional_match {
                ctx.count("functional_match", m);
            }
            if let Some(m) = clusters_match {
                ctx.count("clusters_match", m);
            }
            let doc = EvalDoc {
                report,
                functional_match,
                clusters_match,
            };
            ctx.write_json(EVAL_FILE, &doc)?;
            Ok(doc)
        })
    }
}

/// Mesh nodes selected by `selector` or containing one of `mesh_paths`.
pub fn select_nodes(
    graph: &SceneGraph,
    selector: Option<&Selector>,
    mesh_paths: &[String],
) -> Result<Vec<NodeId>, PipelineError> {
    let mut ids = BTreeSet::new();
    if let Some(s) = selector {
        let found = graph.query(s).map_err(|e| stage_io("render")(e.to_string()))?;
        ids.extend(found.into_iter().filter(|n| n.path.is_some()).map(|n| n.id));
    }
    for p in mesh_paths {
        let hit = graph.mesh_nodes().find(|n| n.member_paths.contains(p));
        let n = hit.ok_or_else(|| stage_io("render")(format!("no mesh node contains {p}")))?;
        ids.insert(n.id);
    }
    Ok(ids.into_iter().collect())
}

fn write_graph(ctx: &mut StageCtx, g: &SceneGraph) -> Result<(), String> {
    ctx.count("mesh_nodes", g.mesh_nodes().count());
    ctx.count("cluster_nodes", g.cluster_nodes().count());
    ctx.count("adjacent_edges", g.edges_of(EdgeKind::Adjacent).count());
    ctx.write_text(GRAPH_FILE, &g.to_json())?;
    ctx.write_text(GRAPH_DOT_FILE, &g.to_dot(&DotOptions::default()))
}

/// Ground-truth inputs of the eval stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFiles {
    pub labels: PathBuf,
    pub units: Option<PathBuf>,
    pub functional: Option<PathBuf>,
    pub clusters: Option<PathBuf>,
}

impl GroundTruthFiles {
    /// The generator's file names inside `dir`, skipping those that do not exist.
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |n: &str| Some(dir.join(n)).filter(|p| p.exists());
        Self {
            labels: dir.join("gt_labels.json"),
            units: opt("gt_units.json"),
            functional: opt("gt_functional.json"),
            clusters: opt("gt_clusters.json"),
        }
    }
}

fn stage_io(stage: &'static str) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

pub fn load_scene_file(dir: &Path, stage: &'static str) -> Result<Scene, PipelineError> {
    let text = read_text(&dir.join(SCENE_FILE)).map_err(stage_io(stage))?;
    Scene::from_json_str(&text, None).map_err(|e| stage_io(stage)(e.to_string()))
}

pub fn load_geometry(dir: &Path) -> Result<Vec<MeshGeometry>, PipelineError> {
    let doc: GeometryDoc = read_json(&dir.join(GEOMETRY_FILE)).map_err(stage_io("group"))?;
    Ok(doc.geometries())
}

pub fn load_groups(dir: &Path, stage: &'static str) -> Result<Vec<MeshGroup>, PipelineError> {
    let doc: GroupsDoc = read_json(&dir.join(GROUPS_FILE)).map_err(stage_io(stage))?;
    Ok(doc.groups())
}

pub fn load_clusters(dir: &Path) -> Result<ClustersDoc, PipelineError> {
    read_json(&dir.join(CLUSTERS_FILE)).map_err(stage_io("graph"))
}

fn load_graph(dir: &Path) -> Result<SceneGraph, String> {
    SceneGraph::from_json_str(&read_text(&dir.join(GRAPH_FILE))?).map_err(|e| e.to_string())
}

pub fn load_graph_file(dir: &Path, stage: &'static str) -> Result<SceneGraph, PipelineError> {
    load_graph(dir).map_err(stage_io(stage))
}

/// Labels from an earlier label stage, if any.
pub fn load_labels(dir: &Path) -> Result<BTreeMap<String, SemanticLabel>, PipelineError> {
    let p = dir.join(LABELS_FILE);
    if !p.exists() {
        return Ok(BTreeMap::new());
    }
    let doc: LabelsDoc = read_json(&p).map_err(stage_io("graph"))?;
    Ok(doc.labels)
}

fn normalize_partition(mut p: Vec<Vec<String>>) -> Vec<Vec<String>> {
    for c in &mut p {
        c.sort();
    }
    p.retain(|c| !c.is_empty());
    p.sort();
    p
}

/// Representative paths per cluster (noise nodes as singletons), sorted.
pub fn cluster_partition(graph: &SceneGraph) -> Vec<Vec<String>> {
    let mut by_cluster: BTreeMap<Option<usize>, Vec<String>> = BTreeMap::new();
    let mut out = Vec::new();
    for n in graph.mesh_nodes() {
        let Some(p) = n.path.clone() else { continue };
        match n.cluster {
            Some(c) => by_cluster.entry(Some(c)).or_default().push(p),
            None => out.push(vec![p]),
        }
    }
    out.extend(by_cluster.into_values());
    normalize_partition(out)
}

/// Everything `run_all` produced, in memory.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub scene: Scene,
    pub groups: Vec<MeshGroup>,
    pub clusters: ClustersDoc,
    pub graph: SceneGraph,
    pub labels: Option<LabelingOutcome>,
    pub extraction: Extraction,
    pub stages: Vec<StageRecord>,
}

/// Ingest through functional extraction, writing every artifact.
pub fn run_all(config: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    let input = config
        .input
        .clone()
        .ok_or_else(|| ConfigError::Invalid("no input scene given".into()))?;
    let mut r = Runner::new(config, true)?;
    let scene = r.ingest(&input)?;
    let geoms = r.preprocess(&scene)?;
    let groups = r.group(&geoms)?;
    let clusters = r.cluster(&groups)?;
    let mut graph = r.graph(&groups, &clusters, &BTreeMap::new())?;
    let mut labels = None;
    if config.labeler.kind != LabelerKind::None {
        let (g, outcome) = r.label(graph, &scene)?;
        graph = g;
        labels = Some(outcome);
    }
    let extraction = r.functional(&graph)?;
    r.write_manifest()?;
    Ok(RunSummary {
        scene,
        groups,
        clusters,
        graph,
        labels,
        extraction,
        stages: r.records().to_vec(),
    })
}
