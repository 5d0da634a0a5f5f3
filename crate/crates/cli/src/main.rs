use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cadgraph_core::config::{ConfigError, LabelerKind, PipelineConfig};
use cadgraph_core::pipeline::{self as pl, GroundTruthFiles, PipelineError, Runner};
use cadgraph_core::scene_graph::{SceneGraph, Selector};
use cadgraph_core::scene_io::{LengthUnit, SceneFormat};
use cadgraph_core::synth::{generate, suite_case, SynthSpec, SUITE};
use clap::{Args, Parser, Subcommand};

/// Builds scene graphs and functional graphs from triangle-mesh scenes.
#[derive(Parser)]
#[command(name = "cadgraph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Artifact directory shared by all stages.
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    format: Option<SceneFormat>,
    /// Length unit of the input (m, cm, mm, in, ft).
    #[arg(long)]
    units: Option<LengthUnit>,
    #[arg(long)]
    exclude: Vec<String>,
    #[arg(long)]
    ground: Vec<String>,
}

#[derive(Args)]
struct GroupArgs {
    #[arg(long)]
    vthresh: Option<f64>,
    #[arg(long)]
    rmax: Option<f64>,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    min_samples: Option<usize>,
    #[arg(long)]
    cutoff: Option<f64>,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    labeler: Option<LabelerKindArg>,
    /// Path → {group, name} table for the file labeler.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct FunctionalArgs {
    /// Comma-separated connector groups.
    #[arg(long)]
    pipe_groups: Option<String>,
    /// Comma-separated functional unit groups.
    #[arg(long)]
    unit_groups: Option<String>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum LabelerKindArg {
    File,
    Remote,
    None,
}

#[derive(Subcommand)]
enum Command {
    /// Load a scene, apply exclusions and write scene.json.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: IngestArgs,
        /// Extra copy of the ingested scene.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample and voxelize every active mesh.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pitch: Option<f64>,
        #[arg(long)]
        fill_interior: bool,
    },
    /// Merge small meshes into groups.
    Group {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: GroupArgs,
    },
    /// Compute group distances, adjacency and clusters.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: ClusterArgs,
    },
    /// Build the scene graph (with labels from an earlier label stage, if any).
    Graph {
        #[command(flatten)]
        common: Common,
        /// Extra copy of graph.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra copy of the DOT export.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Render the labeling images of selected mesh nodes.
    Render {
        #[command(flatten)]
        common: Common,
        /// Render the node containing this mesh path (repeatable).
        #[arg(long)]
        mesh: Vec<String>,
        /// Node selector: group:<label>, cluster:<n>, path:<glob>, neighbors:<id>.
        #[arg(long)]
        select: Option<Selector>,
        /// Image directory (default: <work-dir>/renders).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Label every mesh node and rewrite the graph.
    Label {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: LabelArgs,
    },
    /// Extract the functional graph.
    Functional {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: FunctionalArgs,
        /// Scene graph to read (default: <work-dir>/graph.json).
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Compare predicted labels and structure with ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        gt: GtArgs,
        /// Predicted labels (default: <work-dir>/labels.json).
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic scene with ground truth.
    Synth {
        #[arg(long, conflicts_with = "case", required_unless_present = "case")]
        spec: Option<PathBuf>,
        /// Bundled case name.
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run ingest through functional extraction (and eval with --gt-dir).
    RunAll {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ingest: IngestArgs,
        #[arg(long)]
        pitch: Option<f64>,
        #[command(flatten)]
        group: GroupArgs,
        #[command(flatten)]
        cluster: ClusterArgs,
        #[command(flatten)]
        label: LabelArgs,
        #[command(flatten)]
        functional: FunctionalArgs,
        /// Directory holding gt_labels.json and friends.
        #[arg(long)]
        gt_dir: Option<PathBuf>,
        /// Same as --work-dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GtArgs {
    /// Ground-truth label table.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Ground-truth functional units.
    #[arg(long)]
    units: Option<PathBuf>,
    #[arg(long)]
    gt_functional: Option<PathBuf>,
    #[arg(long)]
    gt_clusters: Option<PathBuf>,
    /// Directory with the generator's ground-truth files.
    #[arg(long)]
    gt_dir: Option<PathBuf>,
}

impl GtArgs {
    fn files(self) -> Result<GroundTruthFiles, PipelineError> {
        let base = self.gt_dir.as_deref().map(GroundTruthFiles::in_dir);
        let labels = self
            .gt
            .or_else(|| base.as_ref().map(|b| b.labels.clone()))
            .ok_or_else(|| ConfigError::Invalid("eval needs --gt or --gt-dir".into()))?;
        Ok(GroundTruthFiles {
            labels,
            units: self.units.or_else(|| base.as_ref().and_then(|b| b.units.clone())),
            functional: self.gt_functional.or_else(|| base.as_ref().and_then(|b| b.functional.clone())),
            clusters: self.gt_clusters.or_else(|| base.as_ref().and_then(|b| b.clusters.clone())),
        })
    }
}

fn split_groups(s: &str) -> std::collections::BTreeSet<String> {
    s.split(',').map(str::trim).filter(|g| !g.is_empty()).map(String::from).collect()
}

fn base_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut c = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(d) = &common.work_dir {
        c.output_dir = d.clone();
    }
    Ok(c)
}

fn apply_ingest(c: &mut PipelineConfig, a: IngestArgs) {
    if a.input.is_some() {
        c.input = a.input;
    }
    if a.format.is_some() {
        c.input_format = a.format;
    }
    if a.units.is_some() {
        c.units = a.units;
    }
    if !a.exclude.is_empty() {
        c.exclude = a.exclude;
    }
    if !a.ground.is_empty() {
        c.ground = a.ground;
    }
}

fn apply_group(c: &mut PipelineConfig, a: GroupArgs) {
    c.volume_threshold = a.vthresh.unwrap_or(c.volume_threshold);
    c.proximity_r_max = a.rmax.unwrap_or(c.proximity_r_max);
}

fn apply_cluster(c: &mut PipelineConfig, a: ClusterArgs) {
    c.epsilon = a.epsilon.unwrap_or(c.epsilon);
    c.min_samples = a.min_samples.unwrap_or(c.min_samples);
    c.distance_cutoff = a.cutoff.unwrap_or(c.distance_cutoff);
}

fn apply_label(c: &mut PipelineConfig, a: LabelArgs) {
    if let Some(k) = a.labeler {
        c.labeler.kind = match k {
            LabelerKindArg::File => LabelerKind::File,
            LabelerKindArg::Remote => LabelerKind::Remote,
            LabelerKindArg::None => LabelerKind::None,
        };
    }
    if a.labels.is_some() {
        c.labeler.labels = a.labels;
    }
    if a.vocabulary.is_some() {
        c.labeler.vocabulary = a.vocabulary;
    }
    if let Some(e) = a.endpoint {
        c.labeler.remote.endpoint = e;
    }
    if let Some(m) = a.model {
        c.labeler.remote.model = m;
    }
}

fn apply_functional(c: &mut PipelineConfig, a: FunctionalArgs) {
    if let Some(p) = a.pipe_groups {
        c.pipe_groups = split_groups(&p);
    }
    if let Some(u) = a.unit_groups {
        c.functional_groups = split_groups(&u);
    }
}

fn copy_to(dir: &Path, name: &str, dest: Option<&Path>, stage: &'static str) -> Result<(), PipelineError> {
    let Some(dest) = dest else { return Ok(()) };
    std::fs::copy(dir.join(name), dest).map(|_| ()).map_err(|e| PipelineError::Stage {
        stage,
        message: format!("cannot write {}: {e}", dest.display()),
    })
}

fn write_to(dest: Option<&Path>, text: &str, stage: &'static str) -> Result<(), PipelineError> {
    let Some(dest) = dest else { return Ok(()) };
    std::fs::write(dest, text).map_err(|e| PipelineError::Stage {
        stage,
        message: format!("cannot write {}: {e}", dest.display()),
    })
}

fn synth(spec: Option<PathBuf>, case: Option<String>, out_dir: &Path) -> Result<(), PipelineError> {
    let stage_err = |message: String| PipelineError::Stage { stage: "synth", message };
    let spec = match (spec, case) {
        (Some(p), _) => SynthSpec::load(&p).map_err(|e| ConfigError::Invalid(e.to_string()))?,
        (None, Some(name)) => suite_case(&name).ok_or_else(|| {
            ConfigError::Invalid(format!("unknown case {name:?}; bundled cases: {}", SUITE.join(", ")))
        })?,
        (None, None) => unreachable!("clap requires --spec or --case"),
    };
    let out = generate(&spec).map_err(|e| stage_err(e.to_string()))?;
    out.write(out_dir).map_err(|e| stage_err(e.to_string()))?;
    println!("{}", out_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Synth { spec, case, out_dir } => synth(spec, case, &out_dir),
        Command::Ingest { common, args, out } => {
            let mut c = base_config(&common)?;
            apply_ingest(&mut c, args);
            let input = c
                .input
                .clone()
                .ok_or_else(|| ConfigError::Invalid("no input scene given".into()))?;
            let mut r = Runner::new(&c, false)?;
            r.ingest(&input)?;
            copy_to(&r.dir, pl::SCENE_FILE, out.as_deref(), "ingest")
        }
        Command::Preprocess {
            common,
            pitch,
            fill_interior,
        } => {
            let mut c = base_config(&common)?;
            c.voxel_pitch = pitch.unwrap_or(c.voxel_pitch);
            c.fill_interior |= fill_interior;
            let mut r = Runner::new(&c, false)?;
            let scene = pl::load_scene_file(&r.dir, "preprocess")?;
            r.preprocess(&scene).map(|_| ())
        }
        Command::Group { common, args } => {
            let mut c = base_config(&common)?;
            apply_group(&mut c, args);
            let mut r = Runner::new(&c, false)?;
            let geoms = pl::load_geometry(&r.dir)?;
            r.group(&geoms).map(|_| ())
        }
        Command::Cluster { common, args } => {
            let mut c = base_config(&common)?;
            apply_cluster(&mut c, args);
            let mut r = Runner::new(&c, false)?;
            let groups = pl::load_groups(&r.dir, "cluster")?;
            r.cluster(&groups).map(|_| ())
        }
        Command::Graph { common, out, dot } => {
            let c = base_config(&common)?;
            let mut r = Runner::new(&c, false)?;
            let groups = pl::load_groups(&r.dir, "graph")?;
            let clusters = pl::load_clusters(&r.dir)?;
            let labels = pl::load_labels(&r.dir)?;
            r.graph(&groups, &clusters, &labels)?;
            copy_to(&r.dir, pl::GRAPH_FILE, out.as_deref(), "graph")?;
            copy_to(&r.dir, pl::GRAPH_DOT_FILE, dot.as_deref(), "graph")
        }
        Command::Render {
            common,
            mesh,
            select,
            out_dir,
        } => {
            let c = base_config(&common)?;
            let mut r = Runner::new(&c, false)?;
            let scene = pl::load_scene_file(&r.dir, "render")?;
            let graph = pl::load_graph_file(&r.dir, "render")?;
            let ids = if select.is_none() && mesh.is_empty() {
                None
            } else {
                Some(pl::select_nodes(&graph, select.as_ref(), &mesh)?)
            };
            r.render(&graph, &scene, ids.as_deref(), out_dir.as_deref()).map(|_| ())
        }
        Command::Label { common, args } => {
            let mut c = base_config(&common)?;
            apply_label(&mut c, args);
            let mut r = Runner::new(&c, false)?;
            let scene = pl::load_scene_file(&r.dir, "label")?;
            let graph = pl::load_graph_file(&r.dir, "label")?;
            let (_, outcome) = r.label(graph, &scene)?;
            for (node, why) in &outcome.failures {
                eprintln!("warning: {node} left unlabeled: {why}");
            }
            Ok(())
        }
        Command::Functional {
            common,
            args,
            graph,
            out,
            dot,
        } => {
            let mut c = base_config(&common)?;
            apply_functional(&mut c, args);
            let mut r = Runner::new(&c, false)?;
            let g = match &graph {
                Some(p) => std::fs::read_to_string(p)
                    .map_err(|e| e.to_string())
                    .and_then(|t| SceneGraph::from_json_str(&t).map_err(|e| e.to_string()))
                    .map_err(|message| PipelineError::Stage {
                        stage: "functional",
                        message: format!("{}: {message}", p.display()),
                    })?,
                None => pl::load_graph_file(&r.dir, "functional")?,
            };
            let ext = r.functional(&g)?;
            write_to(out.as_deref(), &ext.graph.to_json(), "functional")?;
            write_to(dot.as_deref(), &ext.graph.to_dot(), "functional")
        }
        Command::Eval { common, gt, pred, out } => {
            let c = base_config(&common)?;
            let files = gt.files()?;
            let mut r = Runner::new(&c, false)?;
            let doc = r.eval(pred.as_deref(), &files)?;
            println!(
                "group accuracy {}, name accuracy {}",
                doc.report.group_accuracy_display, doc.report.name_accuracy_display
            );
            copy_to(&r.dir, pl::EVAL_FILE, out.as_deref(), "eval")
        }
        Command::RunAll {
            common,
            ingest,
            pitch,
            group,
            cluster,
            label,
            functional,
            gt_dir,
            out_dir,
        } => {
            let mut c = base_config(&common)?;
            if let Some(d) = out_dir {
                c.output_dir = d;
            }
            apply_ingest(&mut c, ingest);
            c.voxel_pitch = pitch.unwrap_or(c.voxel_pitch);
            apply_group(&mut c, group);
            apply_cluster(&mut c, cluster);
            apply_label(&mut c, label);
            apply_functional(&mut c, functional);
            let summary = pl::run_all(&c)?;
            if let Some(gt) = gt_dir {
                let mut r = Runner::new(&c, false)?;
                let doc = r.eval(None, &GroundTruthFiles::in_dir(&gt))?;
                println!(
                    "group accuracy {}, name accuracy {}, functional match {:?}, clusters match {:?}",
                    doc.report.group_accuracy_display,
                    doc.report.name_accuracy_display,
                    doc.functional_match,
                    doc.clusters_match
                );
            }
            println!(
                "{} mesh nodes, {} clusters, {} functional units, {} functional edges",
                summary.graph.mesh_nodes().count(),
                summary.clusters.clustering.cluster_count(),
                summary.extraction.graph.units.len(),
                summary.extraction.graph.edges.len()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
