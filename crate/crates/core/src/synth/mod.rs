//! Procedural pipe scenes with exact ground truth.
//!
//! A spec lists pipe runs (polylines with a radius) and attachments placed by
//! arc-length parameter. Every intended contact is a bit-identical shared
//! vertex; everything else keeps at least [`CLEARANCE`] apart, which
//! [`generate`] verifies before returning.

mod shapes;
mod suite;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::DisjointSet;
use crate::evaluation::GtUnit;
use crate::functional::{FunctionalGraph, UnitNode};
use crate::labeling::{LabelPair, Vocabulary};
use crate::math::{Box3, Vec3};
use crate::scene_io::{Mesh, Scene, SceneError};
use shapes::MeshData;

pub use suite::{adversarial_suite, suite, suite_case, SUITE};

pub const MIN_SEGMENT: f64 = 0.05;
pub const VALVE_HALF_LENGTH: f64 = 0.08;
pub const VALVE_RADIUS_FACTOR: f64 = 1.6;
pub const GAUGE_HOST_HALF_LENGTH: f64 = 0.08;
pub const FLANGE_THICKNESS: f64 = 0.035;
pub const FLANGE_OVERHANG: f64 = 0.04;
pub const FLANGE_SIDES: usize = 64;
pub const TANK_RADIUS: f64 = 0.4;
pub const TANK_HEIGHT: f64 = 1.0;
pub const TANK_SIDES: usize = 24;
pub const BOLT_SIZE: f64 = 0.006;
/// Minimum separation between meshes that are not meant to touch.
pub const CLEARANCE: f64 = 0.031;

const STEM_LENGTH: f64 = 0.06;
const WHEEL_STEM_HALF_WIDTH: f64 = 0.0075;
const WHEEL_RADIUS: f64 = 0.06;
const WHEEL_THICKNESS: f64 = 0.015;
const GAUGE_STEM_HALF_WIDTH: f64 = 0.01;
const DIAL_RADIUS: f64 = 0.04;
const DIAL_THICKNESS: f64 = 0.02;
const DIAL_SIDES: usize = 24;
const SUPPORT_HALF_WIDTH: f64 = 0.02;
const GROUND_MARGIN: f64 = 1.0;
const TOUCH_TOL: f64 = 1e-9;

pub const PIPE_GROUP: &str = "Pipe assembly";
pub const VALVE_GROUP: &str = "Valve assembly";
pub const GAUGE_GROUP: &str = "Gauge";
pub const TANK_GROUP: &str = "Tank";
pub const STRUCTURE_GROUP: &str = "Structure";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Scene(#[from] SceneError),
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::InvalidSpec(msg.into())
}

fn default_sides() -> usize {
    12
}

fn default_max_segment() -> f64 {
    1.0
}

fn default_ports() -> usize {
    3
}

fn default_bolts() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Shuffles vertex and face order; geometry does not depend on it.
    #[serde(default)]
    pub seed: u64,
    pub runs: Vec<RunSpec>,
    #[serde(default)]
    pub attachments: Vec<AttachmentSpec>,
    /// Run pairs that are deliberately close; they only need to stay more
    /// than `epsilon` apart instead of [`CLEARANCE`].
    #[serde(default)]
    pub gap_pairs: Vec<[usize; 2]>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Adds a ground quad at z = 0.
    #[serde(default)]
    pub ground: bool,
}

fn default_epsilon() -> f64 {
    crate::spatial_index::DEFAULT_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub waypoints: Vec<Vec3>,
    pub radius: f64,
    #[serde(default = "default_sides")]
    pub sides: usize,
    #[serde(default = "default_max_segment")]
    pub max_segment_length: f64,
    /// Starts at a port of a tank; `waypoints` then lists the points after it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_from: Option<BranchSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    /// Index of a tank attachment.
    pub attachment: usize,
    /// Port number, 1..ports (port 0 is the tank's own run).
    pub port: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttachmentSpec {
    #[serde(flatten)]
    pub kind: AttachmentKind,
    pub run: usize,
    /// Arc-length parameter in [0, 1]; tanks sit at 0 or 1.
    #[serde(default)]
    pub t: f64,
    /// Mounts a gauge on a valve instead of on the pipe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AttachmentKind {
    Valve,
    Gauge,
    Tank {
        #[serde(default = "default_ports")]
        ports: usize,
    },
    FlangePair {
        #[serde(default = "default_bolts")]
        bolts: usize,
    },
    /// A flange pair carrying `count` bolts.
    BoltCluster { count: usize },
    Support,
}

impl SynthSpec {
    pub fn from_json_str(text: &str) -> Result<Self, SynthError> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialization cannot fail")
    }

    /// Same spec with every waypoint moved by `offset`.
    pub fn translated(&self, offset: Vec3) -> Self {
        let mut s = self.clone();
        for r in &mut s.runs {
            for p in &mut r.waypoints {
                *p += offset;
            }
        }
        s
    }
}

/// Generator output: the scene plus everything the pipeline should recover.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub scene: Scene,
    pub gt_labels: BTreeMap<String, LabelPair>,
    pub gt_units: Vec<GtUnit>,
    pub gt_functional: FunctionalGraph,
    /// Large-mesh paths per cluster; each sorted, sorted by first path.
    pub gt_clusters: Vec<Vec<String>>,
}

impl SynthOutput {
    pub const FILES: [&'static str; 5] = [
        "scene.json",
        "gt_labels.json",
        "gt_units.json",
        "gt_functional.json",
        "gt_clusters.json",
    ];

    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        let io = |path: PathBuf| move |source| SynthError::Io { path, source };
        std::fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
        let docs = [
            self.scene.to_json(),
            pretty(&self.gt_labels),
            pretty(&self.gt_units),
            self.gt_functional.to_json(),
            pretty(&self.gt_clusters),
        ];
        for (name, text) in Self::FILES.iter().zip(docs) {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(io(p.clone()))?;
        }
        let p = dir.join("vocabulary.json");
        std::fs::write(&p, vocabulary().to_json()).map_err(io(p.clone()))?;
        Ok(())
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialization cannot fail")
}

/// Every label the generator emits.
pub fn vocabulary() -> Vocabulary {
    let mut v = Vocabulary::default();
    for (g, names) in [
        (PIPE_GROUP, &["Straight pipe", "Flange", "Bolt"][..]),
        (VALVE_GROUP, &["Valve body", "Handwheel"][..]),
        (GAUGE_GROUP, &["Gauge stem", "Dial"][..]),
        (TANK_GROUP, &["Storage tank"][..]),
        (STRUCTURE_GROUP, &["Pipe support"][..]),
    ] {
        v.groups
            .insert(g.to_string(), names.iter().map(|s| s.to_string()).collect());
    }
    v
}

fn label(group: &str, name: &str) -> LabelPair {
    LabelPair {
        group: group.into(),
        name: name.into(),
    }
}

struct Part {
    path: String,
    data: MeshData,
    label: LabelPair,
    run: usize,
    /// Attachment index of the functional unit this part belongs to.
    unit: Option<usize>,
    small: bool,
}

#[derive(Default)]
struct Builder {
    parts: Vec<Part>,
    intended: BTreeSet<(usize, usize)>,
}

impl Builder {
    fn add(&mut self, path: String, data: MeshData, label: LabelPair, run: usize, unit: Option<usize>) -> usize {
        self.parts.push(Part {
            path,
            data,
            label,
            run,
            unit,
            small: false,
        });
        self.parts.len() - 1
    }

    fn touch(&mut self, a: usize, b: usize) {
        self.intended.insert((a.min(b), a.max(b)));
    }
}

#[derive(Debug, Clone)]
struct Tank {
    run: usize,
    ports: usize,
    rings: Vec<Vec<Vec3>>,
    center: Vec3,
}

impl Tank {
    /// `p` becomes middle-ring vertex 0; `outward` points from the tank along the run.
    fn new(run: usize, ports: usize, p: Vec3, outward: Vec3) -> Self {
        let center = p - outward * TANK_RADIUS;
        let theta0 = outward.y.atan2(outward.x);
        let rings = [-0.5, 0.0, 0.5]
            .iter()
            .enumerate()
            .map(|(j, dz)| {
                (0..TANK_SIDES)
                    .map(|k| {
                        if j == 1 && k == 0 {
                            return p;
                        }
                        let a = theta0 + TAU * k as f64 / TANK_SIDES as f64;
                        Vec3::new(
                            center.x + TANK_RADIUS * a.cos(),
                            center.y + TANK_RADIUS * a.sin(),
                            center.z + dz * TANK_HEIGHT,
                        )
                    })
                    .collect()
            })
            .collect();
        Self {
            run,
            ports,
            rings,
            center,
        }
    }

    fn port(&self, k: usize) -> Vec3 {
        self.rings[1][k * TANK_SIDES / self.ports]
    }

    fn mesh(&self) -> MeshData {
        let half = Vec3::new(0.0, 0.0, TANK_HEIGHT * 0.5);
        shapes::tube_from_rings(self.rings.clone(), (self.center - half, self.center + half))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Feature {
    Valve,
    Flange { bolts: usize },
    Host,
    Support,
}

impl Feature {
    fn half_length(self) -> f64 {
        match self {
            Feature::Valve => VALVE_HALF_LENGTH,
            Feature::Flange { .. } => FLANGE_THICKNESS,
            Feature::Host => GAUGE_HOST_HALF_LENGTH,
            Feature::Support => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
enum ItemKind {
    Pipe,
    Feature(Feature, usize),
}

/// One inline piece of a run: stations share exact points with its neighbours.
#[derive(Debug, Clone)]
struct Item {
    kind: ItemKind,
    stations: Vec<Vec3>,
    axis: Vec3,
}

fn check_spec(spec: &SynthSpec) -> Result<(), SynthError> {
    if spec.runs.is_empty() {
        return Err(invalid("no runs"));
    }
    if spec.epsilon.is_nan() || spec.epsilon <= 0.0 {
        return Err(invalid("epsilon must be positive"));
    }
    for (r, run) in spec.runs.iter().enumerate() {
        if !(run.radius > 0.0 && run.radius.is_finite()) {
            return Err(invalid(format!("run {r}: radius must be positive")));
        }
        if run.sides < 3 {
            return Err(invalid(format!("run {r}: at least 3 sides")));
        }
        if run.max_segment_length.is_nan() || run.max_segment_length < MIN_SEGMENT {
            return Err(invalid(format!("run {r}: max_segment_length below {MIN_SEGMENT}")));
        }
        if run.waypoints.iter().any(|p| !p.is_finite()) {
            return Err(invalid(format!("run {r}: non-finite waypoint")));
        }
        if let Some(b) = run.branch_from {
            match spec.attachments.get(b.attachment).map(|a| a.kind) {
                Some(AttachmentKind::Tank { ports }) => {
                    if b.port == 0 || b.port >= ports {
                        return Err(invalid(format!("run {r}: tank port {} is not in 1..{ports}", b.port)));
                    }
                }
                _ => return Err(invalid(format!("run {r}: branch_from must name a tank attachment"))),
            }
        }
    }
    let mut ports_used = BTreeSet::new();
    for run in &spec.runs {
        if let Some(b) = run.branch_from {
            if !ports_used.insert((b.attachment, b.port)) {
                return Err(invalid(format!("tank {} port {} used twice", b.attachment, b.port)));
            }
        }
    }
    for (i, a) in spec.attachments.iter().enumerate() {
        if a.run >= spec.runs.len() {
            return Err(invalid(format!("attachment {i}: run {} does not exist", a.run)));
        }
        if !(0.0..=1.0).contains(&a.t) {
            return Err(invalid(format!("attachment {i}: t must lie in [0, 1]")));
        }
        match a.kind {
            AttachmentKind::Tank { ports } => {
                if a.t != 0.0 && a.t != 1.0 {
                    return Err(invalid(format!("attachment {i}: tanks sit at t = 0 or t = 1")));
                }
                if !(2..=TANK_SIDES).contains(&ports) {
                    return Err(invalid(format!("attachment {i}: ports must be in 2..={TANK_SIDES}")));
                }
                if a.t == 0.0 && spec.runs[a.run].branch_from.is_some() {
                    return Err(invalid(format!("attachment {i}: a branch run already starts at a tank")));
                }
            }
            AttachmentKind::FlangePair { bolts: n } | AttachmentKind::BoltCluster { count: n } if n > FLANGE_SIDES => {
                return Err(invalid(format!("attachment {i}: at most {FLANGE_SIDES} bolts")));
            }
            _ => {}
        }
        if let Some(h) = a.host {
            if a.kind != AttachmentKind::Gauge {
                return Err(invalid(format!("attachment {i}: only gauges take a host")));
            }
            match spec.attachments.get(h) {
                Some(ha) if ha.kind == AttachmentKind::Valve && ha.host.is_none() && ha.run == a.run => {}
                _ => return Err(invalid(format!("attachment {i}: host must be a valve on the same run"))),
            }
        }
    }
    let mut tank_ends = BTreeSet::new();
    for (i, a) in spec.attachments.iter().enumerate() {
        if matches!(a.kind, AttachmentKind::Tank { .. }) && !tank_ends.insert((a.run, a.t.to_bits())) {
            return Err(invalid(format!("attachment {i}: two tanks at the same run end")));
        }
    }
    for p in &spec.gap_pairs {
        if p[0] >= spec.runs.len() || p[1] >= spec.runs.len() || p[0] == p[1] {
            return Err(invalid(format!("gap pair {p:?} must name two different runs")));
        }
    }
    Ok(())
}

type ResolvedRuns = (Vec<Vec<Vec3>>, BTreeMap<usize, Tank>);

/// Run polylines, resolving branch starts against tank ports.
fn resolve_runs(spec: &SynthSpec) -> Result<ResolvedRuns, SynthError> {
    let n = spec.runs.len();
    let mut points: Vec<Option<Vec<Vec3>>> = vec![None; n];
    let mut tanks = BTreeMap::new();
    loop {
        let mut progress = false;
        for r in 0..n {
            if points[r].is_some() {
                continue;
            }
            let run = &spec.runs[r];
            let mut pts = Vec::new();
            if let Some(b) = run.branch_from {
                let Some(t) = tanks.get(&b.attachment) else { continue };
                pts.push(Tank::port(t, b.port));
            }
            pts.extend(run.waypoints.iter().copied());
            if pts.len() < 2 {
                return Err(invalid(format!("run {r}: needs at least two points")));
            }
            for w in pts.windows(2) {
                if w[0].distance(w[1]) < MIN_SEGMENT {
                    return Err(invalid(format!("run {r}: legs must be at least {MIN_SEGMENT} long")));
                }
            }
            for (i, a) in spec.attachments.iter().enumerate() {
                let AttachmentKind::Tank { ports } = a.kind else { continue };
                if a.run != r {
                    continue;
                }
                let (p, q) = if a.t == 0.0 {
                    (pts[0], pts[1])
                } else {
                    (pts[pts.len() - 1], pts[pts.len() - 2])
                };
                let outward = (q - p).normalized().expect("legs have positive length");
                if outward.z.abs() > 1e-9 {
                    return Err(invalid(format!("attachment {i}: the leg at a tank must be horizontal")));
                }
                tanks.insert(i, Tank::new(r, ports, p, outward));
            }
            points[r] = Some(pts);
            progress = true;
        }
        if !progress {
            break;
        }
    }
    let points: Option<Vec<_>> = points.into_iter().collect();
    Ok((points.ok_or_else(|| invalid("branch runs form a cycle"))?, tanks))
}

/// Splits a run into inline items.
fn layout_run(spec: &SynthSpec, r: usize, pts: &[Vec3]) -> Result<Vec<Item>, SynthError> {
    let run = &spec.runs[r];
    let legs: Vec<(Vec3, Vec3, f64)> = pts.windows(2).map(|w| (w[0], w[1], w[0].distance(w[1]))).collect();
    let total: f64 = legs.iter().map(|l| l.2).sum();
    let mut per_leg: Vec<Vec<(f64, Feature, usize)>> = vec![Vec::new(); legs.len()];
    for (i, a) in spec.attachments.iter().enumerate() {
        if a.run != r || a.host.is_some() {
            continue;
        }
        let feature = match a.kind {
            AttachmentKind::Valve => Feature::Valve,
            AttachmentKind::Gauge => Feature::Host,
            AttachmentKind::FlangePair { bolts } => Feature::Flange { bolts },
            AttachmentKind::BoltCluster { count } => Feature::Flange { bolts: count },
            AttachmentKind::Support => Feature::Support,
            AttachmentKind::Tank { .. } => continue,
        };
        let s = a.t * total;
        let h = feature.half_length();
        let mut start = 0.0;
        let mut placed = false;
        for (li, leg) in legs.iter().enumerate() {
            if s - h >= start - TOUCH_TOL && s + h <= start + leg.2 + TOUCH_TOL {
                per_leg[li].push((s - start, feature, i));
                placed = true;
                break;
            }
            start += leg.2;
        }
        if !placed {
            return Err(invalid(format!("attachment {i}: does not fit on a single leg of run {r}")));
        }
    }

    let mut items = Vec::new();
    for (li, &(a, b, len)) in legs.iter().enumerate() {
        let axis = (b - a).normalized().expect("legs have positive length");
        let at = |local: f64| -> Vec3 {
            if local <= 0.0 {
                a
            } else if local >= len {
                b
            } else {
                a + (b - a) * (local / len)
            }
        };
        let pipes = |items: &mut Vec<Item>, from: (f64, Vec3), to: (f64, Vec3)| {
            let n = ((to.0 - from.0) / run.max_segment_length).ceil().max(1.0) as usize;
            let mut prev = from.1;
            for j in 1..=n {
                let next = if j == n {
                    to.1
                } else {
                    at(from.0 + (to.0 - from.0) * j as f64 / n as f64)
                };
                items.push(Item {
                    kind: ItemKind::Pipe,
                    stations: vec![prev, next],
                    axis,
                });
                prev = next;
            }
        };
        let feats = &mut per_leg[li];
        feats.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut cursor = (0.0, a);
        let mut prev: Option<(Feature, usize)> = None;
        for &(s, f, i) in feats.iter() {
            let lo = s - f.half_length();
            let gap = lo - cursor.0;
            if gap < -TOUCH_TOL {
                return Err(invalid(format!("attachment {i}: overlaps its neighbour on run {r}")));
            }
            let touching = gap <= TOUCH_TOL;
            let start_pt = if touching {
                let ok = matches!(prev, Some((pf, _)) if pf != Feature::Valve && pf != Feature::Support)
                    && f != Feature::Valve
                    && f != Feature::Support;
                if !ok {
                    return Err(invalid(format!(
                        "attachment {i}: needs at least {MIN_SEGMENT} of pipe before it on run {r}"
                    )));
                }
                cursor.1
            } else {
                if gap < MIN_SEGMENT {
                    return Err(invalid(format!(
                        "attachment {i}: needs at least {MIN_SEGMENT} of pipe before it on run {r}"
                    )));
                }
                let p = at(lo);
                pipes(&mut items, cursor, (lo, p));
                p
            };
            match f {
                Feature::Support => {
                    items.push(Item {
                        kind: ItemKind::Feature(f, i),
                        stations: vec![start_pt],
                        axis,
                    });
                    cursor = (s, start_pt);
                }
                _ => {
                    let hi = s + f.half_length();
                    let end = at(hi);
                    items.push(Item {
                        kind: ItemKind::Feature(f, i),
                        stations: vec![start_pt, at(s), end],
                        axis,
                    });
                    cursor = (hi, end);
                }
            }
            prev = Some((f, i));
        }
        let gap = len - cursor.0;
        if gap < MIN_SEGMENT {
            let i = prev.map(|p| p.1).unwrap_or_default();
            return Err(invalid(format!(
                "attachment {i}: needs at least {MIN_SEGMENT} of pipe after it on run {r}"
            )));
        }
        pipes(&mut items, cursor, (len, b));
    }
    Ok(items)
}

fn shuffle(data: MeshData, rng: &mut ChaCha8Rng) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let mut order: Vec<usize> = (0..data.vertices.len()).collect();
    order.shuffle(rng);
    let mut new_index = vec![0u32; order.len()];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new as u32;
    }
    let vertices = order.iter().map(|&i| data.vertices[i]).collect();
    let mut faces: Vec<[u32; 3]> = data
        .faces
        .iter()
        .map(|f| f.map(|i| new_index[i as usize]))
        .collect();
    faces.shuffle(rng);
    (vertices, faces)
}

/// Builds the scene and its ground truth. Deterministic per spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    check_spec(spec)?;
    let (points, tanks) = resolve_runs(spec)?;
    let mut b = Builder::default();
    let mut tank_part: BTreeMap<usize, usize> = BTreeMap::new();
    for (&i, t) in &tanks {
        let path = format!("/run{:02}/a{i:02}_tank/shell", t.run);
        let p = b.add(path, t.mesh(), label(TANK_GROUP, "Storage tank"), t.run, Some(i));
        tank_part.insert(i, p);
    }
    // unit order along each run, as (position, attachment)
    let mut sequences: Vec<Vec<(f64, usize)>> = vec![Vec::new(); spec.runs.len()];
    let mut valve_body: BTreeMap<usize, (usize, Vec<Vec3>, Vec3)> = BTreeMap::new();

    for (r, pts) in points.iter().enumerate() {
        let run = &spec.runs[r];
        let items = layout_run(spec, r, pts)?;
        let prefix = format!("/run{r:02}");
        let mut pipe_no = 0;
        let mut prev_last: Option<usize> = None;
        let mut first_part = None;
        let mut supports = Vec::new();
        let mut total = 0.0;
        for w in pts.windows(2) {
            total += w[0].distance(w[1]);
        }
        for item in &items {
            let (first, last) = match &item.kind {
                ItemKind::Pipe => {
                    let p = b.add(
                        format!("{prefix}/pipe_{pipe_no:03}"),
                        shapes::tube(&item.stations, item.axis, run.radius, run.sides),
                        label(PIPE_GROUP, "Straight pipe"),
                        r,
                        None,
                    );
                    pipe_no += 1;
                    (p, p)
                }
                ItemKind::Feature(Feature::Support, i) => {
                    let before = prev_last.expect("pipe precedes a support");
                    supports.push((*i, item.stations[0], item.axis, before, None));
                    continue;
                }
                ItemKind::Feature(Feature::Host, i) => {
                    let p = b.add(
                        format!("{prefix}/pipe_{pipe_no:03}"),
                        shapes::tube(&item.stations, item.axis, run.radius, run.sides),
                        label(PIPE_GROUP, "Straight pipe"),
                        r,
                        None,
                    );
                    pipe_no += 1;
                    let base = shapes::ring(item.stations[1], item.axis, run.radius, run.sides)[0];
                    let dir = (base - item.stations[1]).normalized().expect("radius is positive");
                    add_gauge(&mut b, &format!("{prefix}/a{i:02}_gauge"), base, dir, r, *i, p);
                    sequences[r].push((spec.attachments[*i].t * total, *i));
                    (p, p)
                }
                ItemKind::Feature(Feature::Valve, i) => {
                    let radius = run.radius * VALVE_RADIUS_FACTOR;
                    let base = format!("{prefix}/a{i:02}_valve");
                    let body = b.add(
                        format!("{base}/body"),
                        shapes::tube(&item.stations, item.axis, radius, run.sides),
                        label(VALVE_GROUP, "Valve body"),
                        r,
                        Some(*i),
                    );
                    let mid_ring = shapes::ring(item.stations[1], item.axis, radius, run.sides);
                    let top = mid_ring[0];
                    let dir = (top - item.stations[1]).normalized().expect("radius is positive");
                    let stem_end = top + dir * STEM_LENGTH;
                    let mut wheel = shapes::tube(&[top, stem_end], dir, WHEEL_STEM_HALF_WIDTH * 2f64.sqrt(), 4);
                    wheel.append(shapes::tube(&[stem_end, stem_end + dir * WHEEL_THICKNESS], dir, WHEEL_RADIUS, DIAL_SIDES));
                    let w = b.add(format!("{base}/wheel"), wheel, label(VALVE_GROUP, "Handwheel"), r, Some(*i));
                    b.touch(body, w);
                    valve_body.insert(*i, (body, mid_ring, item.stations[1]));
                    sequences[r].push((spec.attachments[*i].t * total, *i));
                    (body, body)
                }
                ItemKind::Feature(Feature::Flange { bolts }, i) => {
                    let base = format!("{prefix}/a{i:02}_flange");
                    let radius = run.radius + FLANGE_OVERHANG;
                    let fa = b.add(
                        format!("{base}/a"),
                        shapes::tube(&item.stations[..2], item.axis, radius, FLANGE_SIDES),
                        label(PIPE_GROUP, "Flange"),
                        r,
                        None,
                    );
                    let fb = b.add(
                        format!("{base}/b"),
                        shapes::tube(&item.stations[1..], item.axis, radius, FLANGE_SIDES),
                        label(PIPE_GROUP, "Flange"),
                        r,
                        None,
                    );
                    b.touch(fa, fb);
                    let ring = shapes::ring(item.stations[1], item.axis, radius, FLANGE_SIDES);
                    for k in 0..*bolts {
                        let v = ring[k * FLANGE_SIDES / bolts];
                        let bolt = b.add(
                            format!("{base}/bolt_{k:03}"),
                            shapes::cube(v, BOLT_SIZE * 0.5),
                            label(PIPE_GROUP, "Bolt"),
                            r,
                            None,
                        );
                        b.parts[bolt].small = true;
                        b.touch(bolt, fa);
                        b.touch(bolt, fb);
                    }
                    (fa, fb)
                }
            };
            if let Some(p) = prev_last {
                b.touch(p, first);
            }
            for s in supports.iter_mut().filter(|s| s.4.is_none()) {
                s.4 = Some(first);
            }
            first_part.get_or_insert(first);
            prev_last = Some(last);
        }
        let first_part = first_part.expect("a run has at least one pipe piece");
        let last_part = prev_last.expect("a run has at least one pipe piece");

        for (i, station, axis, before, after) in supports {
            let v = shapes::ring(station, axis, run.radius, run.sides)[run.sides / 2];
            if v.z < MIN_SEGMENT {
                return Err(invalid(format!("attachment {i}: support needs the pipe above z = {MIN_SEGMENT}")));
            }
            let foot = Vec3::new(v.x, v.y, 0.0);
            let post = b.add(
                format!("{prefix}/a{i:02}_support/post"),
                shapes::tube(&[v, foot], Vec3::new(0.0, 0.0, -1.0), SUPPORT_HALF_WIDTH * 2f64.sqrt(), 4),
                label(STRUCTURE_GROUP, "Pipe support"),
                r,
                None,
            );
            b.touch(post, before);
            b.touch(post, after.expect("pipe follows a support"));
        }

        if let Some(br) = run.branch_from {
            b.touch(tank_part[&br.attachment], first_part);
            sequences[r].push((-1.0, br.attachment));
        }
        for (&i, t) in &tanks {
            if t.run != r {
                continue;
            }
            if spec.attachments[i].t == 0.0 {
                b.touch(tank_part[&i], first_part);
                sequences[r].push((-1.0, i));
            } else {
                b.touch(tank_part[&i], last_part);
                sequences[r].push((total + 1.0, i));
            }
        }
    }

    // gauges mounted on valves
    let mut hosted_edges = Vec::new();
    for (i, a) in spec.attachments.iter().enumerate() {
        let Some(h) = a.host else { continue };
        let (body, ring, center) = &valve_body[&h];
        let sides = ring.len();
        let base = ring[sides / 4];
        let dir = (base - *center).normalized().expect("radius is positive");
        let body = *body;
        add_gauge(&mut b, &format!("/run{:02}/a{i:02}_gauge", a.run), base, dir, a.run, i, body);
        hosted_edges.push((i, h));
    }

    for p in &mut b.parts {
        if !p.small {
            let bounds = Box3::from_points(p.data.vertices.iter().copied()).expect("parts have vertices");
            p.small = crate::spatial_index::within(
                crate::geometry::volume_proxy(&bounds, crate::geometry::DEFAULT_PITCH),
                crate::grouping::DEFAULT_VOLUME_THRESHOLD,
            );
            if p.small {
                return Err(invalid(format!("{}: too small to stand on its own", p.path)));
            }
        }
    }
    validate::check_clearances(spec, &b.parts, &b.intended)?;

    let out = ground_truth(spec, &b, &sequences, &hosted_edges);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut meshes = Vec::with_capacity(b.parts.len() + 1);
    let mut bounds: Option<Box3> = None;
    for p in b.parts {
        let pb = Box3::from_points(p.data.vertices.iter().copied()).expect("parts have vertices");
        bounds = Some(bounds.map_or(pb, |x| x.union(&pb)));
        let (vertices, faces) = shuffle(p.data, &mut rng);
        meshes.push(Mesh::new(p.path, vertices, faces));
    }
    if spec.ground {
        let bb = bounds.expect("at least one part").inflate(GROUND_MARGIN);
        let q = shapes::quad(bb.min, bb.max, 0.0);
        let mut m = Mesh::new("/ground", q.vertices, q.faces);
        m.is_ground = true;
        meshes.push(m);
    }
    let scene = Scene::from_meshes(meshes)?;
    Ok(SynthOutput { scene, ..out })
}

fn add_gauge(b: &mut Builder, base: &str, at: Vec3, dir: Vec3, run: usize, unit: usize, host: usize) {
    let stem_end = at + dir * STEM_LENGTH;
    let stem = b.add(
        format!("{base}/stem"),
        shapes::tube(&[at, stem_end], dir, GAUGE_STEM_HALF_WIDTH * 2f64.sqrt(), 4),
        label(GAUGE_GROUP, "Gauge stem"),
        run,
        Some(unit),
    );
    let dial = b.add(
        format!("{base}/dial"),
        shapes::tube(&[stem_end, stem_end + dir * DIAL_THICKNESS], dir, DIAL_RADIUS, DIAL_SIDES),
        label(GAUGE_GROUP, "Dial"),
        run,
        Some(unit),
    );
    b.touch(host, stem);
    b.touch(stem, dial);
}

fn ground_truth(
    spec: &SynthSpec,
    b: &Builder,
    sequences: &[Vec<(f64, usize)>],
    hosted_edges: &[(usize, usize)],
) -> SynthOutput {
    let gt_labels = b.parts.iter().map(|p| (p.path.clone(), p.label.clone())).collect();

    let mut members: BTreeMap<usize, (Vec<String>, String)> = BTreeMap::new();
    for p in &b.parts {
        if let Some(u) = p.unit {
            let e = members.entry(u).or_insert_with(|| (Vec::new(), p.label.group.clone()));
            e.0.push(p.path.clone());
        }
    }
    let mut units: Vec<(Vec<String>, String, usize)> = members
        .into_iter()
        .map(|(a, (mut paths, group))| {
            paths.sort();
            (paths, group, a)
        })
        .collect();
    units.sort_by(|x, y| x.0[0].cmp(&y.0[0]).then_with(|| x.1.cmp(&y.1)));
    let index_of: BTreeMap<usize, usize> = units.iter().enumerate().map(|(k, u)| (u.2, k + 1)).collect();

    let mut edges = BTreeSet::new();
    let mut link = |a: usize, b: usize| {
        let (i, j) = (index_of[&a], index_of[&b]);
        edges.insert((i.min(j), i.max(j)));
    };
    for seq in sequences {
        let mut seq = seq.clone();
        seq.sort_by(|x, y| x.0.total_cmp(&y.0));
        for w in seq.windows(2) {
            link(w[0].1, w[1].1);
        }
    }
    for &(g, h) in hosted_edges {
        link(g, h);
    }

    let gt_units = units
        .iter()
        .map(|(paths, group, _)| GtUnit {
            unit_type: group.clone(),
            meshes: paths.iter().cloned().collect(),
        })
        .collect();
    let gt_functional = FunctionalGraph {
        units: units
            .iter()
            .enumerate()
            .map(|(k, (paths, group, _))| UnitNode {
                index: k + 1,
                group: group.clone(),
                seed_paths: paths.clone(),
                centroid: None,
            })
            .collect(),
        edges,
    };

    let mut ds = DisjointSet::new(spec.runs.len());
    for (r, run) in spec.runs.iter().enumerate() {
        if let Some(br) = run.branch_from {
            ds.union(r, spec.attachments[br.attachment].run);
        }
    }
    let mut clusters: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for p in b.parts.iter().filter(|p| !p.small) {
        clusters.entry(ds.find(p.run)).or_default().push(p.path.clone());
    }
    let mut gt_clusters: Vec<Vec<String>> = clusters
        .into_values()
        .map(|mut c| {
            c.sort();
            c
        })
        .collect();
    gt_clusters.sort();

    SynthOutput {
        scene: Scene::default(),
        gt_labels,
        gt_units,
        gt_functional,
        gt_clusters,
    }
}
