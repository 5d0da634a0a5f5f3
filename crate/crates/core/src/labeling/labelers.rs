use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    assemble_label_request, parse_label_response, LabelingError, Provenance, SemanticLabel, Vocabulary,
};
use crate::math::{Box3, Vec3};
use crate::rendering::render_label_images;
use crate::scene_graph::SceneGraph;
use crate::scene_io::Scene;

pub const DEFAULT_CONCURRENCY: usize = 4;
pub const DEFAULT_API_KEY_ENV: &str = "CADGRAPH_API_KEY";

/// What a labeler sees of one mesh node.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTarget {
    pub path: String,
    pub member_paths: Vec<String>,
    pub aabb: Box3,
    pub centroid: Vec3,
}

pub trait Labeler: Sync {
    fn label(&self, target: &LabelTarget, vocabulary: &Vocabulary) -> Result<SemanticLabel, LabelingError>;

    /// Upper bound on requests in flight.
    fn concurrency(&self) -> usize {
        1
    }
}

/// Looks labels up in a path → {group, name} table.
#[derive(Debug, Clone, Default)]
pub struct FileLabeler {
    pub table: BTreeMap<String, LabelPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPair {
    pub group: String,
    pub name: String,
}

impl FileLabeler {
    pub fn from_json_str(text: &str) -> Result<Self, LabelingError> {
        let table = serde_json::from_str(text).map_err(|e| LabelingError::MalformedLabelTable(e.to_string()))?;
        Ok(Self { table })
    }

    pub fn load(path: &Path) -> Result<Self, LabelingError> {
        let text = std::fs::read_to_string(path).map_err(|source| LabelingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn from_labels<'a, I: IntoIterator<Item = (&'a String, &'a SemanticLabel)>>(labels: I) -> Self {
        let table = labels
            .into_iter()
            .map(|(p, l)| {
                (
                    p.clone(),
                    LabelPair {
                        group: l.group.clone(),
                        name: l.name.clone(),
                    },
                )
            })
            .collect();
        Self { table }
    }
}

impl Labeler for FileLabeler {
    /// The representative path wins; otherwise the first member with an entry.
    fn label(&self, target: &LabelTarget, _: &Vocabulary) -> Result<SemanticLabel, LabelingError> {
        std::iter::once(&target.path)
            .chain(&target.member_paths)
            .find_map(|p| self.table.get(p))
            .map(|e| SemanticLabel::new(&e.group, &e.name, Provenance::GroundTruth))
            .ok_or_else(|| LabelingError::NoEntry(target.path.clone()))
    }
}

/// Sends one JSON body, returns the response body.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value) -> Result<String, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value) -> Result<String, String> {
        let mut req = self.agent.post(url);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        resp.body_mut().read_to_string().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub concurrency: usize,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            concurrency: DEFAULT_CONCURRENCY,
            timeout_secs: 120,
        }
    }
}

/// Renders the six images, posts a chat-completion request and parses the answer.
pub struct RemoteLabeler<'s> {
    scene: &'s Scene,
    config: RemoteConfig,
    api_key: String,
    transport: Box<dyn Transport + 's>,
}

impl<'s> RemoteLabeler<'s> {
    /// Reads the key from `config.api_key_env`.
    pub fn new(scene: &'s Scene, config: RemoteConfig) -> Result<Self, LabelingError> {
        let api_key =
            std::env::var(&config.api_key_env).map_err(|_| LabelingError::MissingApiKey(config.api_key_env.clone()))?;
        let transport = Box::new(UreqTransport::new(Duration::from_secs(config.timeout_secs)));
        Ok(Self::with_transport(scene, config, api_key, transport))
    }

    pub fn with_transport(
        scene: &'s Scene,
        config: RemoteConfig,
        api_key: String,
        transport: Box<dyn Transport + 's>,
    ) -> Self {
        Self {
            scene,
            config,
            api_key,
            transport,
        }
    }
}

/// `choices[0].message.content` when present, the raw body otherwise.
fn completion_text(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v["choices"][0]["message"]["content"].as_str().map(str::to_string))
        .unwrap_or_else(|| body.to_string())
}

impl Labeler for RemoteLabeler<'_> {
    fn label(&self, target: &LabelTarget, vocabulary: &Vocabulary) -> Result<SemanticLabel, LabelingError> {
        let members: BTreeSet<String> = target.member_paths.iter().cloned().collect();
        let (images, _) = render_label_images(self.scene, &members, &target.aabb, target.centroid)
            .map_err(|e| LabelingError::Transport(format!("render: {e}")))?;
        let dims = target.aabb.extents().to_array();
        let (_, payload) = assemble_label_request(&target.path, dims, images, vocabulary, &self.config.model)?;
        let headers = vec![("Authorization".to_string(), format!("Bearer {}", self.api_key))];
        let body = self
            .transport
            .post_json(&self.config.endpoint, &headers, &payload)
            .map_err(LabelingError::Transport)?;
        parse_label_response(&completion_text(&body), vocabulary)
    }

    fn concurrency(&self) -> usize {
        self.config.concurrency.max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn run<T>(&self, mut f: impl FnMut() -> Result<T, LabelingError>) -> Result<T, (u32, LabelingError)> {
        let attempts = self.max_attempts.max(1);
        let mut delay = self.backoff_ms;
        let mut k = 1;
        loop {
            match f() {
                Ok(v) => return Ok(v),
                Err(e) if k < attempts && e.is_retryable() => {
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                    delay = delay.saturating_mul(2);
                    k += 1;
                }
                Err(e) => return Err((k, e)),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelingOutcome {
    /// Keyed by representative path.
    pub labels: BTreeMap<String, SemanticLabel>,
    /// Path → error message for nodes left unlabeled.
    pub failures: BTreeMap<String, String>,
    /// Input vocabulary plus admitted proposals.
    pub vocabulary: Vocabulary,
}

pub fn label_targets(graph: &SceneGraph) -> Vec<LabelTarget> {
    graph
        .mesh_nodes()
        .filter_map(|n| {
            Some(LabelTarget {
                path: n.path.clone()?,
                member_paths: n.member_paths.clone(),
                aabb: n.aabb,
                centroid: n.centroid,
            })
        })
        .collect()
}

/// Labels every mesh node. Requests run on up to `labeler.concurrency()`
/// threads against the input vocabulary; new labels are then admitted in
/// path order so the result does not depend on scheduling.
pub fn label_scene(
    graph: &SceneGraph,
    labeler: &dyn Labeler,
    vocabulary: &Vocabulary,
    retry: &RetryPolicy,
) -> LabelingOutcome {
    let targets = label_targets(graph);
    let results: Mutex<BTreeMap<String, Result<SemanticLabel, LabelingError>>> = Mutex::new(BTreeMap::new());
    let next = Mutex::new(0usize);
    let workers = labeler.concurrency().clamp(1, targets.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("index lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(t) = targets.get(i) else { break };
                let r = retry
                    .run(|| labeler.label(t, vocabulary))
                    .map_err(|(attempts, e)| LabelingError::LabelingFailed {
                        path: t.path.clone(),
                        attempts,
                        last: e.to_string(),
                    });
                results.lock().expect("result lock").insert(t.path.clone(), r);
            });
        }
    });

    let mut out = LabelingOutcome {
        vocabulary: vocabulary.clone(),
        ..Default::default()
    };
    for (path, r) in results.into_inner().expect("result lock") {
        match r {
            Ok(l) => {
                out.vocabulary.extend(&l.group, &l.name);
                out.labels.insert(path, l);
            }
            Err(e) => {
                out.failures.insert(path, e.to_string());
            }
        }
    }
    out
}
