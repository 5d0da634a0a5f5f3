//! Label vocabulary, the request/response contract for image-based labeling,
//! and the labelers that fill semantic attributes into the scene graph.

mod labelers;

use std::fmt;
use std::path::Path;

use base64::Engine;
use indexmap::IndexMap;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::rendering::Image;

pub use labelers::{
    label_scene, label_targets, FileLabeler, LabelTarget, Labeler, LabelingOutcome, RemoteConfig, RemoteLabeler,
    RetryPolicy, LabelPair, Transport, UreqTransport, DEFAULT_API_KEY_ENV, DEFAULT_CONCURRENCY,
};

/// Side length of every labeling image.
pub const IMAGE_SIZE: u32 = 512;
/// Context/isolated pairs per request.
pub const VIEW_COUNT: usize = 3;

#[derive(Debug, Error)]
pub enum LabelingError {
    #[error("malformed vocabulary: {0}")]
    MalformedVocabulary(String),
    #[error("could not read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("expected {expected} images, got {got}")]
    MissingImages { expected: usize, got: usize },
    #[error("image {index} is {width}x{height}, expected {size}x{size}", size = IMAGE_SIZE)]
    ImageSize { index: usize, width: u32, height: u32 },
    #[error("unparseable response: {0}")]
    UnparseableResponse(String),
    #[error("label ({group}, {name}) is not in the vocabulary and was not proposed as new")]
    UnknownLabelWithoutProposal { group: String, name: String },
    #[error("malformed label table: {0}")]
    MalformedLabelTable(String),
    #[error("no label entry for {0}")]
    NoEntry(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("missing API key: environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("labeling failed for {path} after {attempts} attempts: {last}")]
    LabelingFailed { path: String, attempts: u32, last: String },
}

impl LabelingError {
    /// Whether another attempt could plausibly succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            LabelingError::UnparseableResponse(_)
                | LabelingError::UnknownLabelWithoutProposal { .. }
                | LabelingError::Transport(_)
        )
    }
}

/// Three-level label tree: an implicit root, groups, and names per group.
///
/// Group order and name order are insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Vocabulary {
    pub groups: IndexMap<String, Vec<String>>,
}

struct UniqueGroups(IndexMap<String, Vec<String>>);

impl<'de> Deserialize<'de> for UniqueGroups {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = UniqueGroups;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from group to a list of names")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> Result<UniqueGroups, A::Error> {
                let mut out = IndexMap::new();
                while let Some((k, v)) = m.next_entry::<String, Vec<String>>()? {
                    if out.contains_key(&k) {
                        return Err(serde::de::Error::custom(format!("duplicate group {k:?}")));
                    }
                    out.insert(k, v);
                }
                Ok(UniqueGroups(out))
            }
        }
        d.deserialize_map(V)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            groups: UniqueGroups,
        }
        let raw = Raw::deserialize(d)?;
        Ok(Vocabulary { groups: raw.groups.0 })
    }
}

impl Vocabulary {
    pub fn from_json_str(text: &str) -> Result<Self, LabelingError> {
        let v: Vocabulary =
            serde_json::from_str(text).map_err(|e| LabelingError::MalformedVocabulary(e.to_string()))?;
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<(), LabelingError> {
        if self.groups.is_empty() {
            return Err(LabelingError::MalformedVocabulary("no groups".into()));
        }
        for (g, names) in &self.groups {
            if g.trim().is_empty() {
                return Err(LabelingError::MalformedVocabulary("empty group name".into()));
            }
            if names.is_empty() {
                return Err(LabelingError::MalformedVocabulary(format!("group {g:?} has no names")));
            }
            for (i, n) in names.iter().enumerate() {
                if n.trim().is_empty() {
                    return Err(LabelingError::MalformedVocabulary(format!("empty name in {g:?}")));
                }
                if names[..i].contains(n) {
                    return Err(LabelingError::MalformedVocabulary(format!("duplicate name {n:?} in {g:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, group: &str, name: &str) -> bool {
        self.groups.get(group).is_some_and(|n| n.iter().any(|x| x == name))
    }

    pub fn name_count(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    /// Appends `(group, name)`, creating the group if needed. Returns whether
    /// anything changed.
    pub fn extend(&mut self, group: &str, name: &str) -> bool {
        let names = self.groups.entry(group.to_string()).or_default();
        if names.iter().any(|n| n == name) {
            return false;
        }
        names.push(name.to_string());
        true
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }
}

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary, LabelingError> {
    let text = std::fs::read_to_string(path).map_err(|source| LabelingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Vocabulary::from_json_str(&text)
}

pub fn extend_vocabulary(v: &Vocabulary, group: &str, name: &str) -> Vocabulary {
    let mut out = v.clone();
    out.extend(group, name);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    GroundTruth,
    Model,
    ProposedNew,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticLabel {
    pub group: String,
    pub name: String,
    pub provenance: Provenance,
}

impl SemanticLabel {
    pub fn new(group: impl Into<String>, name: impl Into<String>, provenance: Provenance) -> Self {
        Self {
            group: group.into(),
            name: name.into(),
            provenance,
        }
    }
}

/// One mesh's labeling request: bounding-box size, three context/isolated
/// image pairs, and the vocabulary the answer must come from.
#[derive(Debug, Clone)]
pub struct LabelRequest {
    pub path: String,
    pub bbox_dims: [f64; 3],
    pub image_pairs: Vec<(Image, Image)>,
    pub vocabulary: Vocabulary,
}

pub fn format_bbox(d: [f64; 3]) -> String {
    format!("{:.3} x {:.3} x {:.3}", d[0], d[1], d[2])
}

const SYSTEM_PROMPT: &str = "You label parts of an industrial plant model. \
Pick a group and a name from the vocabulary. Propose a new name only when nothing fits. \
Reply with one JSON object and nothing else.";

fn request_text(req: &LabelRequest) -> String {
    let vocab = serde_json::to_string(&req.vocabulary).expect("vocabulary serializes");
    format!(
        "Bounding box of the target mesh (meters): {}\n\
         The {} image pairs below come from {} camera views. In each pair the first image shows \
         the whole scene with the target tinted red and the second shows the target alone.\n\
         Vocabulary: {}\n\
         Answer as strict JSON: {{\"group\": string, \"name\": string, \"new_label\": bool}}. \
         Set new_label to true only if the (group, name) pair is not in the vocabulary.",
        format_bbox(req.bbox_dims),
        VIEW_COUNT,
        VIEW_COUNT,
        vocab
    )
}

fn data_uri(img: &Image) -> String {
    format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(img.to_png())
    )
}

/// Builds the request plus a chat-completion payload.
///
/// `images` is ordered pair by pair: context 1, isolated 1, context 2, ...
pub fn assemble_label_request(
    path: &str,
    bbox_dims: [f64; 3],
    images: Vec<Image>,
    vocabulary: &Vocabulary,
    model: &str,
) -> Result<(LabelRequest, Value), LabelingError> {
    if images.len() != 2 * VIEW_COUNT {
        return Err(LabelingError::MissingImages {
            expected: 2 * VIEW_COUNT,
            got: images.len(),
        });
    }
    for (index, img) in images.iter().enumerate() {
        if img.width != IMAGE_SIZE || img.height != IMAGE_SIZE {
            return Err(LabelingError::ImageSize {
                index,
                width: img.width,
                height: img.height,
            });
        }
    }
    let mut it = images.into_iter();
    let mut image_pairs = Vec::with_capacity(VIEW_COUNT);
    while let (Some(c), Some(i)) = (it.next(), it.next()) {
        image_pairs.push((c, i));
    }
    let req = LabelRequest {
        path: path.to_string(),
        bbox_dims,
        image_pairs,
        vocabulary: vocabulary.clone(),
    };
    let mut content = vec![json!({"type": "text", "text": request_text(&req)})];
    for (c, i) in &req.image_pairs {
        content.push(json!({"type": "image_url", "image_url": {"url": data_uri(c)}}));
        content.push(json!({"type": "image_url", "image_url": {"url": data_uri(i)}}));
    }
    let payload = json!({
        "model": model,
        "temperature": 0,
        "messages": [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": content},
        ],
    });
    Ok((req, payload))
}

#[derive(Deserialize)]
struct RawAnswer {
    group: String,
    name: String,
    #[serde(default)]
    new_label: bool,
}

/// First balanced `{...}` block, skipping braces inside JSON strings.
fn first_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

pub fn parse_label_response(text: &str, vocabulary: &Vocabulary) -> Result<SemanticLabel, LabelingError> {
    let raw: RawAnswer = match serde_json::from_str(text.trim()) {
        Ok(r) => r,
        Err(first) => {
            let block = first_object(text).ok_or_else(|| LabelingError::UnparseableResponse(first.to_string()))?;
            serde_json::from_str(block).map_err(|e| LabelingError::UnparseableResponse(e.to_string()))?
        }
    };
    let (group, name) = (raw.group.trim().to_string(), raw.name.trim().to_string());
    if group.is_empty() || name.is_empty() {
        return Err(LabelingError::UnparseableResponse("empty group or name".into()));
    }
    if vocabulary.contains(&group, &name) {
        Ok(SemanticLabel::new(group, name, Provenance::Model))
    } else if raw.new_label {
        Ok(SemanticLabel::new(group, name, Provenance::ProposedNew))
    } else {
        Err(LabelingError::UnknownLabelWithoutProposal { group, name })
    }
}
