//! Pipeline configuration: one JSON document, every field optional.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functional::{default_functional_groups, default_pipe_groups};
use crate::labeling::{RemoteConfig, RetryPolicy};
use crate::scene_io::{LengthUnit, SceneFormat};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelerKind {
    /// Look labels up in a path → label table.
    #[default]
    File,
    /// Ask a vision-language model over HTTP.
    Remote,
    /// Leave every node unlabeled.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelerConfig {
    pub kind: LabelerKind,
    /// Label table for the file labeler.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Vocabulary; required unless `kind` is `none`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<PathBuf>,
    pub remote: RemoteConfig,
    pub retry: RetryPolicy,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            kind: LabelerKind::File,
            labels: None,
            vocabulary: None,
            remote: RemoteConfig::default(),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Inferred from the input extension when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_format: Option<SceneFormat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub units: Option<LengthUnit>,
    pub output_dir: PathBuf,
    pub voxel_pitch: f64,
    pub fill_interior: bool,
    pub volume_threshold: f64,
    pub proximity_r_max: f64,
    pub epsilon: f64,
    pub min_samples: usize,
    pub distance_cutoff: f64,
    pub pipe_groups: BTreeSet<String>,
    pub functional_groups: BTreeSet<String>,
    pub labeler: LabelerConfig,
    pub exclude: Vec<String>,
    pub ground: Vec<String>,
    /// Histogram buckets smaller than this fold into "Others".
    pub fold_threshold: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            input_format: None,
            units: None,
            output_dir: PathBuf::from("cadgraph-out"),
            voxel_pitch: crate::geometry::DEFAULT_PITCH,
            fill_interior: false,
            volume_threshold: crate::grouping::DEFAULT_VOLUME_THRESHOLD,
            proximity_r_max: crate::grouping::DEFAULT_R_MAX,
            epsilon: crate::spatial_index::DEFAULT_EPSILON,
            min_samples: crate::clustering::DEFAULT_MIN_SAMPLES,
            distance_cutoff: crate::spatial_index::DEFAULT_CUTOFF,
            pipe_groups: default_pipe_groups(),
            functional_groups: default_functional_groups(),
            labeler: LabelerConfig::default(),
            exclude: Vec::new(),
            ground: Vec::new(),
            fold_threshold: crate::evaluation::DEFAULT_FOLD_THRESHOLD,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")))
    }
}

impl PipelineConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let c: Self = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("voxel_pitch", self.voxel_pitch)?;
        positive("volume_threshold", self.volume_threshold)?;
        positive("proximity_r_max", self.proximity_r_max)?;
        positive("epsilon", self.epsilon)?;
        positive("distance_cutoff", self.distance_cutoff)?;
        if self.epsilon > self.distance_cutoff {
            return Err(ConfigError::Invalid(format!(
                "epsilon ({}) exceeds distance_cutoff ({})",
                self.epsilon, self.distance_cutoff
            )));
        }
        if self.min_samples == 0 {
            return Err(ConfigError::Invalid("min_samples must be at least 1".into()));
        }
        if let Some(p) = self.pipe_groups.intersection(&self.functional_groups).next() {
            return Err(ConfigError::Invalid(format!("{p:?} is both a pipe group and a functional group")));
        }
        Ok(())
    }

    /// Format from `input_format`, else from the input extension.
    pub fn resolved_format(&self, input: &Path) -> Result<SceneFormat, ConfigError> {
        if let Some(f) = self.input_format {
            return Ok(f);
        }
        let ext = input
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "obj" => Ok(SceneFormat::Obj),
            "gltf" | "glb" => Ok(SceneFormat::Gltf),
            "json" => Ok(SceneFormat::Json),
            _ => Err(ConfigError::Invalid(format!(
                "cannot infer the format of {}; set input_format",
                input.display()
            ))),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_partial_documents_fill_in() {
        PipelineConfig::default().validate().unwrap();
        let c = PipelineConfig::from_json_str(r#"{"epsilon":0.02,"labeler":{"kind":"none"}}"#).unwrap();
        assert_eq!(c.epsilon, 0.02);
        assert_eq!(c.voxel_pitch, 0.01);
        assert_eq!(c.labeler.kind, LabelerKind::None);
        assert_eq!(c.labeler.retry.max_attempts, 3);
        let back = PipelineConfig::from_json_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            r#"{"epsilon":0.1}"#,
            r#"{"voxel_pitch":0}"#,
            r#"{"min_samples":0}"#,
            r#"{"voxel_pich":0.01}"#,
            r#"{"pipe_groups":["Gauge"]}"#,
        ] {
            assert!(PipelineConfig::from_json_str(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn format_inference() {
        let c = PipelineConfig::default();
        assert_eq!(c.resolved_format(Path::new("a/b.GLB")).unwrap(), SceneFormat::Gltf);
        assert_eq!(c.resolved_format(Path::new("x.obj")).unwrap(), SceneFormat::Obj);
        assert!(c.resolved_format(Path::new("x.usd")).is_err());
    }
}
