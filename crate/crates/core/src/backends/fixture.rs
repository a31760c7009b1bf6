//! File-fixture backends.
//!
//! A fixtures directory holds up to three line-delimited files:
//!
//! * `detections.jsonl`: `{"image_ref": .., "detections": [{label, bbox, score?}]}`
//! * `scenegraphs.jsonl`: `{"image_ref": .., "triples": [[s, p, o]], "scores"?: [..]}`
//! * `answers.jsonl`: `{"key": .., "image_ref": .., "text": ..}` where `key` is
//!   [`answer_key`] of the image reference and prompt.
//!
//! Payloads are validated when served, not when loaded, so a single bad entry
//! fails only the samples that use it.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::wire::{DetectResponse, SggResponse, WireDetection};
use super::{AnswerModel, BackendError, DetectionSet, ModelAnswer, ObjectDetector, SceneGraph, SceneGraphGenerator};
use crate::text::stable_hash;

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const SCENE_GRAPHS_FILE: &str = "scenegraphs.jsonl";
pub const ANSWERS_FILE: &str = "answers.jsonl";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture file not found: {0}")]
    Missing(PathBuf),
    #[error("{path}:{line}: malformed fixture record: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Fixture key of a model answer.
pub fn answer_key(image_ref: Option<&str>, prompt: &str) -> String {
    stable_hash(["generate", image_ref.unwrap_or(""), prompt])
}

fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, FixtureError> {
    if !path.is_file() {
        return Err(FixtureError::Missing(path.to_path_buf()));
    }
    let content = fs::read_to_string(path).map_err(|source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    content
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(idx, line)| {
            serde_json::from_str(line).map_err(|e| FixtureError::Malformed {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

fn index_first<T>(path: &Path, records: Vec<(String, T)>) -> HashMap<String, T> {
    let mut map = HashMap::with_capacity(records.len());
    for (key, value) in records {
        if map.contains_key(&key) {
            tracing::warn!(fixture = %path.display(), key, "duplicate fixture key, keeping the first");
            continue;
        }
        map.insert(key, value);
    }
    map
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_ref: String,
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneGraphRecord {
    pub image_ref: String,
    pub triples: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct FixtureDetector {
    source: PathBuf,
    entries: HashMap<String, Vec<WireDetection>>,
}

impl FixtureDetector {
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let records: Vec<DetectionRecord> = read_records(path)?;
        let entries = index_first(path, records.into_iter().map(|r| (r.image_ref, r.detections)).collect());
        Ok(FixtureDetector {
            source: path.to_path_buf(),
            entries,
        })
    }

    pub fn from_dir(dir: &Path) -> Result<Self, FixtureError> {
        Self::load(&dir.join(DETECTIONS_FILE))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ObjectDetector for FixtureDetector {
    fn backend_id(&self) -> String {
        format!("fixture:{}", self.source.display())
    }

    fn detect_objects(&self, image_ref: &str) -> Result<DetectionSet, BackendError> {
        let detections = self
            .entries
            .get(image_ref)
            .ok_or_else(|| BackendError::FixtureMiss(image_ref.to_string()))?;
        DetectResponse {
            detections: detections.clone(),
        }
        .into_domain()
    }
}

#[derive(Debug, Clone)]
pub struct FixtureSceneGraphs {
    source: PathBuf,
    entries: HashMap<String, SggResponse>,
}

impl FixtureSceneGraphs {
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let records: Vec<SceneGraphRecord> = read_records(path)?;
        let entries = index_first(
            path,
            records
                .into_iter()
                .map(|r| {
                    (
                        r.image_ref,
                        SggResponse {
                            triples: r.triples,
                            scores: r.scores,
                        },
                    )
                })
                .collect(),
        );
        Ok(FixtureSceneGraphs {
            source: path.to_path_buf(),
            entries,
        })
    }

    pub fn from_dir(dir: &Path) -> Result<Self, FixtureError> {
        Self::load(&dir.join(SCENE_GRAPHS_FILE))
    }
}

impl SceneGraphGenerator for FixtureSceneGraphs {
    fn backend_id(&self) -> String {
        format!("fixture:{}", self.source.display())
    }

    fn generate_scene_graph(&self, image_ref: &str) -> Result<SceneGraph, BackendError> {
        self.entries
            .get(image_ref)
            .ok_or_else(|| BackendError::FixtureMiss(image_ref.to_string()))?
            .clone()
            .into_domain()
    }
}

/// Replays recorded model answers keyed by [`answer_key`].
#[derive(Debug, Clone)]
pub struct FixtureModel {
    source: PathBuf,
    entries: HashMap<String, String>,
}

impl FixtureModel {
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let records: Vec<AnswerRecord> = read_records(path)?;
        let entries = index_first(path, records.into_iter().map(|r| (r.key, r.text)).collect());
        Ok(FixtureModel {
            source: path.to_path_buf(),
            entries,
        })
    }

    pub fn from_dir(dir: &Path) -> Result<Self, FixtureError> {
        Self::load(&dir.join(ANSWERS_FILE))
    }
}

impl AnswerModel for FixtureModel {
    fn backend_id(&self) -> String {
        format!("fixture:{}", self.source.display())
    }

    fn query_mllm(&self, image_ref: Option<&str>, prompt: &str) -> Result<ModelAnswer, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let key = answer_key(image_ref, prompt);
        let text = self
            .entries
            .get(&key)
            .ok_or_else(|| BackendError::FixtureMiss(format!("{} / answer {key}", image_ref.unwrap_or(""))))?;
        Ok(ModelAnswer {
            text: text.clone(),
            backend_id: self.backend_id(),
            latency_ms: 0,
        })
    }
}

/// Forwards to another model and appends every answer to an answers fixture.
pub struct RecordingModel {
    inner: Arc<dyn AnswerModel>,
    path: PathBuf,
    out: Mutex<fs::File>,
}

impl RecordingModel {
    pub fn new(inner: Arc<dyn AnswerModel>, path: &Path) -> Result<Self, FixtureError> {
        let out = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| FixtureError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(RecordingModel {
            inner,
            path: path.to_path_buf(),
            out: Mutex::new(out),
        })
    }
}

impl AnswerModel for RecordingModel {
    fn backend_id(&self) -> String {
        self.inner.backend_id()
    }

    fn query_mllm(&self, image_ref: Option<&str>, prompt: &str) -> Result<ModelAnswer, BackendError> {
        let answer = self.inner.query_mllm(image_ref, prompt)?;
        let record = AnswerRecord {
            key: answer_key(image_ref, prompt),
            image_ref: image_ref.map(str::to_string),
            text: answer.text.clone(),
        };
        let mut line = serde_json::to_vec(&record).expect("record serializes");
        line.push(b'\n');
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = out.write_all(&line) {
            tracing::warn!(fixture = %self.path.display(), error = %e, "failed to record answer");
        }
        Ok(answer)
    }
}
