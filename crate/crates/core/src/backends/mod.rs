//! Clients for the external inference capabilities.
//!
//! Four capabilities are consumed: object detection, scene-graph generation,
//! multimodal answering and open-ended grading. Each has a trait here and
//! three kinds of implementation: HTTP/JSON ([`http`]), line-delimited
//! fixture files ([`fixture`]) and in-process scripted stand-ins
//! ([`scripted`]).

pub mod fixture;
pub mod http;
pub mod scripted;
pub mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixture::{FixtureDetector, FixtureModel, FixtureSceneGraphs, RecordingModel};
pub use http::{HttpBackend, HttpOptions, ImageEncoding};
pub use scripted::{EchoModel, FallbackGrader, GeometryOracleModel, SeededCoinModel, WithFallback};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("backend {endpoint} unreachable: {reason}")]
    Unreachable { endpoint: String, reason: String },
    #[error("backend returned status {status}: {body}")]
    Backend { status: u16, body: String },
    #[error("backend payload violates invariants: {0}")]
    InvalidPayload(String),
    #[error("backend did not answer within {budget_ms} ms")]
    Timeout { budget_ms: u64 },
    #[error("fixture has no entry for {0:?}")]
    FixtureMiss(String),
    #[error("cannot read image {0:?}")]
    ImageUnreadable(String),
    #[error("prompt is empty")]
    EmptyPrompt,
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Unreachable { .. } | BackendError::Timeout { .. } => true,
            BackendError::Backend { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, Error, PartialEq)]
#[error("invalid box ({x}, {y}, {w}, {h}): coordinates must be finite and non-negative, sizes positive")]
pub struct InvalidBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Axis-aligned box in pixels; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, InvalidBox> {
        let b = BBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), InvalidBox> {
        let BBox { x, y, w, h } = *self;
        let finite = [x, y, w, h].iter().all(|v| v.is_finite());
        if finite && x >= 0.0 && y >= 0.0 && w > 0.0 && h > 0.0 {
            Ok(())
        } else {
            Err(InvalidBox { x, y, w, h })
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = InvalidBox;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub bbox: BBox,
    pub confidence: f64,
}

/// Detections in backend order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl Triple {
    pub fn new(subject: &str, predicate: &str, object: &str) -> Self {
        Triple {
            subject: subject.to_string(),
            predicate: predicate.to_string(),
            object: object.to_string(),
            confidence: None,
        }
    }

    /// True when the subject/predicate/object strings coincide.
    pub fn same_parts(&self, other: &Triple) -> bool {
        self.subject == other.subject && self.predicate == other.predicate && self.object == other.object
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub triples: Vec<Triple>,
}

impl SceneGraph {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelAnswer {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
}

pub trait ObjectDetector: Send + Sync {
    fn backend_id(&self) -> String;
    fn detect_objects(&self, image_ref: &str) -> Result<DetectionSet, BackendError>;
}

pub trait SceneGraphGenerator: Send + Sync {
    fn backend_id(&self) -> String;
    fn generate_scene_graph(&self, image_ref: &str) -> Result<SceneGraph, BackendError>;
}

/// A multimodal model. `image_ref` is `None` for text-only queries.
pub trait AnswerModel: Send + Sync {
    fn backend_id(&self) -> String;
    fn query_mllm(&self, image_ref: Option<&str>, prompt: &str) -> Result<ModelAnswer, BackendError>;
}

/// Scores an open-ended prediction against the ground truth in `[0, 1]`.
pub trait Grader: Send + Sync {
    fn backend_id(&self) -> String;
    fn grade_open_ended(
        &self,
        question: &str,
        ground_truth: &str,
        prediction: &str,
    ) -> Result<f64, BackendError>;
}

/// Clamps a grader score into `[0, 1]`; NaN is rejected.
pub fn clamp_score(score: f64) -> Result<f64, BackendError> {
    if score.is_nan() {
        return Err(BackendError::InvalidPayload("grader returned NaN".into()));
    }
    Ok(score.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_validation() {
        assert!(BBox::new(0.0, 0.0, 1.0, 1.0).is_ok());
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(-1.0, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(serde_json::from_str::<BBox>("[1, 2, 0, 4]").is_err());
        let b: BBox = serde_json::from_str("[10, 20, 50, 30]").unwrap();
        assert_eq!(b.center(), (35.0, 35.0));
        assert_eq!(serde_json::to_string(&b).unwrap(), "[10.0,20.0,50.0,30.0]");
    }

    #[test]
    fn clamping() {
        assert_eq!(clamp_score(1.5).unwrap(), 1.0);
        assert_eq!(clamp_score(-0.1).unwrap(), 0.0);
        assert_eq!(clamp_score(0.5).unwrap(), 0.5);
        assert!(clamp_score(f64::NAN).is_err());
    }
}
