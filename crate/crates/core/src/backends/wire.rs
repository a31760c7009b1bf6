//! JSON payloads exchanged with inference backends.
//!
//! Every capability is a `POST` to its own endpoint:
//!
//! | endpoint    | request                                  | response                         |
//! |-------------|------------------------------------------|----------------------------------|
//! | `/detect`   | `{image, params}`                        | `{detections: [{label, bbox, score?}]}` |
//! | `/sgg`      | `{image, params}`                        | `{triples: [[s, p, o]], scores?}` |
//! | `/generate` | `{image?, prompt, params}`               | `{text}`                         |
//! | `/grade`    | `{question, ground_truth, prediction, params}` | `{score}`                  |
//! | `/tag`      | `{tokens}`                               | `{tags}`                         |
//!
//! `bbox` is `[x, y, w, h]` in pixels. A missing `score` means 1.0.

use serde::{Deserialize, Serialize};

use super::{BBox, BackendError, Detection, DetectionSet, SceneGraph, Triple};

pub const DETECT_PATH: &str = "/detect";
pub const SGG_PATH: &str = "/sgg";
pub const GENERATE_PATH: &str = "/generate";
pub const GRADE_PATH: &str = "/grade";
pub const TAG_PATH: &str = "/tag";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub image: String,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub label: String,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectResponse {
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SggResponse {
    pub triples: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub prompt: String,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeRequest {
    pub question: String,
    pub ground_truth: String,
    pub prediction: String,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeResponse {
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRequest {
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagResponse {
    pub tags: Vec<String>,
}

impl DetectResponse {
    /// Validates and converts, keeping backend order.
    pub fn into_domain(self) -> Result<DetectionSet, BackendError> {
        let detections = self
            .detections
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                if d.label.trim().is_empty() {
                    return Err(BackendError::InvalidPayload(format!("detection {i}: empty label")));
                }
                let bbox = BBox::try_from(d.bbox)
                    .map_err(|e| BackendError::InvalidPayload(format!("detection {i}: {e}")))?;
                let confidence = d.score.unwrap_or(1.0);
                if !(0.0..=1.0).contains(&confidence) {
                    return Err(BackendError::InvalidPayload(format!(
                        "detection {i}: score {confidence} outside [0, 1]"
                    )));
                }
                Ok(Detection {
                    label: d.label,
                    bbox,
                    confidence,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(DetectionSet { detections })
    }

    pub fn from_domain(set: &DetectionSet) -> Self {
        DetectResponse {
            detections: set
                .detections
                .iter()
                .map(|d| WireDetection {
                    label: d.label.clone(),
                    bbox: d.bbox.into(),
                    score: Some(d.confidence),
                })
                .collect(),
        }
    }
}

impl SggResponse {
    pub fn into_domain(self) -> Result<SceneGraph, BackendError> {
        if let Some(scores) = &self.scores {
            if scores.len() != self.triples.len() {
                return Err(BackendError::InvalidPayload(format!(
                    "{} scores for {} triples",
                    scores.len(),
                    self.triples.len()
                )));
            }
        }
        let triples = self
            .triples
            .into_iter()
            .enumerate()
            .map(|(i, parts)| {
                let [subject, predicate, object]: [String; 3] = parts.try_into().map_err(|p: Vec<String>| {
                    BackendError::InvalidPayload(format!("triple {i}: expected 3 parts, got {}", p.len()))
                })?;
                for (name, part) in [("subject", &subject), ("predicate", &predicate), ("object", &object)] {
                    if part.trim().is_empty() {
                        return Err(BackendError::InvalidPayload(format!("triple {i}: empty {name}")));
                    }
                }
                let confidence = self.scores.as_ref().map(|s| s[i]);
                Ok(Triple {
                    subject,
                    predicate,
                    object,
                    confidence,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(SceneGraph { triples })
    }

    pub fn from_domain(graph: &SceneGraph) -> Self {
        let scores: Option<Vec<f64>> = graph.triples.iter().map(|t| t.confidence).collect();
        SggResponse {
            triples: graph
                .triples
                .iter()
                .map(|t| vec![t.subject.clone(), t.predicate.clone(), t.object.clone()])
                .collect(),
            scores,
        }
    }
}
