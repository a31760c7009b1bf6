//! HTTP/JSON client for remote inference services.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::wire::{
    DetectResponse, GenerateRequest, GenerateResponse, GradeRequest, GradeResponse, ImageRequest, SggResponse,
    TagRequest, TagResponse, DETECT_PATH, GENERATE_PATH, GRADE_PATH, SGG_PATH, TAG_PATH,
};
use super::{
    clamp_score, AnswerModel, BackendError, DetectionSet, Grader, ModelAnswer, ObjectDetector, SceneGraph,
    SceneGraphGenerator,
};
use crate::entities::{Pos, Tagger, TaggerError, Token};

/// How the `image` request field is filled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageEncoding {
    /// The image reference string as-is.
    #[default]
    Path,
    /// File bytes, base64-encoded. The reference is resolved against
    /// `image_root` when set.
    Base64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpOptions {
    pub timeout_ms: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub bearer_token: Option<String>,
    pub image_encoding: ImageEncoding,
    pub image_root: Option<PathBuf>,
}

impl Default for HttpOptions {
    fn default() -> Self {
        HttpOptions {
            timeout_ms: 60_000,
            retries: 2,
            backoff_ms: 250,
            bearer_token: None,
            image_encoding: ImageEncoding::Path,
            image_root: None,
        }
    }
}

/// One remote service. The same value can act as any capability; which
/// endpoint is called depends on the trait method used.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    options: HttpOptions,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, options: HttpOptions) -> Result<Self, BackendError> {
        let base_url = base_url.into().trim_end_matches('/').to_string();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(options.timeout_ms))
            .build()
            .map_err(|e| BackendError::Unreachable {
                endpoint: base_url.clone(),
                reason: e.to_string(),
            })?;
        Ok(HttpBackend {
            base_url,
            options,
            client,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn image_field(&self, image_ref: &str) -> Result<String, BackendError> {
        match self.options.image_encoding {
            ImageEncoding::Path => Ok(image_ref.to_string()),
            ImageEncoding::Base64 => {
                let path = match &self.options.image_root {
                    Some(root) => root.join(image_ref),
                    None => PathBuf::from(image_ref),
                };
                let bytes =
                    std::fs::read(&path).map_err(|_| BackendError::ImageUnreadable(path.display().to_string()))?;
                Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
            }
        }
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let mut attempt = 0;
        loop {
            match self.post_once(path, body) {
                Err(e) if e.is_retryable() && attempt < self.options.retries => {
                    let delay = self.options.backoff_ms.saturating_mul(1 << attempt.min(16));
                    tracing::debug!(endpoint = path, attempt, error = %e, "retrying backend call");
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn post_once<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let mut request = self.client.post(&url).json(body);
        if let Some(token) = &self.options.bearer_token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| self.transport_error(&url, e))?;
        let status = response.status();
        let text = response.text().map_err(|e| self.transport_error(&url, e))?;
        if !status.is_success() {
            return Err(BackendError::Backend {
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::InvalidPayload(format!("{url}: {e}")))
    }

    fn transport_error(&self, url: &str, e: reqwest::Error) -> BackendError {
        if e.is_timeout() {
            BackendError::Timeout {
                budget_ms: self.options.timeout_ms,
            }
        } else {
            BackendError::Unreachable {
                endpoint: url.to_string(),
                reason: e.to_string(),
            }
        }
    }
}

impl ObjectDetector for HttpBackend {
    fn backend_id(&self) -> String {
        format!("http:{}{}", self.base_url, DETECT_PATH)
    }

    fn detect_objects(&self, image_ref: &str) -> Result<DetectionSet, BackendError> {
        let body = ImageRequest {
            image: self.image_field(image_ref)?,
            params: Default::default(),
        };
        self.post::<_, DetectResponse>(DETECT_PATH, &body)?.into_domain()
    }
}

impl SceneGraphGenerator for HttpBackend {
    fn backend_id(&self) -> String {
        format!("http:{}{}", self.base_url, SGG_PATH)
    }

    fn generate_scene_graph(&self, image_ref: &str) -> Result<SceneGraph, BackendError> {
        let body = ImageRequest {
            image: self.image_field(image_ref)?,
            params: Default::default(),
        };
        self.post::<_, SggResponse>(SGG_PATH, &body)?.into_domain()
    }
}

impl AnswerModel for HttpBackend {
    fn backend_id(&self) -> String {
        format!("http:{}{}", self.base_url, GENERATE_PATH)
    }

    fn query_mllm(&self, image_ref: Option<&str>, prompt: &str) -> Result<ModelAnswer, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let body = GenerateRequest {
            image: image_ref.map(|r| self.image_field(r)).transpose()?,
            prompt: prompt.to_string(),
            params: Default::default(),
        };
        let started = Instant::now();
        let response: GenerateResponse = self.post(GENERATE_PATH, &body)?;
        Ok(ModelAnswer {
            text: response.text,
            backend_id: AnswerModel::backend_id(self),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

impl Grader for HttpBackend {
    fn backend_id(&self) -> String {
        format!("http:{}{}", self.base_url, GRADE_PATH)
    }

    fn grade_open_ended(&self, question: &str, ground_truth: &str, prediction: &str) -> Result<f64, BackendError> {
        let body = GradeRequest {
            question: question.to_string(),
            ground_truth: ground_truth.to_string(),
            prediction: prediction.to_string(),
            params: Default::default(),
        };
        let response: GradeResponse = self.post(GRADE_PATH, &body)?;
        clamp_score(response.score)
    }
}

impl Tagger for HttpBackend {
    fn tag(&self, tokens: &[Token]) -> Result<Vec<Pos>, TaggerError> {
        let body = TagRequest {
            tokens: tokens.iter().map(|t| t.text.clone()).collect(),
        };
        let response: TagResponse = self
            .post(TAG_PATH, &body)
            .map_err(|e| TaggerError::Backend(e.to_string()))?;
        response
            .tags
            .iter()
            .map(|t| t.parse::<Pos>().map_err(TaggerError::Backend))
            .collect()
    }
}
