//! HTTP service exposing local backends over the wire protocol.
//!
//! Any mix of fixture or scripted backends can be mounted, which makes the
//! service a drop-in stand-in for real detector, scene-graph, model, grader
//! and tagger endpoints. Backend calls are synchronous, so each request runs
//! on the blocking thread pool.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;

use crate::backends::wire::{
    DetectResponse, GenerateRequest, GenerateResponse, GradeRequest, GradeResponse, ImageRequest, SggResponse,
    TagRequest, TagResponse, DETECT_PATH, GENERATE_PATH, GRADE_PATH, SGG_PATH, TAG_PATH,
};
use crate::backends::{AnswerModel, BackendError, Grader, ObjectDetector, SceneGraphGenerator};
use crate::entities::{Tagger, Token};

/// Backends served by [`router`]. Unset capabilities answer 404.
#[derive(Clone, Default)]
pub struct ServedBackends {
    pub detector: Option<Arc<dyn ObjectDetector>>,
    pub scene_graph: Option<Arc<dyn SceneGraphGenerator>>,
    pub model: Option<Arc<dyn AnswerModel>>,
    pub grader: Option<Arc<dyn Grader>>,
    pub tagger: Option<Arc<dyn Tagger>>,
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        let status = match &e {
            BackendError::FixtureMiss(_) => StatusCode::NOT_FOUND,
            BackendError::EmptyPrompt | BackendError::ImageUnreadable(_) => StatusCode::BAD_REQUEST,
            BackendError::Timeout { .. } => StatusCode::GATEWAY_TIMEOUT,
            _ => StatusCode::BAD_GATEWAY,
        };
        ApiError(status, e.to_string())
    }
}

fn unmounted(capability: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("no {capability} backend is mounted"))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn detect(State(b): State<ServedBackends>, Json(req): Json<ImageRequest>) -> Result<Json<DetectResponse>, ApiError> {
    let detector = b.detector.ok_or_else(|| unmounted("detector"))?;
    blocking(move || Ok(Json(DetectResponse::from_domain(&detector.detect_objects(&req.image)?)))).await
}

async fn sgg(State(b): State<ServedBackends>, Json(req): Json<ImageRequest>) -> Result<Json<SggResponse>, ApiError> {
    let generator = b.scene_graph.ok_or_else(|| unmounted("scene-graph"))?;
    blocking(move || Ok(Json(SggResponse::from_domain(&generator.generate_scene_graph(&req.image)?)))).await
}

async fn generate(
    State(b): State<ServedBackends>,
    Json(req): Json<GenerateRequest>,
) -> Result<Json<GenerateResponse>, ApiError> {
    let model = b.model.ok_or_else(|| unmounted("model"))?;
    blocking(move || {
        let answer = model.query_mllm(req.image.as_deref(), &req.prompt)?;
        Ok(Json(GenerateResponse { text: answer.text }))
    })
    .await
}

async fn grade(State(b): State<ServedBackends>, Json(req): Json<GradeRequest>) -> Result<Json<GradeResponse>, ApiError> {
    let grader = b.grader.ok_or_else(|| unmounted("grader"))?;
    blocking(move || {
        let score = grader.grade_open_ended(&req.question, &req.ground_truth, &req.prediction)?;
        Ok(Json(GradeResponse { score }))
    })
    .await
}

async fn tag(State(b): State<ServedBackends>, Json(req): Json<TagRequest>) -> Result<Json<TagResponse>, ApiError> {
    let tagger = b.tagger.ok_or_else(|| unmounted("tagger"))?;
    blocking(move || {
        let tokens: Vec<Token> = req
            .tokens
            .into_iter()
            .enumerate()
            .map(|(index, text)| Token { text, pos: None, index })
            .collect();
        let tags = tagger
            .tag(&tokens)
            .map_err(|e| ApiError(StatusCode::BAD_GATEWAY, e.to_string()))?;
        Ok(Json(TagResponse {
            tags: tags.iter().map(|t| t.to_string()).collect(),
        }))
    })
    .await
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(backends: ServedBackends) -> Router {
    Router::new()
        .route("/health", get(health))
        .route(DETECT_PATH, post(detect))
        .route(SGG_PATH, post(sgg))
        .route(GENERATE_PATH, post(generate))
        .route(GRADE_PATH, post(grade))
        .route(TAG_PATH, post(tag))
        .with_state(backends)
}

/// Binds `addr` and serves until the task is dropped.
pub async fn serve(addr: SocketAddr, backends: ServedBackends) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving backends");
    axum::serve(listener, router(backends)).await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{EchoModel, FallbackGrader, HttpBackend, HttpOptions};
    use crate::entities::TagLexicon;

    /// Starts the server on an ephemeral port and returns its base url.
    fn spawn(backends: ServedBackends) -> (tokio::runtime::Runtime, String) {
        let rt = tokio::runtime::Runtime::new().unwrap();
        let listener = rt.block_on(TcpListener::bind("127.0.0.1:0")).unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        rt.spawn(async move { axum::serve(listener, router(backends)).await });
        (rt, url)
    }

    #[test]
    fn round_trips_through_http_client() {
        let (_rt, url) = spawn(ServedBackends {
            model: Some(Arc::new(EchoModel::new("Yes."))),
            grader: Some(Arc::new(FallbackGrader)),
            tagger: Some(Arc::new(TagLexicon::builtin())),
            ..Default::default()
        });
        let client = HttpBackend::new(&url, HttpOptions::default()).unwrap();
        assert_eq!(client.query_mllm(Some("a.png"), "Is it?").unwrap().text, "Yes.");
        assert_eq!(client.grade_open_ended("q", "two", "two cats").unwrap(), 1.0);
        let tokens: Vec<Token> = ["the", "red", "car"]
            .iter()
            .enumerate()
            .map(|(index, t)| Token {
                text: t.to_string(),
                pos: None,
                index,
            })
            .collect();
        assert_eq!(client.tag(&tokens).unwrap(), TagLexicon::builtin().tag(&tokens).unwrap());
    }

    #[test]
    fn unmounted_capability_is_404() {
        let (_rt, url) = spawn(ServedBackends::default());
        let client = HttpBackend::new(
            &url,
            HttpOptions {
                retries: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(matches!(
            client.detect_objects("a.png"),
            Err(BackendError::Backend { status: 404, .. })
        ));
    }
}
