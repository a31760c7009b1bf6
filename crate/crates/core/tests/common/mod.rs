#![allow(dead_code)]

pub mod oracle;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use spatial_grounding::backends::{
    AnswerModel, BackendError, DetectionSet, Grader, ModelAnswer, ObjectDetector, SceneGraph, SceneGraphGenerator,
};
use spatial_grounding::config::RunConfig;
use spatial_grounding::pipeline::Backends;
use spatial_grounding::prompt::PromptTemplates;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn position_dir() -> PathBuf {
    fixtures().join("position")
}

/// The checked-in 20-question position run (oracle model, coin fallback).
pub fn position_config() -> RunConfig {
    RunConfig::load(&position_dir().join("config.toml")).expect("fixture config loads")
}

#[derive(Debug, Default)]
pub struct Calls {
    pub detect: AtomicUsize,
    pub sgg: AtomicUsize,
    pub model: AtomicUsize,
    pub grade: AtomicUsize,
}

impl Calls {
    pub fn detect(&self) -> usize {
        self.detect.load(Ordering::SeqCst)
    }

    pub fn sgg(&self) -> usize {
        self.sgg.load(Ordering::SeqCst)
    }

    pub fn model(&self) -> usize {
        self.model.load(Ordering::SeqCst)
    }

    pub fn grade(&self) -> usize {
        self.grade.load(Ordering::SeqCst)
    }

    pub fn total(&self) -> usize {
        self.detect() + self.sgg() + self.model() + self.grade()
    }
}

struct CountingDetector(Arc<dyn ObjectDetector>, Arc<Calls>);
struct CountingGraphs(Arc<dyn SceneGraphGenerator>, Arc<Calls>);
struct CountingModel(Arc<dyn AnswerModel>, Arc<Calls>);
struct CountingGrader(Arc<dyn Grader>, Arc<Calls>);

impl ObjectDetector for CountingDetector {
    fn backend_id(&self) -> String {
        self.0.backend_id()
    }

    fn detect_objects(&self, image_ref: &str) -> Result<DetectionSet, BackendError> {
        self.1.detect.fetch_add(1, Ordering::SeqCst);
        self.0.detect_objects(image_ref)
    }
}

impl SceneGraphGenerator for CountingGraphs {
    fn backend_id(&self) -> String {
        self.0.backend_id()
    }

    fn generate_scene_graph(&self, image_ref: &str) -> Result<SceneGraph, BackendError> {
        self.1.sgg.fetch_add(1, Ordering::SeqCst);
        self.0.generate_scene_graph(image_ref)
    }
}

impl AnswerModel for CountingModel {
    fn backend_id(&self) -> String {
        self.0.backend_id()
    }

    fn query_mllm(&self, image_ref: Option<&str>, prompt: &str) -> Result<ModelAnswer, BackendError> {
        self.1.model.fetch_add(1, Ordering::SeqCst);
        self.0.query_mllm(image_ref, prompt)
    }
}

impl Grader for CountingGrader {
    fn backend_id(&self) -> String {
        self.0.backend_id()
    }

    fn grade_open_ended(&self, question: &str, ground_truth: &str, prediction: &str) -> Result<f64, BackendError> {
        self.1.grade.fetch_add(1, Ordering::SeqCst);
        self.0.grade_open_ended(question, ground_truth, prediction)
    }
}

/// Wraps every backend of `backends` so calls reaching it are counted.
pub fn counting(backends: Backends) -> (Backends, Arc<Calls>) {
    let calls = Arc::new(Calls::default());
    let wrapped = Backends {
        detector: backends
            .detector
            .map(|d| Arc::new(CountingDetector(d, calls.clone())) as Arc<dyn ObjectDetector>),
        scene_graph: backends
            .scene_graph
            .map(|g| Arc::new(CountingGraphs(g, calls.clone())) as Arc<dyn SceneGraphGenerator>),
        model: Arc::new(CountingModel(backends.model, calls.clone())),
        grader: Arc::new(CountingGrader(backends.grader, calls.clone())),
    };
    (wrapped, calls)
}

/// Backends named by `config`, wrapped for counting.
pub fn counting_from_config(config: &RunConfig) -> (Backends, Arc<Calls>) {
    let backends = Backends::from_config(config, PromptTemplates::builtin()).expect("backends build");
    counting(backends)
}
