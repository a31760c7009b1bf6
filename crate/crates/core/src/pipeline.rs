//! End-to-end evaluation runs.
//!
//! For each sample: extract two entities from the question, fetch detections
//! and a scene graph for its image (once per image, and only when a grounded
//! variant is requested), bind entities to boxes, keep the relevant triples,
//! render every requested prompt variant, query the model and score the
//! answer. Samples are spread over a fixed number of worker threads; records
//! are merged back in manifest order, so the output does not depend on the
//! degree of parallelism.
//!
//! Every backend call goes through the response cache when one is
//! configured. A failing sample is recorded with its error and scored as
//! wrong (yes/no) or 0.0 (graded); the run continues.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::fixture::FixtureError;
use crate::backends::{
    AnswerModel, BackendError, DetectionSet, EchoModel, FallbackGrader, FixtureDetector, FixtureModel,
    FixtureSceneGraphs, GeometryOracleModel, Grader, HttpBackend, ModelAnswer, ObjectDetector, SceneGraph,
    SceneGraphGenerator, SeededCoinModel, WithFallback,
};
use crate::cache::{cache_key, CacheError, CacheKind, ResponseCache};
use crate::config::{ConfigError, ReportFormat, RunConfig, ScriptedModelSpec, Source};
use crate::entities::{EntityExtractor, EntityPair, TagLexicon, Tagger, TaggerError};
use crate::ingest::{load_manifest, IngestError, Sample, SampleSet};
use crate::matching::{filter_triples, match_entities_above, FilteredTriples, GroundedEntities, LexiconError, SynonymLexicon};
use crate::prompt::{PromptTemplates, PromptVariant, TemplateError};
use crate::report::{build_report, emit_report, write_records, EvalReport, ReportError, ReportMeta, RECORDS_FILE};
use crate::scoring::{parse_yes_no, parse_yes_no_text, EvalRecord, Outcome};
use crate::spatial::{KeywordError, RelationKeywords};

pub const RUN_STATS_FILE: &str = "run_stats.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Tagger(#[from] TaggerError),
    #[error(transparent)]
    Keywords(#[from] KeywordError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// Backend calls and cache traffic of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub samples: usize,
    pub records: usize,
    pub failed_records: usize,
    pub detect_calls: u64,
    pub sgg_calls: u64,
    pub model_calls: u64,
    pub grade_calls: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub cache_hit_rate: f64,
    pub started_at_unix_ms: u128,
    pub elapsed_ms: u128,
}

impl RunStats {
    pub fn backend_calls(&self) -> u64 {
        self.detect_calls + self.sgg_calls + self.model_calls + self.grade_calls
    }
}

#[derive(Default)]
struct Counters {
    detect: AtomicU64,
    sgg: AtomicU64,
    model: AtomicU64,
    grade: AtomicU64,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// Result of [`Pipeline::run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub records: Vec<EvalRecord>,
    pub stats: RunStats,
}

impl RunOutcome {
    /// Writes the report formats, `records.jsonl` and `run_stats.json`.
    pub fn write(&self, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>, ReportError> {
        let mut written = emit_report(&self.report, dir, formats)?;
        let records = dir.join(RECORDS_FILE);
        write_records(&self.records, &records)?;
        written.push(records);
        let stats = dir.join(RUN_STATS_FILE);
        let body = serde_json::to_string_pretty(&self.stats).expect("stats serialize") + "\n";
        std::fs::write(&stats, body).map_err(|source| ReportError::Io {
            path: stats.clone(),
            source,
        })?;
        written.push(stats);
        Ok(written)
    }
}

/// Backends used by a run. Detector and scene-graph generator may be absent
/// when only the baseline variant runs.
#[derive(Clone)]
pub struct Backends {
    pub detector: Option<Arc<dyn ObjectDetector>>,
    pub scene_graph: Option<Arc<dyn SceneGraphGenerator>>,
    pub model: Arc<dyn AnswerModel>,
    pub grader: Arc<dyn Grader>,
}

impl Backends {
    pub fn new(model: Arc<dyn AnswerModel>) -> Self {
        Backends {
            detector: None,
            scene_graph: None,
            model,
            grader: Arc::new(FallbackGrader),
        }
    }

    pub fn with_detector(mut self, detector: Arc<dyn ObjectDetector>) -> Self {
        self.detector = Some(detector);
        self
    }

    pub fn with_scene_graph(mut self, scene_graph: Arc<dyn SceneGraphGenerator>) -> Self {
        self.scene_graph = Some(scene_graph);
        self
    }

    pub fn with_grader(mut self, grader: Arc<dyn Grader>) -> Self {
        self.grader = grader;
        self
    }

    /// Builds every backend the config asks for. HTTP clients are blocking,
    /// so this must not run inside an async runtime.
    pub fn from_config(config: &RunConfig, templates: &PromptTemplates) -> Result<Self, PipelineError> {
        let http = |url: &str| HttpBackend::new(url, config.http.clone());
        let mut detector: Option<Arc<dyn ObjectDetector>> = None;
        let mut scene_graph: Option<Arc<dyn SceneGraphGenerator>> = None;
        if config.needs_grounding() {
            detector = Some(match config.detector_source()? {
                Source::Fixture(path) => Arc::new(FixtureDetector::load(&path)?),
                Source::Http(url) => Arc::new(http(&url)?),
                Source::Scripted(_) => unreachable!("detectors have no scripted source"),
            });
            scene_graph = Some(match config.scene_graph_source()? {
                Source::Fixture(path) => Arc::new(FixtureSceneGraphs::load(&path)?),
                Source::Http(url) => Arc::new(http(&url)?),
                Source::Scripted(_) => unreachable!("scene graphs have no scripted source"),
            });
        }
        let model: Arc<dyn AnswerModel> = match config.model_source()? {
            Source::Fixture(path) => Arc::new(FixtureModel::load(&path)?),
            Source::Http(url) => Arc::new(http(&url)?),
            Source::Scripted(spec) => {
                let keywords = match &config.relation_keywords {
                    Some(path) => RelationKeywords::load(path)?,
                    None => RelationKeywords::default(),
                };
                let oracle = || GeometryOracleModel::new(templates.clone(), keywords.clone(), config.relation_params);
                match spec {
                    ScriptedModelSpec::Oracle => Arc::new(oracle()),
                    ScriptedModelSpec::OracleWithCoin => Arc::new(oracle().with_coin_fallback(config.seed)),
                    ScriptedModelSpec::Coin => Arc::new(SeededCoinModel::new(config.seed)),
                    ScriptedModelSpec::Echo(text) => Arc::new(EchoModel::new(text)),
                }
            }
        };
        let grader: Arc<dyn Grader> = match (&config.grader.url, config.grader.fallback) {
            (Some(url), true) => Arc::new(WithFallback::new(Arc::new(http(url)?), Arc::new(FallbackGrader))),
            (Some(url), false) => Arc::new(http(url)?),
            (None, _) => Arc::new(FallbackGrader),
        };
        Ok(Backends {
            detector,
            scene_graph,
            model,
            grader,
        })
    }
}

type Memo<T> = Mutex<HashMap<String, Arc<OnceLock<Result<T, BackendError>>>>>;

/// A configured run, ready to execute over a sample set.
pub struct Pipeline {
    config: RunConfig,
    backends: Backends,
    extractor: EntityExtractor,
    lexicon: SynonymLexicon,
    templates: PromptTemplates,
    cache: Option<ResponseCache>,
}

impl Pipeline {
    /// Loads lexicons, templates, cache and backends named by `config`.
    pub fn from_config(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let templates = load_templates(&config)?;
        let backends = Backends::from_config(&config, &templates)?;
        Self::with_backends(config, backends)
    }

    /// Like [`Pipeline::from_config`] with caller-supplied backends.
    pub fn with_backends(config: RunConfig, backends: Backends) -> Result<Self, PipelineError> {
        if config.variants.is_empty() {
            return Err(ConfigError::Invalid("at least one variant is required".into()).into());
        }
        let templates = load_templates(&config)?;
        let tagger: Arc<dyn Tagger> = match (&config.tagger.url, &config.tag_lexicon_path) {
            (Some(url), _) => Arc::new(HttpBackend::new(url, config.http.clone())?),
            (None, Some(path)) => Arc::new(TagLexicon::load(path)?),
            (None, None) => Arc::new(TagLexicon::builtin()),
        };
        let extractor = EntityExtractor::new(tagger, &config.entity_blocklist);
        let lexicon = match &config.synonym_lexicon_path {
            Some(path) => SynonymLexicon::load(path)?,
            None => SynonymLexicon::new(),
        };
        let cache = config.cache_dir.as_deref().map(ResponseCache::open_dir).transpose()?;
        Ok(Pipeline {
            config,
            backends,
            extractor,
            lexicon,
            templates,
            cache,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Loads the configured manifest and runs over it.
    pub fn run_manifest(&self) -> Result<RunOutcome, PipelineError> {
        let samples = load_manifest(&self.config.manifest, self.config.benchmark)?;
        self.run(&samples)
    }

    pub fn run(&self, samples: &SampleSet) -> Result<RunOutcome, PipelineError> {
        let started_at_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or_default();
        let clock = Instant::now();
        let variants = self.config.variants();
        let run = Run {
            pipeline: self,
            variants: &variants,
            counters: Counters::default(),
            detections: Mutex::default(),
            graphs: Mutex::default(),
        };

        let items = samples.samples();
        let next = AtomicUsize::new(0);
        let workers = self.config.parallelism.clamp(1, items.len().max(1));
        let mut slots: Vec<(usize, Vec<EvalRecord>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    scope.spawn(|| {
                        let mut done = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            let Some(sample) = items.get(i) else { break };
                            done.push((i, run.evaluate(sample)));
                        }
                        done
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker thread panicked"))
                .collect()
        });
        slots.sort_by_key(|(i, _)| *i);
        let records: Vec<EvalRecord> = slots.into_iter().flat_map(|(_, r)| r).collect();

        let report = build_report(
            ReportMeta {
                benchmark: samples.kind(),
                model_name: self.config.model_name.clone(),
                config_hash: self.config.config_hash(),
                base_variant: self.config.base_variant,
                n_samples: samples.len(),
            },
            &variants,
            &records,
        )?;

        let c = &run.counters;
        let (hits, misses) = (c.hits.load(Ordering::Relaxed), c.misses.load(Ordering::Relaxed));
        let stats = RunStats {
            samples: samples.len(),
            records: records.len(),
            failed_records: records.iter().filter(|r| r.error.is_some()).count(),
            detect_calls: c.detect.load(Ordering::Relaxed),
            sgg_calls: c.sgg.load(Ordering::Relaxed),
            model_calls: c.model.load(Ordering::Relaxed),
            grade_calls: c.grade.load(Ordering::Relaxed),
            cache_hits: hits,
            cache_misses: misses,
            cache_hit_rate: if hits + misses == 0 {
                0.0
            } else {
                hits as f64 / (hits + misses) as f64
            },
            started_at_unix_ms,
            elapsed_ms: clock.elapsed().as_millis(),
        };
        Ok(RunOutcome { report, records, stats })
    }
}

fn load_templates(config: &RunConfig) -> Result<PromptTemplates, TemplateError> {
    match &config.template_dir {
        Some(dir) => PromptTemplates::load_dir(dir),
        None => Ok(PromptTemplates::builtin().clone()),
    }
}

/// State shared by the workers of one run.
struct Run<'a> {
    pipeline: &'a Pipeline,
    variants: &'a [PromptVariant],
    counters: Counters,
    detections: Memo<DetectionSet>,
    graphs: Memo<SceneGraph>,
}

impl Run<'_> {
    /// Looks `key` up in the cache, calling `fetch` (and counting it) on a miss.
    fn cached<T, F>(&self, kind: CacheKind, backend_id: &str, parts: &[&str], calls: &AtomicU64, fetch: F) -> Result<T, BackendError>
    where
        T: Serialize + for<'de> Deserialize<'de>,
        F: FnOnce() -> Result<T, BackendError>,
    {
        let Some(cache) = &self.pipeline.cache else {
            calls.fetch_add(1, Ordering::Relaxed);
            return fetch();
        };
        let key = cache_key(kind, backend_id, parts);
        if let Some(hit) = cache.get_as::<T>(&key) {
            self.counters.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.counters.misses.fetch_add(1, Ordering::Relaxed);
        calls.fetch_add(1, Ordering::Relaxed);
        let value = fetch()?;
        if let Err(e) = cache.put_as(kind, backend_id, &key, &value) {
            tracing::warn!(error = %e, "cache write failed");
        }
        Ok(value)
    }

    fn memoized<T, F>(&self, memo: &Memo<T>, image_ref: &str, fetch: F) -> Result<T, BackendError>
    where
        T: Clone,
        F: FnOnce() -> Result<T, BackendError>,
    {
        let cell = {
            let mut map = memo.lock().unwrap_or_else(|e| e.into_inner());
            Arc::clone(map.entry(image_ref.to_string()).or_default())
        };
        cell.get_or_init(fetch).clone()
    }

    fn detections(&self, image_ref: &str) -> Result<DetectionSet, BackendError> {
        let detector = self
            .pipeline
            .backends
            .detector
            .as_ref()
            .ok_or_else(|| BackendError::Unreachable {
                endpoint: "detector".into(),
                reason: "no detector configured".into(),
            })?;
        self.memoized(&self.detections, image_ref, || {
            self.cached(CacheKind::Detect, &detector.backend_id(), &[image_ref], &self.counters.detect, || {
                detector.detect_objects(image_ref)
            })
        })
    }

    fn scene_graph(&self, image_ref: &str) -> Result<SceneGraph, BackendError> {
        let generator = self
            .pipeline
            .backends
            .scene_graph
            .as_ref()
            .ok_or_else(|| BackendError::Unreachable {
                endpoint: "scene_graph".into(),
                reason: "no scene-graph generator configured".into(),
            })?;
        self.memoized(&self.graphs, image_ref, || {
            self.cached(CacheKind::Sgg, &generator.backend_id(), &[image_ref], &self.counters.sgg, || {
                generator.generate_scene_graph(image_ref)
            })
        })
    }

    fn ask(&self, image_ref: Option<&str>, prompt: &str) -> Result<ModelAnswer, BackendError> {
        let model = &self.pipeline.backends.model;
        self.cached(
            CacheKind::Generate,
            &model.backend_id(),
            &[image_ref.unwrap_or(""), prompt],
            &self.counters.model,
            || model.query_mllm(image_ref, prompt),
        )
    }

    fn grade(&self, sample: &Sample, prediction: &str) -> Result<f64, BackendError> {
        let grader = &self.pipeline.backends.grader;
        self.cached(
            CacheKind::Grade,
            &grader.backend_id(),
            &[&sample.question, &sample.ground_truth, prediction],
            &self.counters.grade,
            || grader.grade_open_ended(&sample.question, &sample.ground_truth, prediction),
        )
    }

    /// Grounding context shared by every grounded variant of a sample.
    fn ground(&self, sample: &Sample, pair: &EntityPair) -> Result<(GroundedEntities, FilteredTriples), BackendError> {
        let p = self.pipeline;
        let detections = self.detections(&sample.image_ref)?;
        let graph = self.scene_graph(&sample.image_ref)?;
        let grounded = match_entities_above(pair, &detections, &p.lexicon, p.config.min_detection_confidence);
        let triples = filter_triples(&graph, pair, &p.lexicon);
        Ok((grounded, triples))
    }

    fn evaluate(&self, sample: &Sample) -> Vec<EvalRecord> {
        let p = self.pipeline;
        let needs_grounding = self.variants.iter().any(|v| v.needs_grounding());
        let context = if needs_grounding {
            p.extractor
                .extract(&sample.question)
                .map_err(|e| e.to_string())
                .and_then(|pair| self.ground(sample, &pair).map_err(|e| e.to_string()))
        } else {
            Ok(Default::default())
        };
        let image = p.config.forward_image.then_some(sample.image_ref.as_str());

        self.variants
            .iter()
            .map(|&variant| {
                let result = if variant.needs_grounding() {
                    context.clone()
                } else {
                    Ok(Default::default())
                }
                .and_then(|(grounded, triples)| {
                    let prompt = p.templates.build_prompt(variant, &grounded, &triples, &sample.question);
                    self.ask(image, &prompt.text).map_err(|e| e.to_string())
                })
                .and_then(|answer| self.score(sample, &answer));
                match result {
                    Ok(outcome) => self.record(sample, variant, outcome, None),
                    Err(error) => {
                        tracing::warn!(sample = %sample.id, %variant, %error, "sample failed");
                        self.record(sample, variant, self.failed_outcome(), Some(error))
                    }
                }
            })
            .collect()
    }

    fn score(&self, sample: &Sample, answer: &ModelAnswer) -> Result<Outcome, String> {
        if self.pipeline.config.benchmark.is_yes_no() {
            let parsed = parse_yes_no(answer);
            let correct = parsed.is_correct(&sample.ground_truth);
            Ok(Outcome::Parsed { parsed, correct })
        } else {
            let graded_score = self.grade(sample, &answer.text).map_err(|e| e.to_string())?;
            Ok(Outcome::Graded { graded_score })
        }
    }

    fn failed_outcome(&self) -> Outcome {
        if self.pipeline.config.benchmark.is_yes_no() {
            Outcome::Parsed {
                parsed: parse_yes_no_text(""),
                correct: false,
            }
        } else {
            Outcome::Graded { graded_score: 0.0 }
        }
    }

    fn record(&self, sample: &Sample, variant: PromptVariant, outcome: Outcome, error: Option<String>) -> EvalRecord {
        EvalRecord {
            sample_id: sample.id.clone(),
            image_group: sample.image_group.clone(),
            task: sample.task.clone(),
            capabilities: sample.capabilities.clone(),
            variant,
            outcome,
            error,
        }
    }
}

/// Loads, runs and scores everything named by `config`.
pub fn run_pipeline(config: RunConfig) -> Result<RunOutcome, PipelineError> {
    Pipeline::from_config(config)?.run_manifest()
}
