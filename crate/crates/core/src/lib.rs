//! Grounded visual-question prompting and benchmark evaluation.
//!
//! The pipeline takes a benchmark question about an image, extracts the two
//! entities whose relation is being asked about, binds them to object
//! detections and scene-graph triples produced by external backends, renders
//! one of four prompt variants and sends it to a multimodal model. Answers are
//! scored under MME (accuracy + accuracy+) or MM-Vet (graded, per capability)
//! rules and summarized in ablation-style reports.
//!
//! Every backend has a file-fixture implementation, so full runs are
//! reproducible without any model weights.

pub mod backends;
pub mod cache;
pub mod config;
pub mod entities;
pub mod ingest;
pub mod matching;
pub mod pipeline;
pub mod prompt;
pub mod report;
pub mod scoring;
pub mod server;
pub mod spatial;
pub mod text;

pub use backends::{BBox, Detection, DetectionSet, ModelAnswer, SceneGraph, Triple};
pub use entities::{Entity, EntityExtractor, EntityPair};
pub use ingest::{BenchmarkKind, Sample, SampleSet};
pub use matching::{FilteredTriples, GroundedEntities, SynonymLexicon};
pub use prompt::{PromptText, PromptVariant};
