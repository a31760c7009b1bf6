//! Run configuration.
//!
//! A run is described by one TOML file; relative paths inside it resolve
//! against the file's directory. Command-line flags override individual
//! fields through [`Overrides`].
//!
//! ```toml
//! version = 1
//! benchmark = "mme"
//! manifest = "manifest.jsonl"
//! variants = ["baseline", "gpl_only", "sg_only", "full"]
//! base_variant = "baseline"
//! model_name = "BLIP-2-12B"
//! fixtures = "fixtures"
//! synonym_lexicon_path = "synonyms.tsv"
//!
//! [model]
//! url = "http://127.0.0.1:8080"
//!
//! [http]
//! timeout_ms = 60000
//! retries = 2
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::HttpOptions;
use crate::entities::DEFAULT_BLOCKLIST;
use crate::ingest::BenchmarkKind;
use crate::prompt::PromptVariant;
use crate::spatial::RelationParams;
use crate::text::stable_hash;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    /// `report.json`
    Json,
    /// `report.csv`
    Csv,
    /// `report.txt`
    Table,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" | "structured" => Ok(ReportFormat::Json),
            "csv" | "delimited" => Ok(ReportFormat::Csv),
            "table" | "txt" | "text" => Ok(ReportFormat::Table),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

/// A detector or scene-graph backend: a fixture file or a live endpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapabilityConfig {
    pub fixture: Option<PathBuf>,
    pub url: Option<String>,
}

/// The answering model: fixture, live endpoint or scripted stand-in
/// (`"oracle"`, `"coin"`, `"oracle+coin"`, `"echo:<text>"`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub fixture: Option<PathBuf>,
    pub url: Option<String>,
    pub scripted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraderConfig {
    pub url: Option<String>,
    /// Use the substring rule when no grader is configured or it is down.
    pub fallback: bool,
}

impl Default for GraderConfig {
    fn default() -> Self {
        GraderConfig {
            url: None,
            fallback: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerConfig {
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub benchmark: BenchmarkKind,
    pub manifest: PathBuf,
    #[serde(default = "default_variants")]
    pub variants: Vec<PromptVariant>,
    #[serde(default = "default_base_variant")]
    pub base_variant: Option<PromptVariant>,
    #[serde(default = "default_model_name")]
    pub model_name: String,
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default)]
    pub detector: CapabilityConfig,
    #[serde(default)]
    pub scene_graph: CapabilityConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub grader: GraderConfig,
    #[serde(default)]
    pub tagger: TaggerConfig,
    #[serde(default)]
    pub http: HttpOptions,
    #[serde(default)]
    pub synonym_lexicon_path: Option<PathBuf>,
    #[serde(default)]
    pub tag_lexicon_path: Option<PathBuf>,
    #[serde(default)]
    pub relation_keywords: Option<PathBuf>,
    #[serde(default)]
    pub relation_params: RelationParams,
    #[serde(default)]
    pub template_dir: Option<PathBuf>,
    #[serde(default = "default_blocklist")]
    pub entity_blocklist: Vec<String>,
    #[serde(default)]
    pub min_detection_confidence: f64,
    /// Send the image reference along with the prompt.
    #[serde(default = "default_true")]
    pub forward_image: bool,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub report_dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub report_formats: Vec<ReportFormat>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_variants() -> Vec<PromptVariant> {
    vec![PromptVariant::Full]
}

fn default_base_variant() -> Option<PromptVariant> {
    Some(PromptVariant::Baseline)
}

fn default_model_name() -> String {
    "model".to_string()
}

fn default_blocklist() -> Vec<String> {
    DEFAULT_BLOCKLIST.iter().map(|s| s.to_string()).collect()
}

fn default_true() -> bool {
    true
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Table]
}

fn default_parallelism() -> usize {
    1
}

/// Resolved source of one capability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Fixture(PathBuf),
    Http(String),
    Scripted(ScriptedModelSpec),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptedModelSpec {
    Oracle,
    Coin,
    OracleWithCoin,
    Echo(String),
}

impl FromStr for ScriptedModelSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "oracle" => Ok(ScriptedModelSpec::Oracle),
            "coin" => Ok(ScriptedModelSpec::Coin),
            "oracle+coin" => Ok(ScriptedModelSpec::OracleWithCoin),
            other => match other.strip_prefix("echo:") {
                Some(text) => Ok(ScriptedModelSpec::Echo(text.to_string())),
                None => Err(format!("unknown scripted model {other:?}")),
            },
        }
    }
}

/// Command-line overrides; `None` leaves the configured value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub benchmark: Option<BenchmarkKind>,
    pub manifest: Option<PathBuf>,
    pub variants: Vec<PromptVariant>,
    pub fixtures: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Minimal config; everything else at its default.
    pub fn new(benchmark: BenchmarkKind, manifest: impl Into<PathBuf>) -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            benchmark,
            manifest: manifest.into(),
            variants: default_variants(),
            base_variant: default_base_variant(),
            model_name: default_model_name(),
            fixtures: None,
            detector: CapabilityConfig::default(),
            scene_graph: CapabilityConfig::default(),
            model: ModelConfig::default(),
            grader: GraderConfig::default(),
            tagger: TaggerConfig::default(),
            http: HttpOptions::default(),
            synonym_lexicon_path: None,
            tag_lexicon_path: None,
            relation_keywords: None,
            relation_params: RelationParams::default(),
            template_dir: None,
            entity_blocklist: default_blocklist(),
            min_detection_confidence: 0.0,
            forward_image: true,
            cache_dir: None,
            report_dir: None,
            report_formats: default_formats(),
            parallelism: 1,
            seed: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    /// Makes relative paths absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        for p in [
            &mut self.fixtures,
            &mut self.detector.fixture,
            &mut self.scene_graph.fixture,
            &mut self.model.fixture,
            &mut self.synonym_lexicon_path,
            &mut self.tag_lexicon_path,
            &mut self.relation_keywords,
            &mut self.template_dir,
            &mut self.cache_dir,
            &mut self.report_dir,
            &mut self.http.image_root,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn apply(&mut self, overrides: Overrides) {
        if let Some(b) = overrides.benchmark {
            self.benchmark = b;
        }
        if let Some(m) = overrides.manifest {
            self.manifest = m;
        }
        if !overrides.variants.is_empty() {
            self.variants = overrides.variants;
        }
        if let Some(f) = overrides.fixtures {
            self.fixtures = Some(f);
        }
        if let Some(c) = overrides.cache_dir {
            self.cache_dir = Some(c);
        }
        if let Some(r) = overrides.report_dir {
            self.report_dir = Some(r);
        }
        if let Some(p) = overrides.parallelism {
            self.parallelism = p;
        }
        if let Some(s) = overrides.seed {
            self.seed = s;
        }
    }

    /// Variants in canonical order without repeats.
    pub fn variants(&self) -> Vec<PromptVariant> {
        let mut v = self.variants.clone();
        v.sort();
        v.dedup();
        v
    }

    pub fn needs_grounding(&self) -> bool {
        self.variants.iter().any(|v| v.needs_grounding())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Invalid(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.variants.is_empty() {
            return Err(ConfigError::Invalid("at least one variant is required".into()));
        }
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid("parallelism must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_detection_confidence) {
            return Err(ConfigError::Invalid("min_detection_confidence must lie in [0, 1]".into()));
        }
        if self.needs_grounding() {
            self.detector_source()?;
            self.scene_graph_source()?;
        }
        self.model_source()?;
        if !self.benchmark.is_yes_no() && self.grader.url.is_none() && !self.grader.fallback {
            return Err(ConfigError::Invalid("open-ended scoring needs a grader url or fallback = true".into()));
        }
        Ok(())
    }

    fn capability_source(
        &self,
        name: &str,
        cap: &CapabilityConfig,
        fixture_file: &str,
    ) -> Result<Source, ConfigError> {
        match (&cap.fixture, &cap.url) {
            (Some(_), Some(_)) => Err(ConfigError::Invalid(format!(
                "{name}: set either a fixture or a url, not both"
            ))),
            (Some(f), None) => Ok(Source::Fixture(f.clone())),
            (None, Some(u)) => Ok(Source::Http(u.clone())),
            (None, None) => self
                .fixtures
                .as_ref()
                .map(|dir| Source::Fixture(dir.join(fixture_file)))
                .ok_or_else(|| ConfigError::Invalid(format!("{name}: no fixture or url configured"))),
        }
    }

    pub fn detector_source(&self) -> Result<Source, ConfigError> {
        self.capability_source("detector", &self.detector, crate::backends::fixture::DETECTIONS_FILE)
    }

    pub fn scene_graph_source(&self) -> Result<Source, ConfigError> {
        self.capability_source("scene_graph", &self.scene_graph, crate::backends::fixture::SCENE_GRAPHS_FILE)
    }

    pub fn model_source(&self) -> Result<Source, ConfigError> {
        let m = &self.model;
        let set = [m.fixture.is_some(), m.url.is_some(), m.scripted.is_some()]
            .iter()
            .filter(|x| **x)
            .count();
        if set > 1 {
            return Err(ConfigError::Invalid(
                "model: set exactly one of fixture, url or scripted".into(),
            ));
        }
        if let Some(f) = &m.fixture {
            return Ok(Source::Fixture(f.clone()));
        }
        if let Some(u) = &m.url {
            return Ok(Source::Http(u.clone()));
        }
        if let Some(s) = &m.scripted {
            return s.parse().map(Source::Scripted).map_err(ConfigError::Invalid);
        }
        self.fixtures
            .as_ref()
            .map(|dir| Source::Fixture(dir.join(crate::backends::fixture::ANSWERS_FILE)))
            .ok_or_else(|| ConfigError::Invalid("model: no fixture, url or scripted model configured".into()))
    }

    /// Hash of everything that can change scores. Parallelism, cache and
    /// report locations and credentials are excluded.
    pub fn config_hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.parallelism = 1;
        semantic.cache_dir = None;
        semantic.report_dir = None;
        semantic.report_formats = Vec::new();
        semantic.http.bearer_token = None;
        semantic.variants = self.variants();
        stable_hash([serde_json::to_string(&semantic).expect("config serializes")])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn loads_and_resolves_relative_paths() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            r#"
version = 1
benchmark = "mme"
manifest = "m.jsonl"
variants = ["baseline", "full"]
fixtures = "fx"

[model]
scripted = "oracle+coin"

[http]
timeout_ms = 5
"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.manifest, dir.path().join("m.jsonl"));
        assert_eq!(cfg.http.timeout_ms, 5);
        assert_eq!(cfg.http.retries, 2);
        cfg.validate().unwrap();
        assert_eq!(cfg.detector_source().unwrap(), Source::Fixture(dir.path().join("fx/detections.jsonl")));
        assert_eq!(cfg.model_source().unwrap(), Source::Scripted(ScriptedModelSpec::OracleWithCoin));
    }

    #[test]
    fn unknown_fields_rejected() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "benchmark = \"mme\"\nmanifest = \"m\"\nbogus = 1\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn capability_xor() {
        let mut cfg = RunConfig::new(BenchmarkKind::Mme, "m.jsonl");
        cfg.model.scripted = Some("oracle".into());
        cfg.detector = CapabilityConfig {
            fixture: Some("d.jsonl".into()),
            url: Some("http://x".into()),
        };
        cfg.scene_graph.fixture = Some("s.jsonl".into());
        assert!(cfg.validate().is_err());
        cfg.detector.url = None;
        cfg.validate().unwrap();
    }

    #[test]
    fn baseline_needs_no_detector() {
        let mut cfg = RunConfig::new(BenchmarkKind::Mme, "m.jsonl");
        cfg.variants = vec![PromptVariant::Baseline];
        cfg.model.scripted = Some("coin".into());
        cfg.validate().unwrap();
        cfg.variants = vec![PromptVariant::Full];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn invalid_values() {
        let mut cfg = RunConfig::new(BenchmarkKind::Mme, "m.jsonl");
        cfg.model.scripted = Some("coin".into());
        cfg.variants = vec![PromptVariant::Baseline];
        cfg.parallelism = 0;
        assert!(cfg.validate().is_err());
        cfg.parallelism = 2;
        cfg.variants.clear();
        assert!(cfg.validate().is_err());
        cfg.variants = vec![PromptVariant::Baseline];
        cfg.model.scripted = Some("wizard".into());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_ignores_operational_fields() {
        let mut a = RunConfig::new(BenchmarkKind::Mme, "m.jsonl");
        let mut b = a.clone();
        b.parallelism = 8;
        b.cache_dir = Some("c".into());
        b.report_dir = Some("r".into());
        assert_eq!(a.config_hash(), b.config_hash());
        a.seed = 1;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = RunConfig::new(BenchmarkKind::Mme, "m.jsonl");
        cfg.apply(Overrides {
            variants: vec![PromptVariant::GplOnly],
            parallelism: Some(4),
            seed: Some(9),
            ..Default::default()
        });
        assert_eq!(cfg.variants, [PromptVariant::GplOnly]);
        assert_eq!((cfg.parallelism, cfg.seed), (4, 9));
    }
}
