//! Benchmark sample loading.
//!
//! Everything is normalized into [`SampleSet`], whose canonical on-disk form is
//! one JSON object per line. Two adapters read the native layouts:
//!
//! * MME: `<root>/<task>/<image>` with sidecar `question<TAB>answer` text
//!   files, two lines per image. Both the flat layout and the
//!   `images/` + `questions_answers_YES_OR_NO/` split layout are accepted.
//! * MM-Vet: a single JSON document keyed by sample id.
//!
//! Image files are never opened here.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// Perception and cognition task names shipped with MME.
pub const MME_TASKS: &[&str] = &[
    "existence",
    "count",
    "position",
    "color",
    "posters",
    "celebrity",
    "scene",
    "landmark",
    "artwork",
    "OCR",
    "commonsense_reasoning",
    "numerical_calculation",
    "text_translation",
    "code_reasoning",
];

const IMAGE_EXTENSIONS: &[&str] = &["jpg", "jpeg", "png", "bmp", "gif", "webp"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing file or directory: {0}")]
    MissingFile(PathBuf),
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("image group {image_group:?} has {count} QA pairs, expected 2")]
    PairingViolation { image_group: String, count: usize },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> Self {
        IngestError::MalformedRecord {
            path: path.to_path_buf(),
            line,
            reason: reason.into(),
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkKind {
    Mme,
    #[serde(alias = "mm-vet", alias = "mm_vet")]
    Mmvet,
    Custom,
}

impl BenchmarkKind {
    /// MME answers are parsed as yes/no; the others are graded.
    pub fn is_yes_no(self) -> bool {
        matches!(self, BenchmarkKind::Mme)
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchmarkKind::Mme => "mme",
            BenchmarkKind::Mmvet => "mmvet",
            BenchmarkKind::Custom => "custom",
        })
    }
}

impl std::str::FromStr for BenchmarkKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mme" => Ok(BenchmarkKind::Mme),
            "mmvet" | "mm-vet" | "mm_vet" => Ok(BenchmarkKind::Mmvet),
            "custom" => Ok(BenchmarkKind::Custom),
            other => Err(format!("unknown benchmark kind {other:?}")),
        }
    }
}

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub image_ref: String,
    pub task: String,
    pub question: String,
    pub ground_truth: String,
    #[serde(default)]
    pub capabilities: Vec<String>,
    pub image_group: String,
}

/// Validated, id-ordered collection of samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    kind: BenchmarkKind,
    samples: Vec<Sample>,
}

impl SampleSet {
    /// Validates the samples and sorts them by id.
    ///
    /// MME ground truths are lowercased; any other value is rejected.
    pub fn new(kind: BenchmarkKind, mut samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::new();
        for sample in &mut samples {
            if sample.id.trim().is_empty() {
                return Err(IngestError::malformed(Path::new("<memory>"), 0, "empty id"));
            }
            if !seen.insert(sample.id.clone()) {
                return Err(IngestError::DuplicateId(sample.id.clone()));
            }
            if kind == BenchmarkKind::Mme {
                sample.ground_truth = normalize_mme_answer(&sample.ground_truth).ok_or_else(|| {
                    IngestError::malformed(
                        Path::new("<memory>"),
                        0,
                        format!("sample {}: MME answer must be yes or no", sample.id),
                    )
                })?;
            }
        }
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        if kind == BenchmarkKind::Mme {
            check_pairing(&samples)?;
        }
        Ok(SampleSet { kind, samples })
    }

    pub fn empty(kind: BenchmarkKind) -> Self {
        SampleSet {
            kind,
            samples: Vec::new(),
        }
    }

    pub fn kind(&self) -> BenchmarkKind {
        self.kind
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct image groups in first-appearance order.
    pub fn image_groups(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.image_group.as_str()))
            .map(|s| s.image_group.as_str())
            .collect()
    }

    /// Writes the canonical line-delimited form.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for sample in &self.samples {
            serde_json::to_writer(&mut out, sample).expect("sample serializes");
            out.push(b'\n');
        }
        let mut file = fs::File::create(path).map_err(|e| IngestError::io(path, e))?;
        file.write_all(&out).map_err(|e| IngestError::io(path, e))
    }
}

fn normalize_mme_answer(answer: &str) -> Option<String> {
    let lower = answer.trim().to_ascii_lowercase();
    matches!(lower.as_str(), "yes" | "no").then_some(lower)
}

fn check_pairing(samples: &[Sample]) -> Result<()> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for sample in samples {
        *counts.entry(sample.image_group.as_str()).or_default() += 1;
    }
    match counts.into_iter().find(|(_, count)| *count != 2) {
        Some((group, count)) => Err(IngestError::PairingViolation {
            image_group: group.to_string(),
            count,
        }),
        None => Ok(()),
    }
}

/// Loads samples from `path`.
///
/// A directory is read with the MME layout adapter, a `.json` file with the
/// MM-Vet adapter, and anything else as a canonical manifest.
pub fn load_manifest(path: &Path, kind: BenchmarkKind) -> Result<SampleSet> {
    if !path.exists() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    if path.is_dir() {
        let set = adapt_mme_layout(path)?;
        return SampleSet::new(kind, set.samples);
    }
    if path.extension().is_some_and(|ext| ext == "json") {
        let set = adapt_mmvet_metadata(path)?;
        return SampleSet::new(kind, set.samples);
    }
    load_canonical(path, kind)
}

fn load_canonical(path: &Path, kind: BenchmarkKind) -> Result<SampleSet> {
    let content = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => IngestError::malformed(path, 0, "file is not UTF-8"),
        _ => IngestError::io(path, e),
    })?;
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(line)
            .map_err(|e| IngestError::malformed(path, line_no, e.to_string()))?;
        if sample.id.trim().is_empty() {
            return Err(IngestError::malformed(path, line_no, "empty id"));
        }
        if sample.question.trim().is_empty() {
            return Err(IngestError::malformed(path, line_no, "empty question"));
        }
        if kind == BenchmarkKind::Mme && normalize_mme_answer(&sample.ground_truth).is_none() {
            return Err(IngestError::malformed(
                path,
                line_no,
                format!("MME answer must be yes or no, got {:?}", sample.ground_truth),
            ));
        }
        if !seen.insert(sample.id.clone()) {
            return Err(IngestError::DuplicateId(sample.id));
        }
        samples.push(sample);
    }
    SampleSet::new(kind, samples)
}

/// Reads an MME-style directory tree.
pub fn adapt_mme_layout(root: &Path) -> Result<SampleSet> {
    if !root.is_dir() {
        return Err(IngestError::MissingFile(root.to_path_buf()));
    }
    let mut samples = Vec::new();
    for task_dir in sorted_entries(root)? {
        if !task_dir.is_dir() {
            continue;
        }
        let task = file_name(&task_dir);
        if !MME_TASKS.iter().any(|t| t.eq_ignore_ascii_case(&task)) {
            tracing::warn!(task = %task, "unknown MME task, keeping as-is");
        }
        read_task_dir(root, &task_dir, &task, &mut samples)?;
    }
    SampleSet::new(BenchmarkKind::Mme, samples)
}

fn read_task_dir(root: &Path, task_dir: &Path, task: &str, out: &mut Vec<Sample>) -> Result<()> {
    let mut sidecar_dirs = vec![task_dir.to_path_buf()];
    let mut image_dirs = vec![task_dir.to_path_buf()];
    for entry in sorted_entries(task_dir)? {
        if !entry.is_dir() {
            continue;
        }
        let name = file_name(&entry).to_ascii_lowercase();
        if name.starts_with("question") {
            sidecar_dirs.push(entry);
        } else if name.starts_with("image") {
            image_dirs.push(entry);
        }
    }

    for dir in &sidecar_dirs {
        for sidecar in sorted_entries(dir)? {
            if !sidecar.is_file() || sidecar.extension().is_none_or(|ext| ext != "txt") {
                continue;
            }
            let stem = sidecar
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let image = find_image(&image_dirs, &stem).unwrap_or_else(|| {
                tracing::warn!(sidecar = %sidecar.display(), "no image found for sidecar");
                task_dir.join(format!("{stem}.jpg"))
            });
            let image_name = file_name(&image);
            let image_ref = relative_ref(root, &image);
            let content = fs::read(&sidecar).map_err(|e| IngestError::io(&sidecar, e))?;
            let content = String::from_utf8(content)
                .map_err(|_| IngestError::malformed(&sidecar, 0, "sidecar is not UTF-8"))?;
            let mut qa_index = 0;
            for (idx, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let (question, answer) = line.split_once('\t').ok_or_else(|| {
                    IngestError::malformed(&sidecar, idx + 1, "expected question<TAB>answer")
                })?;
                let answer = normalize_mme_answer(answer).ok_or_else(|| {
                    IngestError::malformed(
                        &sidecar,
                        idx + 1,
                        format!("MME answer must be yes or no, got {:?}", answer.trim()),
                    )
                })?;
                let question = question.trim();
                if question.is_empty() {
                    return Err(IngestError::malformed(&sidecar, idx + 1, "empty question"));
                }
                out.push(Sample {
                    id: format!("{task}/{stem}#{qa_index}"),
                    image_ref: image_ref.clone(),
                    task: task.to_string(),
                    question: question.to_string(),
                    ground_truth: answer,
                    capabilities: Vec::new(),
                    image_group: format!("{task}/{image_name}"),
                });
                qa_index += 1;
            }
        }
    }
    Ok(())
}

fn find_image(dirs: &[PathBuf], stem: &str) -> Option<PathBuf> {
    dirs.iter().find_map(|dir| {
        IMAGE_EXTENSIONS.iter().find_map(|ext| {
            [ext.to_string(), ext.to_ascii_uppercase()]
                .into_iter()
                .map(|e| dir.join(format!("{stem}.{e}")))
                .find(|p| p.is_file())
        })
    })
}

fn relative_ref(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| IngestError::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| IngestError::io(dir, e))?;
    entries.sort();
    Ok(entries)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Deserialize)]
struct MmVetEntry {
    #[serde(alias = "imagename", alias = "image_name", alias = "image")]
    imagename: Option<String>,
    #[serde(alias = "q")]
    question: String,
    #[serde(alias = "gt", alias = "ground_truth")]
    answer: serde_json::Value,
    #[serde(default, alias = "capabilities")]
    capability: Vec<String>,
}

/// JSON object that keeps duplicate keys instead of overwriting them.
struct OrderedEntries(Vec<(String, serde_json::Value)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = OrderedEntries;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object keyed by sample id")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some((key, value)) = map.next_entry::<String, serde_json::Value>()? {
                    entries.push((key, value));
                }
                Ok(OrderedEntries(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

/// Reads an MM-Vet metadata document.
///
/// Ground truths are kept verbatim; non-string answers (numbers) are rendered
/// with their JSON text.
pub fn adapt_mmvet_metadata(file: &Path) -> Result<SampleSet> {
    if !file.is_file() {
        return Err(IngestError::MissingFile(file.to_path_buf()));
    }
    let content = fs::read_to_string(file).map_err(|e| IngestError::io(file, e))?;
    let entries: OrderedEntries = serde_json::from_str(&content)
        .map_err(|e| IngestError::malformed(file, e.line(), e.to_string()))?;
    let mut seen = HashSet::new();
    let mut samples = Vec::with_capacity(entries.0.len());
    for (key, value) in entries.0 {
        if !seen.insert(key.clone()) {
            return Err(IngestError::DuplicateId(key));
        }
        let entry: MmVetEntry = serde_json::from_value(value)
            .map_err(|e| IngestError::malformed(file, 0, format!("entry {key:?}: {e}")))?;
        if entry.question.trim().is_empty() {
            return Err(IngestError::malformed(file, 0, format!("entry {key:?}: empty question")));
        }
        let ground_truth = match entry.answer {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        let image = entry.imagename.unwrap_or_else(|| format!("{key}.png"));
        samples.push(Sample {
            id: key,
            image_ref: image.clone(),
            task: "mmvet".to_string(),
            question: entry.question,
            ground_truth,
            capabilities: entry.capability,
            image_group: image,
        });
    }
    SampleSet::new(BenchmarkKind::Mmvet, samples)
}
