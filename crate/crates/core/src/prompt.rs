//! Prompt templates and rendering.
//!
//! Four variants exist: the bare question (`Baseline`), positions only
//! (`GplOnly`), scene-graph triples only (`SgOnly`) and both (`Full`).
//! Templates are plain text files with `{{question}}`, `{{positions}}` and
//! `{{scene_graph}}` slots. Substitution is a single pass, so slot markers
//! inside the question itself are left alone.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BBox;
use crate::matching::{FilteredTriples, GroundedEntities};
use crate::text::stable_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    Baseline,
    GplOnly,
    SgOnly,
    Full,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 4] = [
        PromptVariant::Baseline,
        PromptVariant::GplOnly,
        PromptVariant::SgOnly,
        PromptVariant::Full,
    ];

    /// Whether the variant needs detection and scene-graph results.
    pub fn needs_grounding(self) -> bool {
        self != PromptVariant::Baseline
    }

    /// Row-name suffix appended to the model name in reports.
    pub fn row_suffix(self) -> &'static str {
        match self {
            PromptVariant::Baseline => "",
            PromptVariant::GplOnly => "+GPL",
            PromptVariant::SgOnly => "+SG",
            PromptVariant::Full => "+GPL+SG",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            PromptVariant::Baseline => "baseline.txt",
            PromptVariant::GplOnly => "gpl_only.txt",
            PromptVariant::SgOnly => "sg_only.txt",
            PromptVariant::Full => "full.txt",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::Baseline => "baseline",
            PromptVariant::GplOnly => "gpl_only",
            PromptVariant::SgOnly => "sg_only",
            PromptVariant::Full => "full",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "baseline" | "base" => Ok(PromptVariant::Baseline),
            "gpl_only" | "gpl" => Ok(PromptVariant::GplOnly),
            "sg_only" | "sg" => Ok(PromptVariant::SgOnly),
            "full" | "gpl+sg" | "sg+gpl" => Ok(PromptVariant::Full),
            other => Err(format!("unknown prompt variant {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {name}: unknown slot {slot:?}")]
    UnknownSlot { name: String, slot: String },
    #[error("template {name}: unterminated slot")]
    Unterminated { name: String },
    #[error("template {name}: the question slot must appear exactly once, found {count}")]
    QuestionSlot { name: String, count: usize },
    #[error("cannot read template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Question,
    Positions,
    SceneGraph,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Slot),
}

/// A parsed template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(name: &str, text: &str) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut rest = text;
        while let Some(open) = rest.find("{{") {
            if open > 0 {
                segments.push(Segment::Literal(rest[..open].to_string()));
            }
            let after = &rest[open + 2..];
            let close = after.find("}}").ok_or_else(|| TemplateError::Unterminated { name: name.into() })?;
            let slot = match after[..close].trim() {
                "question" => Slot::Question,
                "positions" => Slot::Positions,
                "scene_graph" => Slot::SceneGraph,
                other => {
                    return Err(TemplateError::UnknownSlot {
                        name: name.into(),
                        slot: other.into(),
                    })
                }
            };
            segments.push(Segment::Slot(slot));
            rest = &after[close + 2..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Literal(rest.to_string()));
        }
        let count = segments.iter().filter(|s| **s == Segment::Slot(Slot::Question)).count();
        if count != 1 {
            return Err(TemplateError::QuestionSlot { name: name.into(), count });
        }
        Ok(Template { segments })
    }

    pub fn render(&self, question: &str, positions: &str, scene_graph: &str) -> String {
        let mut out = String::new();
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Slot(Slot::Question) => out.push_str(question),
                Segment::Slot(Slot::Positions) => out.push_str(positions),
                Segment::Slot(Slot::SceneGraph) => out.push_str(scene_graph),
            }
        }
        out
    }

    /// Inverse of [`Template::render`]: recovers slot contents from a prompt
    /// rendered with this template.
    pub fn extract(&self, prompt: &str) -> Option<BTreeMap<Slot, String>> {
        let mut slots = BTreeMap::new();
        let mut pos = 0;
        let mut pending: Option<Slot> = None;
        let last = self.segments.len() - 1;
        for (i, segment) in self.segments.iter().enumerate() {
            match segment {
                Segment::Slot(slot) => pending = Some(*slot),
                Segment::Literal(lit) => {
                    let found = if i == last {
                        prompt.ends_with(lit.as_str()).then(|| prompt.len() - lit.len()).filter(|&p| p >= pos)
                    } else if pending.is_none() {
                        prompt[pos..].starts_with(lit.as_str()).then_some(pos)
                    } else {
                        prompt[pos..].find(lit.as_str()).map(|p| p + pos)
                    }?;
                    if let Some(slot) = pending.take() {
                        slots.insert(slot, prompt[pos..found].to_string());
                    } else if found != pos {
                        return None;
                    }
                    pos = found + lit.len();
                }
            }
        }
        match pending {
            Some(slot) => {
                slots.insert(slot, prompt[pos..].to_string());
            }
            None if pos != prompt.len() => return None,
            None => {}
        }
        Some(slots)
    }
}

/// One template per variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    templates: BTreeMap<PromptVariant, Template>,
}

static BUILTIN_TEMPLATES: LazyLock<PromptTemplates> = LazyLock::new(|| {
    let sources = [
        (PromptVariant::Baseline, include_str!("../templates/baseline.txt")),
        (PromptVariant::GplOnly, include_str!("../templates/gpl_only.txt")),
        (PromptVariant::SgOnly, include_str!("../templates/sg_only.txt")),
        (PromptVariant::Full, include_str!("../templates/full.txt")),
    ];
    let templates = sources
        .into_iter()
        .map(|(v, text)| (v, Template::parse(v.file_name(), strip_final_newline(text)).expect("builtin template")))
        .collect();
    PromptTemplates { templates }
});

fn strip_final_newline(text: &str) -> &str {
    text.strip_suffix("\r\n").or_else(|| text.strip_suffix('\n')).unwrap_or(text)
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin().clone()
    }
}

impl PromptTemplates {
    pub fn builtin() -> &'static PromptTemplates {
        &BUILTIN_TEMPLATES
    }

    /// Loads `<variant>.txt` files from `dir`; variants without a file keep
    /// the builtin template. A single trailing newline is ignored.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut templates = Self::builtin().templates.clone();
        for variant in PromptVariant::ALL {
            let path = dir.join(variant.file_name());
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                path: path.clone(),
                source,
            })?;
            templates.insert(variant, Template::parse(variant.file_name(), strip_final_newline(&text))?);
        }
        Ok(PromptTemplates { templates })
    }

    pub fn get(&self, variant: PromptVariant) -> &Template {
        &self.templates[&variant]
    }

    /// Identifies the variant of a rendered prompt and recovers its slots.
    /// Anything no grounded template matches is read as a bare question.
    pub fn identify(&self, prompt: &str) -> (PromptVariant, BTreeMap<Slot, String>) {
        for variant in [PromptVariant::Full, PromptVariant::GplOnly, PromptVariant::SgOnly] {
            if let Some(slots) = self.get(variant).extract(prompt) {
                return (variant, slots);
            }
        }
        (PromptVariant::Baseline, BTreeMap::from([(Slot::Question, prompt.to_string())]))
    }

    pub fn build_prompt(
        &self,
        variant: PromptVariant,
        grounded: &GroundedEntities,
        triples: &FilteredTriples,
        question: &str,
    ) -> PromptText {
        let text = self
            .get(variant)
            .render(question, &serialize_gpl(grounded), &serialize_triples(triples));
        PromptText {
            text,
            variant,
            context_hash: context_hash(grounded, triples, question),
        }
    }
}

/// A rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub variant: PromptVariant,
    pub context_hash: String,
}

/// `{(s, p, o), (s, p, o)}`; `{}` when empty.
pub fn serialize_triples(ft: &FilteredTriples) -> String {
    let body = ft
        .triples
        .iter()
        .map(|t| format!("({}, {}, {})", t.subject, t.predicate, t.object))
        .collect::<Vec<_>>()
        .join(", ");
    format!("{{{body}}}")
}

fn pixel(v: f64) -> i64 {
    v.round() as i64
}

/// `{entity:(x,y,w,h), entity:(x,y,w,h)}` with integer pixels; `{}` when empty.
pub fn serialize_gpl(ge: &GroundedEntities) -> String {
    let body = ge
        .bindings
        .iter()
        .map(|b| {
            format!(
                "{}:({},{},{},{})",
                b.entity,
                pixel(b.bbox.x),
                pixel(b.bbox.y),
                pixel(b.bbox.w),
                pixel(b.bbox.h)
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    format!("{{{body}}}")
}

static GPL_ENTRY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|, )([^{}]+?):\((\d+),(\d+),(\d+),(\d+)\)").expect("valid regex"));

/// Parses a block produced by [`serialize_gpl`] back into entity boxes.
/// Entries with an invalid box are skipped.
pub fn parse_gpl(block: &str) -> Option<Vec<(String, BBox)>> {
    let inner = block.trim().strip_prefix('{')?.strip_suffix('}')?;
    Some(
        GPL_ENTRY
            .captures_iter(inner)
            .filter_map(|c| {
                let n = |i: usize| c[i].parse::<f64>().ok();
                let bbox = BBox::new(n(2)?, n(3)?, n(4)?, n(5)?).ok()?;
                Some((c[1].to_string(), bbox))
            })
            .collect(),
    )
}

pub fn build_prompt(
    variant: PromptVariant,
    grounded: &GroundedEntities,
    triples: &FilteredTriples,
    question: &str,
) -> PromptText {
    PromptTemplates::builtin().build_prompt(variant, grounded, triples, question)
}

/// Stable hash of the grounding context and question.
pub fn context_hash(grounded: &GroundedEntities, triples: &FilteredTriples, question: &str) -> String {
    let bindings: Vec<_> = grounded
        .bindings
        .iter()
        .map(|b| serde_json::json!([b.entity, b.bbox, b.kind, b.detection_index]))
        .collect();
    let triples: Vec<_> = triples
        .triples
        .iter()
        .map(|t| serde_json::json!([t.subject, t.predicate, t.object, t.confidence]))
        .collect();
    stable_hash([
        serde_json::to_string(&bindings).expect("serializes"),
        serde_json::to_string(&triples).expect("serializes"),
        question.to_string(),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::Triple;
    use crate::matching::{Binding, MatchKind};

    fn binding(entity: &str, b: [f64; 4]) -> Binding {
        Binding {
            entity: entity.into(),
            bbox: BBox::try_from(b).unwrap(),
            kind: MatchKind::Exact,
            detection_index: 0,
        }
    }

    fn triples(ts: &[(&str, &str, &str)]) -> FilteredTriples {
        FilteredTriples {
            triples: ts.iter().map(|(s, p, o)| Triple::new(s, p, o)).collect(),
        }
    }

    #[test]
    fn triples_render() {
        assert_eq!(serialize_triples(&triples(&[("car", "parked on", "road")])), "{(car, parked on, road)}");
        assert_eq!(serialize_triples(&FilteredTriples::default()), "{}");
        assert_eq!(
            serialize_triples(&triples(&[("a", "b", "c"), ("d", "e", "f")])),
            "{(a, b, c), (d, e, f)}"
        );
    }

    #[test]
    fn gpl_render() {
        let ge = GroundedEntities {
            bindings: vec![binding("car", [10.0, 20.0, 50.0, 30.0])],
        };
        assert_eq!(serialize_gpl(&ge), "{car:(10,20,50,30)}");
        assert_eq!(serialize_gpl(&GroundedEntities::default()), "{}");
        let ge = GroundedEntities {
            bindings: vec![
                binding("red car", [10.6, 20.0, 50.0, 30.0]),
                binding("parking spot 33", [200.0, 40.0, 60.0, 34.5]),
            ],
        };
        assert_eq!(serialize_gpl(&ge), "{red car:(11,20,50,30), parking spot 33:(200,40,60,35)}");
    }

    #[test]
    fn gpl_parse_inverts_render() {
        let ge = GroundedEntities {
            bindings: vec![binding("red car", [10.0, 20.0, 50.0, 30.0]), binding("spot 3", [1.0, 2.0, 3.0, 4.0])],
        };
        let parsed = parse_gpl(&serialize_gpl(&ge)).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].0, "red car");
        assert_eq!(parsed[1].1, BBox::new(1.0, 2.0, 3.0, 4.0).unwrap());
        assert_eq!(parse_gpl("{}").unwrap(), vec![]);
        assert!(parse_gpl("car").is_none());
    }

    #[test]
    fn baseline_is_question_verbatim() {
        let q = "Is the cat left of the dog?";
        let p = build_prompt(PromptVariant::Baseline, &GroundedEntities::default(), &FilteredTriples::default(), q);
        assert_eq!(p.text, q);
    }

    #[test]
    fn variant_openings() {
        let ge = GroundedEntities {
            bindings: vec![binding("car", [10.0, 20.0, 50.0, 30.0])],
        };
        let ft = triples(&[("car", "parked on", "road")]);
        let full = build_prompt(PromptVariant::Full, &ge, &ft, "Q?");
        assert!(full.text.starts_with("The scene in the picture has the following relationship {"));
        assert!(full.text.contains("The Faster R-CNN detects the target and its geometric position as follows {"));
        let gpl = build_prompt(PromptVariant::GplOnly, &ge, &ft, "Q?");
        assert!(gpl.text.starts_with("The Faster R-CNN detects the object and its geometric position as follows {"));
        assert!(gpl.text.ends_with("directly tell me the answer which you think is correct directly."));
        let sg = build_prompt(PromptVariant::SgOnly, &ge, &ft, "Q?");
        assert!(sg.text.contains(": Q? And tell me"));
    }

    #[test]
    fn missing_blocks_render_empty_braces() {
        let full = build_prompt(PromptVariant::Full, &GroundedEntities::default(), &FilteredTriples::default(), "Q?");
        assert!(full.text.contains("relationship {}. And,"));
        assert!(full.text.contains("as follows {}. Please"));
    }

    #[test]
    fn question_is_not_re_substituted() {
        let q = "Is {{positions}} here?";
        let p = build_prompt(PromptVariant::GplOnly, &GroundedEntities::default(), &FilteredTriples::default(), q);
        assert!(p.text.contains(q));
    }

    #[test]
    fn identify_recovers_slots() {
        let templates = PromptTemplates::builtin();
        let ge = GroundedEntities {
            bindings: vec![binding("car", [10.0, 20.0, 50.0, 30.0])],
        };
        let ft = triples(&[("car", "parked on", "road")]);
        let q = "Is the car on the road?";
        for variant in PromptVariant::ALL {
            let p = templates.build_prompt(variant, &ge, &ft, q);
            let (found, slots) = templates.identify(&p.text);
            assert_eq!(found, variant);
            assert_eq!(slots[&Slot::Question], q);
            if matches!(variant, PromptVariant::Full | PromptVariant::GplOnly) {
                assert_eq!(slots[&Slot::Positions], "{car:(10,20,50,30)}");
            }
            if matches!(variant, PromptVariant::Full | PromptVariant::SgOnly) {
                assert_eq!(slots[&Slot::SceneGraph], "{(car, parked on, road)}");
            }
        }
    }

    #[test]
    fn template_validation() {
        assert!(matches!(Template::parse("t", "no slot"), Err(TemplateError::QuestionSlot { count: 0, .. })));
        assert!(matches!(Template::parse("t", "{{question}} {{nope}}"), Err(TemplateError::UnknownSlot { .. })));
        assert!(matches!(Template::parse("t", "{{question"), Err(TemplateError::Unterminated { .. })));
    }

    #[test]
    fn context_hash_tracks_inputs() {
        let ge = GroundedEntities {
            bindings: vec![binding("car", [10.0, 20.0, 50.0, 30.0])],
        };
        let ft = triples(&[("car", "parked on", "road")]);
        let base = context_hash(&ge, &ft, "Q?");
        assert_eq!(base, context_hash(&ge, &ft, "Q?"));
        assert_ne!(base, context_hash(&ge, &ft, "Q!"));
        assert_ne!(base, context_hash(&GroundedEntities::default(), &ft, "Q?"));
        assert_ne!(base, context_hash(&ge, &FilteredTriples::default(), "Q?"));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in PromptVariant::ALL {
            assert_eq!(v.as_str().parse::<PromptVariant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.as_str()));
        }
        assert_eq!("GPL+SG".parse::<PromptVariant>().unwrap(), PromptVariant::Full);
    }
}
