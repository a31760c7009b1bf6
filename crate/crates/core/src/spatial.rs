//! Qualitative spatial relations between boxes, and a keyword-driven yes/no
//! oracle built on them.
//!
//! Image coordinates: `x` grows rightward, `y` grows downward, so "above"
//! means a smaller center `y`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BBox, InvalidBox};
use crate::matching::GroundedEntities;
use crate::text::normalize_text;

const BUILTIN_KEYWORDS: &str = include_str!("../data/relation_keywords.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
    Overlaps,
    Contains,
    Inside,
}

impl Relation {
    pub fn opposite(self) -> Option<Relation> {
        match self {
            Relation::LeftOf => Some(Relation::RightOf),
            Relation::RightOf => Some(Relation::LeftOf),
            Relation::Above => Some(Relation::Below),
            Relation::Below => Some(Relation::Above),
            Relation::Contains => Some(Relation::Inside),
            Relation::Inside => Some(Relation::Contains),
            Relation::Overlaps => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSet {
    pub relations: BTreeSet<Relation>,
    pub center_distance: f64,
}

impl RelationSet {
    pub fn has(&self, relation: Relation) -> bool {
        self.relations.contains(&relation)
    }
}

/// `separation` (λ) widens each box's half-extent in the directional tests;
/// `margin` (τ) is the minimum gap in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationParams {
    pub separation: f64,
    pub margin: f64,
}

impl Default for RelationParams {
    fn default() -> Self {
        RelationParams {
            separation: 0.0,
            margin: 1.0,
        }
    }
}

fn strictly_before(lo_center: f64, lo_extent: f64, hi_center: f64, hi_extent: f64, p: RelationParams) -> bool {
    let gap = (hi_center - p.separation * hi_extent / 2.0) - (lo_center + p.separation * lo_extent / 2.0);
    gap > p.margin
}

pub fn relate(a: &BBox, b: &BBox) -> Result<RelationSet, InvalidBox> {
    relate_with(a, b, RelationParams::default())
}

pub fn relate_with(a: &BBox, b: &BBox, params: RelationParams) -> Result<RelationSet, InvalidBox> {
    a.validate()?;
    b.validate()?;
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let mut relations = BTreeSet::new();
    if strictly_before(ax, a.w, bx, b.w, params) {
        relations.insert(Relation::LeftOf);
    }
    if strictly_before(bx, b.w, ax, a.w, params) {
        relations.insert(Relation::RightOf);
    }
    if strictly_before(ay, a.h, by, b.h, params) {
        relations.insert(Relation::Above);
    }
    if strictly_before(by, b.h, ay, a.h, params) {
        relations.insert(Relation::Below);
    }
    let overlap_w = a.right().min(b.right()) - a.x.max(b.x);
    let overlap_h = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if overlap_w > 0.0 && overlap_h > 0.0 {
        relations.insert(Relation::Overlaps);
    }
    if encloses(a, b) {
        relations.insert(Relation::Contains);
    }
    if encloses(b, a) {
        relations.insert(Relation::Inside);
    }
    // Equal boxes enclose each other; neither direction is meaningful then.
    if relations.contains(&Relation::Contains) && relations.contains(&Relation::Inside) {
        relations.remove(&Relation::Contains);
        relations.remove(&Relation::Inside);
    }
    Ok(RelationSet {
        relations,
        center_distance: (ax - bx).hypot(ay - by),
    })
}

fn encloses(outer: &BBox, inner: &BBox) -> bool {
    inner.x >= outer.x && inner.y >= outer.y && inner.right() <= outer.right() && inner.bottom() <= outer.bottom()
}

/// What a keyword asks about. `Beside` holds when either horizontal
/// relation does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordRelation {
    Is(Relation),
    Beside,
}

impl KeywordRelation {
    pub fn holds(self, set: &RelationSet) -> bool {
        match self {
            KeywordRelation::Is(r) => set.has(r),
            KeywordRelation::Beside => set.has(Relation::LeftOf) || set.has(Relation::RightOf),
        }
    }
}

impl FromStr for KeywordRelation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "left_of" => KeywordRelation::Is(Relation::LeftOf),
            "right_of" => KeywordRelation::Is(Relation::RightOf),
            "above" => KeywordRelation::Is(Relation::Above),
            "below" => KeywordRelation::Is(Relation::Below),
            "overlaps" => KeywordRelation::Is(Relation::Overlaps),
            "contains" => KeywordRelation::Is(Relation::Contains),
            "inside" => KeywordRelation::Is(Relation::Inside),
            "beside" => KeywordRelation::Beside,
            other => return Err(format!("unknown relation {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRule {
    pub phrase: String,
    pub relation: KeywordRelation,
    pub positive: bool,
}

#[derive(Debug, Error)]
pub enum KeywordError {
    #[error("{path}:{line}: malformed keyword line: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("cannot read keyword table {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Phrase → relation table used by [`oracle_answer`].
#[derive(Debug, Clone, PartialEq)]
pub struct RelationKeywords {
    rules: Vec<KeywordRule>,
}

impl Default for RelationKeywords {
    fn default() -> Self {
        Self::parse(BUILTIN_KEYWORDS, Path::new("<builtin>")).expect("builtin keyword table parses")
    }
}

impl RelationKeywords {
    pub fn load(path: &Path) -> Result<Self, KeywordError> {
        let content = std::fs::read_to_string(path).map_err(|source| KeywordError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&content, path)
    }

    /// `phrase<TAB>relation<TAB>polarity` lines, polarity `+` or `-`.
    pub fn parse(content: &str, path: &Path) -> Result<Self, KeywordError> {
        let mut rules = Vec::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |reason: String| KeywordError::Malformed {
                path: path.to_path_buf(),
                line: idx + 1,
                reason,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [phrase, relation, polarity] = fields[..] else {
                return Err(malformed("expected phrase<TAB>relation<TAB>polarity".into()));
            };
            let phrase = normalize_text(phrase);
            if phrase.is_empty() {
                return Err(malformed("empty phrase".into()));
            }
            let positive = match polarity.trim() {
                "+" => true,
                "-" => false,
                other => return Err(malformed(format!("polarity must be + or -, got {other:?}"))),
            };
            rules.push(KeywordRule {
                phrase,
                relation: relation.parse().map_err(malformed)?,
                positive,
            });
        }
        Ok(RelationKeywords { rules })
    }

    pub fn rules(&self) -> &[KeywordRule] {
        &self.rules
    }

    /// Longest phrase found at word boundaries; ties go to the earliest.
    pub fn find(&self, question: &str) -> Option<&KeywordRule> {
        let padded = format!(" {} ", normalize_text(question));
        self.rules
            .iter()
            .filter_map(|rule| padded.find(&format!(" {} ", rule.phrase)).map(|pos| (rule, pos)))
            .max_by(|(ra, pa), (rb, pb)| ra.phrase.len().cmp(&rb.phrase.len()).then_with(|| pb.cmp(pa)))
            .map(|(rule, _)| rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleAnswer {
    Yes,
    No,
    Unknown,
}

impl fmt::Display for OracleAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleAnswer::Yes => "yes",
            OracleAnswer::No => "no",
            OracleAnswer::Unknown => "unknown",
        })
    }
}

/// Answers a directional yes/no question from the first two bindings.
pub fn oracle_answer(question: &str, grounded: &GroundedEntities) -> OracleAnswer {
    let first = grounded.bindings.first().map(|b| &b.bbox);
    let second = grounded.bindings.get(1).map(|b| &b.bbox);
    oracle_answer_boxes(question, first, second, &RelationKeywords::default(), RelationParams::default())
}

pub fn oracle_answer_boxes(
    question: &str,
    first: Option<&BBox>,
    second: Option<&BBox>,
    keywords: &RelationKeywords,
    params: RelationParams,
) -> OracleAnswer {
    let (Some(a), Some(b)) = (first, second) else {
        return OracleAnswer::Unknown;
    };
    let Some(rule) = keywords.find(question) else {
        return OracleAnswer::Unknown;
    };
    let Ok(set) = relate_with(a, b, params) else {
        return OracleAnswer::Unknown;
    };
    if rule.relation.holds(&set) == rule.positive {
        OracleAnswer::Yes
    } else {
        OracleAnswer::No
    }
}
