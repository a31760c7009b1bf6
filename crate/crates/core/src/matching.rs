//! Lexical binding of target entities to detections and scene-graph triples.
//!
//! A detected label or triple term matches an entity through the chain
//! exact text → head noun → synonym of the head noun. Detections are scored
//! 3/2/1 along that chain; ties go to higher confidence, then larger box,
//! then lower backend index.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BBox, DetectionSet, SceneGraph, Triple};
use crate::entities::{Entity, EntityPair};
use crate::text::normalize_text;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{path}:{line}: malformed lexicon line: {reason}")]
    MalformedLexiconLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Canonical lexical form: lowercase, no punctuation, single spaces, each word
/// naively singularized.
pub fn normalize_term(text: &str) -> String {
    normalize_with(text, |_| false)
}

fn normalize_with(text: &str, known: impl Fn(&str) -> bool) -> String {
    normalize_text(text)
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(|w| singularize(w, &known))
        .collect::<Vec<_>>()
        .join(" ")
}

fn singularize(word: &str, known: &impl Fn(&str) -> bool) -> String {
    let len = word.chars().count();
    if len <= 3 || !word.chars().all(char::is_alphabetic) {
        return word.to_string();
    }
    if word.ends_with("ss") || word.ends_with("us") || word.ends_with("is") {
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("ies") {
        if len > 4 {
            return format!("{stem}y");
        }
    }
    if let Some(stem) = word.strip_suffix("es") {
        if known(stem) {
            return stem.to_string();
        }
    }
    word.strip_suffix('s').unwrap_or(word).to_string()
}

/// Symmetric, reflexive synonym table over normalized terms.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    synonyms: BTreeMap<String, BTreeSet<String>>,
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads `term<TAB>syn1,syn2,...` lines. Blank lines and `#` comments
    /// are skipped; repeated terms accumulate.
    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let content = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&content, path)
    }

    pub fn parse(content: &str, path: &Path) -> Result<Self, LexiconError> {
        let mut lex = SynonymLexicon::new();
        for (idx, line) in content.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let malformed = |reason: &str| LexiconError::MalformedLexiconLine {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: reason.to_string(),
            };
            let (term, syns) = line.split_once('\t').ok_or_else(|| malformed("expected term<TAB>synonyms"))?;
            let term = normalize_term(term);
            if term.is_empty() {
                return Err(malformed("empty term"));
            }
            let syns: Vec<String> = syns
                .split(',')
                .map(normalize_term)
                .filter(|s| !s.is_empty())
                .collect();
            if syns.is_empty() {
                return Err(malformed("no synonyms listed"));
            }
            lex.add(&term, syns);
        }
        Ok(lex)
    }

    /// Adds `term ↔ syn` for every synonym, keeping the table symmetric.
    pub fn add<I, S>(&mut self, term: &str, synonyms: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let term = normalize_term(term);
        self.synonyms.entry(term.clone()).or_default().insert(term.clone());
        for syn in synonyms {
            let syn = normalize_term(syn.as_ref());
            if syn.is_empty() {
                continue;
            }
            self.synonyms.entry(term.clone()).or_default().insert(syn.clone());
            let back = self.synonyms.entry(syn.clone()).or_default();
            back.insert(syn);
            back.insert(term.clone());
        }
    }

    /// Synonyms of an already-normalized term, always including the term.
    pub fn synonyms(&self, term: &str) -> BTreeSet<String> {
        self.synonyms
            .get(term)
            .cloned()
            .unwrap_or_else(|| BTreeSet::from([term.to_string()]))
    }

    pub fn are_synonyms(&self, a: &str, b: &str) -> bool {
        a == b || self.synonyms.get(a).is_some_and(|s| s.contains(b))
    }

    pub fn contains_term(&self, term: &str) -> bool {
        self.synonyms.contains_key(term)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.synonyms.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.synonyms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.synonyms.is_empty()
    }

    /// [`normalize_term`], except that an `-es` plural drops both letters
    /// when the lexicon knows the shorter stem ("boxes" → "box").
    pub fn normalize(&self, text: &str) -> String {
        normalize_with(text, |stem| self.contains_term(stem))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Synonym,
    HeadNoun,
    Exact,
}

impl MatchKind {
    pub fn score(self) -> u8 {
        match self {
            MatchKind::Exact => 3,
            MatchKind::HeadNoun => 2,
            MatchKind::Synonym => 1,
        }
    }
}

/// How `term` relates to `entity`, if at all.
pub fn match_term(term: &str, entity: &Entity, lex: &SynonymLexicon) -> Option<MatchKind> {
    let term = lex.normalize(term);
    if term.is_empty() {
        return None;
    }
    let head = lex.normalize(&entity.head);
    if term == lex.normalize(&entity.text) {
        Some(MatchKind::Exact)
    } else if !head.is_empty() && term == head {
        Some(MatchKind::HeadNoun)
    } else if !head.is_empty() && lex.are_synonyms(&head, &term) {
        Some(MatchKind::Synonym)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub entity: String,
    pub bbox: BBox,
    pub kind: MatchKind,
    pub detection_index: usize,
}

/// Entity → box bindings in entity order (at most two).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundedEntities {
    pub bindings: Vec<Binding>,
}

impl GroundedEntities {
    pub fn get(&self, entity: &str) -> Option<&Binding> {
        self.bindings.iter().find(|b| b.entity == entity)
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }
}

pub fn match_entities(pair: &EntityPair, dets: &DetectionSet, lex: &SynonymLexicon) -> GroundedEntities {
    match_entities_above(pair, dets, lex, 0.0)
}

/// Like [`match_entities`], ignoring detections below `min_confidence`.
pub fn match_entities_above(
    pair: &EntityPair,
    dets: &DetectionSet,
    lex: &SynonymLexicon,
    min_confidence: f64,
) -> GroundedEntities {
    let bindings = pair
        .iter()
        .filter_map(|entity| {
            dets.detections
                .iter()
                .enumerate()
                .filter(|(_, d)| d.confidence >= min_confidence)
                .filter_map(|(i, d)| match_term(&d.label, entity, lex).map(|kind| (i, d, kind)))
                .max_by(|(ia, a, ka), (ib, b, kb)| {
                    ka.cmp(kb)
                        .then_with(|| a.confidence.total_cmp(&b.confidence))
                        .then_with(|| a.bbox.area().total_cmp(&b.bbox.area()))
                        .then_with(|| ib.cmp(ia))
                })
                .map(|(i, d, kind)| Binding {
                    entity: entity.text.clone(),
                    bbox: d.bbox,
                    kind,
                    detection_index: i,
                })
        })
        .collect();
    GroundedEntities { bindings }
}

/// Triples touching a target entity, deduplicated, in source order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilteredTriples {
    pub triples: Vec<Triple>,
}

impl FilteredTriples {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Keeps a triple when its subject or object matches either entity.
/// Predicates are not matched.
pub fn filter_triples(graph: &SceneGraph, pair: &EntityPair, lex: &SynonymLexicon) -> FilteredTriples {
    let mut kept: Vec<Triple> = Vec::new();
    for triple in &graph.triples {
        let touches = pair.iter().any(|entity| {
            match_term(&triple.subject, entity, lex).is_some() || match_term(&triple.object, entity, lex).is_some()
        });
        if touches && !kept.iter().any(|k| k.same_parts(triple)) {
            kept.push(triple.clone());
        }
    }
    FilteredTriples { triples: kept }
}
