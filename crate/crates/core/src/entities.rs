//! Target entity extraction from a question.
//!
//! A question is tokenized, tagged with a word/suffix lexicon (or any other
//! [`Tagger`]), chunked with the grammar `DET? ADJ* NOUN+ NUM?`, and the first
//! two distinct chunks whose head noun is not a scene-meta word become the
//! entity pair.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, LazyLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::normalize_term;

const BUILTIN_LEXICON: &str = include_str!("../data/tag_lexicon.tsv");

/// Head nouns that never name a grounding target.
pub const DEFAULT_BLOCKLIST: &[&str] = &[
    "picture", "image", "photo", "scene", "side", "left", "right", "top", "bottom",
];

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("tag lexicon not found: {0}")]
    LexiconMissing(PathBuf),
    #[error("{path}:{line}: malformed tag lexicon line: {reason}")]
    MalformedLexicon {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("tagger returned {got} tags for {expected} tokens")]
    LengthMismatch { expected: usize, got: usize },
    #[error("tagger backend failed: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pos {
    Det,
    Adj,
    Noun,
    Num,
    Verb,
    Adp,
    Pron,
    Other,
}

impl FromStr for Pos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "DET" => Pos::Det,
            "ADJ" => Pos::Adj,
            "NOUN" => Pos::Noun,
            "NUM" => Pos::Num,
            "VERB" => Pos::Verb,
            "ADP" => Pos::Adp,
            "PRON" => Pos::Pron,
            "OTHER" => Pos::Other,
            other => return Err(format!("unknown tag {other:?}")),
        })
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("tag serializes");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub pos: Option<Pos>,
    pub index: usize,
}

/// Splits on whitespace and punctuation.
///
/// Letter runs (with inner hyphens, as in "t-shirt") and digit runs become
/// separate tokens, so "spot33" yields `spot`, `33`.
pub fn tokenize(question: &str) -> Vec<Token> {
    #[derive(PartialEq, Clone, Copy)]
    enum Run {
        Alpha,
        Digit,
    }

    let chars: Vec<char> = question.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut run: Option<Run> = None;

    let flush = |current: &mut String, tokens: &mut Vec<Token>| {
        if !current.is_empty() {
            let index = tokens.len();
            tokens.push(Token {
                text: std::mem::take(current),
                pos: None,
                index,
            });
        }
    };

    for (i, &c) in chars.iter().enumerate() {
        let kind = if c.is_alphabetic() {
            Some(Run::Alpha)
        } else if c.is_ascii_digit() {
            Some(Run::Digit)
        } else {
            None
        };
        match kind {
            Some(k) => {
                if run.is_some_and(|r| r != k) {
                    flush(&mut current, &mut tokens);
                }
                current.push(c);
                run = Some(k);
            }
            None => {
                let joins_word = c == '-'
                    && run == Some(Run::Alpha)
                    && chars.get(i + 1).is_some_and(|n| n.is_alphabetic());
                if joins_word {
                    current.push(c);
                } else {
                    flush(&mut current, &mut tokens);
                    run = None;
                }
            }
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

/// Assigns one tag per token.
pub trait Tagger: Send + Sync {
    fn tag(&self, tokens: &[Token]) -> Result<Vec<Pos>, TaggerError>;
}

/// Word table plus suffix rules. Unknown words default to NOUN.
#[derive(Debug, Clone, Default)]
pub struct TagLexicon {
    words: HashMap<String, Pos>,
    suffixes: Vec<(String, Pos)>,
}

impl TagLexicon {
    /// The lexicon compiled into the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_LEXICON, Path::new("<builtin>")).expect("builtin lexicon parses")
    }

    pub fn load(path: &Path) -> Result<Self, TaggerError> {
        let content = std::fs::read_to_string(path)
            .map_err(|_| TaggerError::LexiconMissing(path.to_path_buf()))?;
        Self::parse(&content, path)
    }

    /// `word<TAB>TAG` lines; `-suffix<TAB>TAG` adds a suffix rule; `#` starts
    /// a comment line.
    pub fn parse(content: &str, path: &Path) -> Result<Self, TaggerError> {
        let mut lexicon = TagLexicon::default();
        for (idx, line) in content.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |reason: String| TaggerError::MalformedLexicon {
                path: path.to_path_buf(),
                line: idx + 1,
                reason,
            };
            let (word, tag) = line
                .split_once('\t')
                .ok_or_else(|| malformed("expected word<TAB>TAG".into()))?;
            let tag: Pos = tag.parse().map_err(malformed)?;
            let word = word.trim().to_lowercase();
            if let Some(suffix) = word.strip_prefix('-') {
                if suffix.is_empty() {
                    return Err(malformed("empty suffix".into()));
                }
                lexicon.suffixes.push((suffix.to_string(), tag));
            } else if word.is_empty() {
                return Err(malformed("empty word".into()));
            } else {
                lexicon.words.insert(word, tag);
            }
        }
        lexicon
            .suffixes
            .sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(lexicon)
    }

    pub fn lookup(&self, word: &str) -> Pos {
        if !word.is_empty() && word.chars().all(|c| c.is_ascii_digit()) {
            return Pos::Num;
        }
        let lower = word.to_lowercase();
        if let Some(tag) = self.words.get(&lower) {
            return *tag;
        }
        let len = lower.chars().count();
        self.suffixes
            .iter()
            .find(|(suffix, _)| len > suffix.chars().count() + 2 && lower.ends_with(suffix.as_str()))
            .map(|(_, tag)| *tag)
            .unwrap_or(Pos::Noun)
    }
}

impl Tagger for TagLexicon {
    fn tag(&self, tokens: &[Token]) -> Result<Vec<Pos>, TaggerError> {
        Ok(tokens.iter().map(|t| self.lookup(&t.text)).collect())
    }
}

static BUILTIN_TAGGER: LazyLock<TagLexicon> = LazyLock::new(TagLexicon::builtin);

/// Returns the tokens with their tags filled in.
pub fn pos_tag(tokens: &[Token], tagger: &dyn Tagger) -> Result<Vec<Token>, TaggerError> {
    let tags = tagger.tag(tokens)?;
    if tags.len() != tokens.len() {
        return Err(TaggerError::LengthMismatch {
            expected: tokens.len(),
            got: tags.len(),
        });
    }
    Ok(tokens
        .iter()
        .zip(tags)
        .map(|(token, pos)| Token {
            pos: Some(pos),
            ..token.clone()
        })
        .collect())
}

/// A noun chunk with its leading determiner removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NounChunk {
    pub tokens: Vec<Token>,
}

impl NounChunk {
    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Last NOUN token.
    pub fn head(&self) -> &str {
        self.tokens
            .iter()
            .rev()
            .find(|t| t.pos == Some(Pos::Noun))
            .map(|t| t.text.as_str())
            .unwrap_or_default()
    }
}

/// Left-to-right maximal matches of `DET? ADJ* NOUN+ NUM?`.
pub fn extract_noun_chunks(tokens: &[Token]) -> Vec<NounChunk> {
    let is = |i: usize, pos: Pos| tokens.get(i).is_some_and(|t| t.pos == Some(pos));
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let mut start = i;
        if is(start, Pos::Det) {
            start += 1;
        }
        let mut j = start;
        while is(j, Pos::Adj) {
            j += 1;
        }
        let nouns_start = j;
        while is(j, Pos::Noun) {
            j += 1;
        }
        if j == nouns_start {
            i += 1;
            continue;
        }
        if is(j, Pos::Num) {
            j += 1;
        }
        chunks.push(NounChunk {
            tokens: tokens[start..j].to_vec(),
        });
        i = j;
    }
    chunks
}

/// A target entity and the head noun used for lexical matching.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub text: String,
    pub head: String,
}

impl Entity {
    /// Builds an entity, finding its head noun with the builtin lexicon.
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let head = head_noun(&text, &*BUILTIN_TAGGER).unwrap_or_else(|| last_word(&text));
        Entity { text, head }
    }

    pub fn with_head(text: impl Into<String>, head: impl Into<String>) -> Self {
        Entity {
            text: text.into(),
            head: head.into(),
        }
    }
}

fn last_word(text: &str) -> String {
    text.split_whitespace().last().unwrap_or_default().to_string()
}

fn head_noun(text: &str, tagger: &dyn Tagger) -> Option<String> {
    let tagged = pos_tag(&tokenize(text), tagger).ok()?;
    tagged
        .iter()
        .rev()
        .find(|t| t.pos == Some(Pos::Noun))
        .map(|t| t.text.clone())
}

/// The two target entities of a question, in question order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityPair {
    pub first: Option<Entity>,
    pub second: Option<Entity>,
}

impl EntityPair {
    pub fn new(first: Option<Entity>, second: Option<Entity>) -> Self {
        EntityPair { first, second }
    }

    pub fn of(first: &str, second: &str) -> Self {
        EntityPair {
            first: Some(Entity::new(first)),
            second: Some(Entity::new(second)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Entity> {
        self.first.iter().chain(self.second.iter())
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_none() && self.second.is_none()
    }
}

#[derive(Clone)]
pub struct EntityExtractor {
    tagger: Arc<dyn Tagger>,
    blocklist: BTreeSet<String>,
}

impl fmt::Debug for EntityExtractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EntityExtractor")
            .field("blocklist", &self.blocklist)
            .finish_non_exhaustive()
    }
}

impl Default for EntityExtractor {
    fn default() -> Self {
        Self::new(
            Arc::new(TagLexicon::builtin()),
            DEFAULT_BLOCKLIST.iter().copied(),
        )
    }
}

impl EntityExtractor {
    pub fn new<I, S>(tagger: Arc<dyn Tagger>, blocklist: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        EntityExtractor {
            tagger,
            blocklist: blocklist
                .into_iter()
                .map(|w| normalize_term(w.as_ref()))
                .collect(),
        }
    }

    pub fn tagger(&self) -> &dyn Tagger {
        self.tagger.as_ref()
    }

    pub fn noun_chunks(&self, question: &str) -> Result<Vec<NounChunk>, TaggerError> {
        let tagged = pos_tag(&tokenize(question), self.tagger.as_ref())?;
        Ok(extract_noun_chunks(&tagged))
    }

    /// Entity with its head noun computed by this extractor's tagger.
    pub fn entity(&self, text: &str) -> Result<Entity, TaggerError> {
        let tagged = pos_tag(&tokenize(text), self.tagger.as_ref())?;
        let head = tagged
            .iter()
            .rev()
            .find(|t| t.pos == Some(Pos::Noun))
            .map(|t| t.text.clone())
            .unwrap_or_else(|| last_word(text));
        Ok(Entity::with_head(text, head))
    }

    /// The first two distinct, non-blocklisted noun chunks of the question.
    pub fn extract(&self, question: &str) -> Result<EntityPair, TaggerError> {
        let mut picked: Vec<(String, Entity)> = Vec::with_capacity(2);
        let mut surplus = 0usize;
        for chunk in self.noun_chunks(question)? {
            if self.blocklist.contains(&normalize_term(chunk.head())) {
                continue;
            }
            let key = normalize_term(&chunk.text());
            if picked.iter().any(|(k, _)| *k == key) {
                continue;
            }
            if picked.len() == 2 {
                surplus += 1;
                continue;
            }
            picked.push((key, Entity::with_head(chunk.text(), chunk.head())));
        }
        if surplus > 0 {
            tracing::warn!(question, surplus, "question names more than two entities; keeping the first two");
        }
        let mut it = picked.into_iter().map(|(_, e)| e);
        Ok(EntityPair::new(it.next(), it.next()))
    }
}
