//! Answer parsing and benchmark scores.
//!
//! MME: a task score is accuracy (percent of questions right) plus accuracy+
//! (percent of images with both questions right), so it ranges over 0–200.
//! MM-Vet: the mean grader score of a capability, as a percentage.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::ModelAnswer;
use crate::prompt::PromptVariant;
use crate::text::round_half_up;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScoringError {
    #[error("image group {image_group:?} has {count} records, expected 2")]
    PairingViolation { image_group: String, count: usize },
    #[error("no graded records for capability {0:?}")]
    EmptyCapability(String),
    #[error("base score must be positive, got {0}")]
    ZeroBase(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub kind: YesNo,
    pub raw: String,
}

static YES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\byes\b").expect("valid regex"));
static NO: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bno\b").expect("valid regex"));

pub fn parse_yes_no(answer: &ModelAnswer) -> ParsedAnswer {
    parse_yes_no_text(&answer.text)
}

/// Yes or No when exactly one of the two words occurs; Other otherwise.
pub fn parse_yes_no_text(raw: &str) -> ParsedAnswer {
    let kind = match (YES.is_match(raw), NO.is_match(raw)) {
        (true, false) => YesNo::Yes,
        (false, true) => YesNo::No,
        _ => YesNo::Other,
    };
    ParsedAnswer {
        kind,
        raw: raw.to_string(),
    }
}

impl ParsedAnswer {
    /// Other never matches a ground truth.
    pub fn is_correct(&self, ground_truth: &str) -> bool {
        match self.kind {
            YesNo::Yes => ground_truth.trim().eq_ignore_ascii_case("yes"),
            YesNo::No => ground_truth.trim().eq_ignore_ascii_case("no"),
            YesNo::Other => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Outcome {
    Parsed { parsed: ParsedAnswer, correct: bool },
    Graded { graded_score: f64 },
}

/// One question answered under one prompt variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub image_group: String,
    pub task: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub capabilities: Vec<String>,
    pub variant: PromptVariant,
    #[serde(flatten)]
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn is_correct(&self) -> bool {
        matches!(self.outcome, Outcome::Parsed { correct: true, .. })
    }

    pub fn graded_score(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Graded { graded_score } => Some(graded_score),
            Outcome::Parsed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub accuracy: f64,
    pub accuracy_plus: f64,
    pub combined: f64,
    pub n_questions: usize,
    pub n_images: usize,
}

/// Scores the records of one MME task. Records must pair two per image.
pub fn score_mme_task(records: &[EvalRecord]) -> Result<TaskScore, ScoringError> {
    let mut groups: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for record in records {
        let entry = groups.entry(record.image_group.as_str()).or_default();
        entry.0 += 1;
        entry.1 += usize::from(record.is_correct());
    }
    if let Some((group, (count, _))) = groups.iter().find(|(_, (count, _))| *count != 2) {
        return Err(ScoringError::PairingViolation {
            image_group: group.to_string(),
            count: *count,
        });
    }
    let n_questions = records.len();
    let n_images = groups.len();
    let correct: usize = groups.values().map(|(_, c)| c).sum();
    let both: usize = groups.values().filter(|(_, c)| *c == 2).count();
    let percent = |num: usize, den: usize| if den == 0 { 0.0 } else { (100 * num) as f64 / den as f64 };
    let accuracy = percent(correct, n_questions);
    let accuracy_plus = percent(both, n_images);
    Ok(TaskScore {
        accuracy,
        accuracy_plus,
        combined: accuracy + accuracy_plus,
        n_questions,
        n_images,
    })
}

/// 100 × mean graded score over records tagged with `capability`.
pub fn score_mmvet(records: &[EvalRecord], capability: &str) -> Result<f64, ScoringError> {
    let scores: Vec<f64> = records
        .iter()
        .filter(|r| r.capabilities.iter().any(|c| c == capability))
        .filter_map(EvalRecord::graded_score)
        .collect();
    mean_percent(&scores).ok_or_else(|| ScoringError::EmptyCapability(capability.to_string()))
}

/// 100 × mean graded score over all records.
pub fn score_mmvet_total(records: &[EvalRecord]) -> Result<f64, ScoringError> {
    let scores: Vec<f64> = records.iter().filter_map(EvalRecord::graded_score).collect();
    mean_percent(&scores).ok_or_else(|| ScoringError::EmptyCapability("total".to_string()))
}

fn mean_percent(scores: &[f64]) -> Option<f64> {
    (!scores.is_empty()).then(|| 100.0 * scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Relative improvement in percent, rounded to one decimal.
pub fn pct_improvement(new: f64, base: f64) -> Result<f64, ScoringError> {
    if base <= 0.0 || base.is_nan() {
        return Err(ScoringError::ZeroBase(base));
    }
    Ok(round_half_up(100.0 * (new / base - 1.0), 1))
}

/// `+19.4%` style annotation.
pub fn format_improvement(delta: f64) -> String {
    let delta = if delta == 0.0 { 0.0 } else { delta };
    if delta >= 0.0 {
        format!("+{delta:.1}%")
    } else {
        format!("{delta:.1}%")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, group: &str, correct: bool) -> EvalRecord {
        EvalRecord {
            sample_id: id.into(),
            image_group: group.into(),
            task: "position".into(),
            capabilities: vec![],
            variant: PromptVariant::Full,
            outcome: Outcome::Parsed {
                parsed: parse_yes_no_text(if correct { "yes" } else { "no" }),
                correct,
            },
            error: None,
        }
    }

    fn graded(score: f64, caps: &[&str]) -> EvalRecord {
        EvalRecord {
            sample_id: "x".into(),
            image_group: "g".into(),
            task: "mmvet".into(),
            capabilities: caps.iter().map(|c| c.to_string()).collect(),
            variant: PromptVariant::Full,
            outcome: Outcome::Graded { graded_score: score },
            error: None,
        }
    }

    #[test]
    fn yes_no_parsing() {
        assert_eq!(parse_yes_no_text("Yes, the car is left of the spot.").kind, YesNo::Yes);
        assert_eq!(parse_yes_no_text("no").kind, YesNo::No);
        assert_eq!(parse_yes_no_text("It is unclear, maybe yes or no").kind, YesNo::Other);
        assert_eq!(parse_yes_no_text("The answer is not obvious").kind, YesNo::Other);
        assert_eq!(parse_yes_no_text("NO.").kind, YesNo::No);
        assert_eq!(parse_yes_no_text("yesterday").kind, YesNo::Other);
        assert!(!parse_yes_no_text("maybe").is_correct("no"));
    }

    #[test]
    fn four_record_fixture() {
        let records = [
            record("a1", "a", true),
            record("a2", "a", true),
            record("b1", "b", true),
            record("b2", "b", false),
        ];
        let s = score_mme_task(&records).unwrap();
        assert_eq!((s.accuracy, s.accuracy_plus, s.combined), (75.0, 50.0, 125.0));
        assert_eq!((s.n_questions, s.n_images), (4, 2));
    }

    #[test]
    fn extremes() {
        let all = [record("a1", "a", true), record("a2", "a", true)];
        assert_eq!(score_mme_task(&all).unwrap().combined, 200.0);
        let none = [record("a1", "a", false), record("a2", "a", false)];
        assert_eq!(score_mme_task(&none).unwrap().combined, 0.0);
    }

    #[test]
    fn unpaired_records() {
        let records = [record("a1", "a", true), record("a2", "a", true), record("b1", "b", true)];
        assert_eq!(
            score_mme_task(&records),
            Err(ScoringError::PairingViolation {
                image_group: "b".into(),
                count: 1
            })
        );
    }

    #[test]
    fn mmvet_means() {
        assert_eq!(score_mmvet(&[graded(1.0, &["spat"]), graded(0.0, &["spat"])], "spat").unwrap(), 50.0);
        assert_eq!(score_mmvet(&[graded(1.0, &["spat"]), graded(1.0, &["spat"])], "spat").unwrap(), 100.0);
        let s = score_mmvet(&[graded(0.5, &["spat"]), graded(0.5, &["spat"]), graded(1.0, &["spat"])], "spat")
            .unwrap();
        assert_eq!(round_half_up(s, 1), 66.7);
        assert!(matches!(score_mmvet(&[graded(1.0, &["ocr"])], "spat"), Err(ScoringError::EmptyCapability(_))));
    }

    #[test]
    fn improvements() {
        assert_eq!(pct_improvement(87.54, 73.33).unwrap(), 19.4);
        assert_eq!(pct_improvement(20.1, 16.2).unwrap(), 24.1);
        assert_eq!(pct_improvement(42.0, 42.0).unwrap(), 0.0);
        assert_eq!(pct_improvement(1.0, 0.0), Err(ScoringError::ZeroBase(0.0)));
        assert_eq!(format_improvement(19.4), "+19.4%");
        assert_eq!(format_improvement(-3.25), "-3.2%");
        assert_eq!(format_improvement(-0.0), "+0.0%");
    }

    #[test]
    fn record_serialization_is_flat() {
        let r = record("a1", "a", true);
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["mode"], "parsed");
        assert_eq!(v["correct"], true);
        assert_eq!(serde_json::from_value::<EvalRecord>(v).unwrap(), r);
        let g = graded(0.5, &["spat"]);
        let v = serde_json::to_value(&g).unwrap();
        assert_eq!(v["graded_score"], 0.5);
        assert_eq!(serde_json::from_value::<EvalRecord>(v).unwrap(), g);
    }
}
