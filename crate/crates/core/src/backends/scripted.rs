//! In-process stand-ins for model and grader backends.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clamp_score, AnswerModel, BackendError, Grader, ModelAnswer};
use crate::prompt::{parse_gpl, PromptTemplates, Slot};
use crate::spatial::{oracle_answer_boxes, OracleAnswer, RelationKeywords, RelationParams};
use crate::text::{normalize_text, stable_u64};

fn answer(text: impl Into<String>, backend_id: String) -> ModelAnswer {
    ModelAnswer {
        text: text.into(),
        backend_id,
        latency_ms: 0,
    }
}

/// Always answers with the same text.
#[derive(Debug, Clone)]
pub struct EchoModel {
    text: String,
}

impl EchoModel {
    pub fn new(text: impl Into<String>) -> Self {
        EchoModel { text: text.into() }
    }
}

impl AnswerModel for EchoModel {
    fn backend_id(&self) -> String {
        format!("scripted:echo:{}", self.text)
    }

    fn query_mllm(&self, _image_ref: Option<&str>, prompt: &str) -> Result<ModelAnswer, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        Ok(answer(self.text.clone(), self.backend_id()))
    }
}

/// Answers "yes" or "no" by a seeded coin flipped once per image.
///
/// Every question about the same image gets the same answer, so on a
/// benchmark whose images each carry one yes- and one no-question it is
/// right exactly once per image.
#[derive(Debug, Clone)]
pub struct SeededCoinModel {
    seed: u64,
}

impl SeededCoinModel {
    pub fn new(seed: u64) -> Self {
        SeededCoinModel { seed }
    }

    pub fn flip(&self, image_ref: Option<&str>, prompt: &str) -> bool {
        let key = image_ref.unwrap_or(prompt);
        ChaCha8Rng::seed_from_u64(self.seed ^ stable_u64(key)).random_bool(0.5)
    }
}

impl AnswerModel for SeededCoinModel {
    fn backend_id(&self) -> String {
        format!("scripted:coin:{}", self.seed)
    }

    fn query_mllm(&self, image_ref: Option<&str>, prompt: &str) -> Result<ModelAnswer, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let text = if self.flip(image_ref, prompt) { "yes" } else { "no" };
        Ok(answer(text, self.backend_id()))
    }
}

/// Answers directional questions from the position block of the prompt.
///
/// The prompt is matched against the known templates to recover the question
/// and positions; the first two entities are related geometrically. When no
/// answer can be derived it replies "unknown", or defers to a seeded coin
/// when one is configured.
#[derive(Debug, Clone, Default)]
pub struct GeometryOracleModel {
    templates: PromptTemplates,
    keywords: RelationKeywords,
    params: RelationParams,
    fallback: Option<SeededCoinModel>,
}

impl GeometryOracleModel {
    pub fn new(templates: PromptTemplates, keywords: RelationKeywords, params: RelationParams) -> Self {
        GeometryOracleModel {
            templates,
            keywords,
            params,
            fallback: None,
        }
    }

    pub fn with_coin_fallback(mut self, seed: u64) -> Self {
        self.fallback = Some(SeededCoinModel::new(seed));
        self
    }

    pub fn judge(&self, prompt: &str) -> OracleAnswer {
        let (_, slots) = self.templates.identify(prompt);
        let question = slots.get(&Slot::Question).map(String::as_str).unwrap_or(prompt);
        let boxes = slots
            .get(&Slot::Positions)
            .and_then(|block| parse_gpl(block))
            .unwrap_or_default();
        oracle_answer_boxes(
            question,
            boxes.first().map(|(_, b)| b),
            boxes.get(1).map(|(_, b)| b),
            &self.keywords,
            self.params,
        )
    }
}

impl AnswerModel for GeometryOracleModel {
    fn backend_id(&self) -> String {
        match &self.fallback {
            Some(coin) => format!("scripted:oracle+coin:{}", coin.seed),
            None => "scripted:oracle".to_string(),
        }
    }

    fn query_mllm(&self, image_ref: Option<&str>, prompt: &str) -> Result<ModelAnswer, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let text = match (self.judge(prompt), &self.fallback) {
            (OracleAnswer::Unknown, Some(coin)) => coin.query_mllm(image_ref, prompt)?.text,
            (verdict, _) => verdict.to_string(),
        };
        Ok(answer(text, self.backend_id()))
    }
}

/// Deterministic grader: 1.0 when the normalized ground truth is a substring
/// of the normalized prediction, else 0.0.
#[derive(Debug, Clone, Copy, Default)]
pub struct FallbackGrader;

impl Grader for FallbackGrader {
    fn backend_id(&self) -> String {
        "fallback:substring".to_string()
    }

    fn grade_open_ended(&self, _question: &str, ground_truth: &str, prediction: &str) -> Result<f64, BackendError> {
        let gt = normalize_text(ground_truth);
        let pred = normalize_text(prediction);
        Ok(if pred.contains(&gt) { 1.0 } else { 0.0 })
    }
}

/// Uses `primary`, switching to `fallback` when the primary is unreachable
/// or times out.
pub struct WithFallback {
    primary: Arc<dyn Grader>,
    fallback: Arc<dyn Grader>,
}

impl WithFallback {
    pub fn new(primary: Arc<dyn Grader>, fallback: Arc<dyn Grader>) -> Self {
        WithFallback { primary, fallback }
    }
}

impl Grader for WithFallback {
    fn backend_id(&self) -> String {
        format!("{}|{}", self.primary.backend_id(), self.fallback.backend_id())
    }

    fn grade_open_ended(&self, question: &str, ground_truth: &str, prediction: &str) -> Result<f64, BackendError> {
        match self.primary.grade_open_ended(question, ground_truth, prediction) {
            Err(BackendError::Unreachable { .. } | BackendError::Timeout { .. }) => {
                self.fallback.grade_open_ended(question, ground_truth, prediction)
            }
            other => other.and_then(clamp_score),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::BBox;
    use crate::matching::{Binding, FilteredTriples, GroundedEntities, MatchKind};
    use crate::prompt::{build_prompt, PromptVariant};

    fn grounded(pairs: &[(&str, [f64; 4])]) -> GroundedEntities {
        GroundedEntities {
            bindings: pairs
                .iter()
                .enumerate()
                .map(|(i, (e, b))| Binding {
                    entity: e.to_string(),
                    bbox: BBox::try_from(*b).unwrap(),
                    kind: MatchKind::Exact,
                    detection_index: i,
                })
                .collect(),
        }
    }

    #[test]
    fn echo_answers_verbatim() {
        let m = EchoModel::new("yes");
        assert_eq!(m.query_mllm(Some("i"), "p").unwrap().text, "yes");
        assert_eq!(m.query_mllm(Some("i"), ""), Err(BackendError::EmptyPrompt));
    }

    #[test]
    fn coin_is_per_image_and_seeded() {
        let m = SeededCoinModel::new(7);
        let a = m.query_mllm(Some("img1"), "q1").unwrap().text;
        assert_eq!(m.query_mllm(Some("img1"), "q2").unwrap().text, a);
        let flips: Vec<bool> = (0..64).map(|i| m.flip(Some(&format!("img{i}")), "")).collect();
        assert!(flips.iter().any(|f| *f) && flips.iter().any(|f| !*f));
        let again: Vec<bool> = (0..64).map(|i| SeededCoinModel::new(7).flip(Some(&format!("img{i}")), "")).collect();
        assert_eq!(flips, again);
    }

    #[test]
    fn oracle_reads_positions_from_prompt() {
        let ge = grounded(&[("car", [0.0, 50.0, 40.0, 20.0]), ("person", [100.0, 40.0, 20.0, 50.0])]);
        let oracle = GeometryOracleModel::default();
        for (variant, expect) in [
            (PromptVariant::Full, "yes"),
            (PromptVariant::GplOnly, "yes"),
            (PromptVariant::SgOnly, "unknown"),
            (PromptVariant::Baseline, "unknown"),
        ] {
            let p = build_prompt(variant, &ge, &FilteredTriples::default(), "Is the car on the left of the person?");
            assert_eq!(oracle.query_mllm(None, &p.text).unwrap().text, expect, "{variant}");
        }
        let p = build_prompt(PromptVariant::Full, &ge, &FilteredTriples::default(), "Is the car on the right of the person?");
        assert_eq!(oracle.query_mllm(None, &p.text).unwrap().text, "no");
    }

    #[test]
    fn oracle_falls_back_to_coin() {
        let oracle = GeometryOracleModel::default().with_coin_fallback(3);
        let text = oracle.query_mllm(Some("img"), "Is the car red?").unwrap().text;
        assert!(text == "yes" || text == "no");
    }

    #[test]
    fn fallback_grader_substring_rule() {
        let g = FallbackGrader;
        assert_eq!(g.grade_open_ended("How many?", "two", "There are two dogs").unwrap(), 1.0);
        assert_eq!(g.grade_open_ended("How many?", "two", "three").unwrap(), 0.0);
        assert_eq!(g.grade_open_ended("q", "Two.", "TWO dogs").unwrap(), 1.0);
    }

    struct Down;

    impl Grader for Down {
        fn backend_id(&self) -> String {
            "down".into()
        }

        fn grade_open_ended(&self, _: &str, _: &str, _: &str) -> Result<f64, BackendError> {
            Err(BackendError::Unreachable {
                endpoint: "x".into(),
                reason: "refused".into(),
            })
        }
    }

    #[test]
    fn unreachable_grader_uses_fallback() {
        let g = WithFallback::new(Arc::new(Down), Arc::new(FallbackGrader));
        assert_eq!(g.grade_open_ended("q", "two", "two dogs").unwrap(), 1.0);
    }
}
