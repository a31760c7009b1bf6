mod common;

use std::fs;

use common::{fixtures, position_dir};
use spatial_grounding::backends::{FixtureDetector, FixtureSceneGraphs, ObjectDetector, SceneGraphGenerator};
use spatial_grounding::matching::{filter_triples, match_entities, SynonymLexicon};
use spatial_grounding::prompt::{build_prompt, PromptTemplates};
use spatial_grounding::{EntityExtractor, PromptVariant};

const QUESTION: &str = "Is the car on the left of the person? Please answer yes or no.";

fn rendered(variant: PromptVariant) -> String {
    let dir = position_dir();
    let detections = FixtureDetector::from_dir(&dir).unwrap().detect_objects("images/img00.jpg").unwrap();
    let graph = FixtureSceneGraphs::from_dir(&dir)
        .unwrap()
        .generate_scene_graph("images/img00.jpg")
        .unwrap();
    let lexicon = SynonymLexicon::load(&dir.join("synonyms.tsv")).unwrap();
    let pair = EntityExtractor::default().extract(QUESTION).unwrap();
    let grounded = match_entities(&pair, &detections, &lexicon);
    let triples = filter_triples(&graph, &pair, &lexicon);
    build_prompt(variant, &grounded, &triples, QUESTION).text
}

#[test]
fn every_variant_matches_its_golden() {
    for variant in PromptVariant::ALL {
        let golden = fs::read_to_string(fixtures().join("prompts").join(variant.file_name())).unwrap();
        assert_eq!(rendered(variant), golden, "{variant}");
    }
}

#[test]
fn goldens_round_trip_through_identify() {
    let templates = PromptTemplates::builtin();
    for variant in PromptVariant::ALL {
        let golden = fs::read_to_string(fixtures().join("prompts").join(variant.file_name())).unwrap();
        let (found, slots) = templates.identify(&golden);
        assert_eq!(found, variant);
        assert_eq!(slots[&spatial_grounding::prompt::Slot::Question], QUESTION);
    }
}

#[test]
fn template_directory_overrides_builtin() {
    let dir = tempfile::TempDir::new().unwrap();
    fs::write(dir.path().join("baseline.txt"), "Q: {{question}}\n").unwrap();
    let templates = PromptTemplates::load_dir(dir.path()).unwrap();
    let ge = Default::default();
    let ft = Default::default();
    assert_eq!(templates.build_prompt(PromptVariant::Baseline, &ge, &ft, "why?").text, "Q: why?");
    assert_eq!(
        templates.build_prompt(PromptVariant::Full, &ge, &ft, "why?").text,
        PromptTemplates::builtin().build_prompt(PromptVariant::Full, &ge, &ft, "why?").text
    );
}
