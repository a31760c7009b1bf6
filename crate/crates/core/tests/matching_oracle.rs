mod common;

use common::oracle::{self, random_instance, NOUNS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatial_grounding::matching::{filter_triples, match_entities};

fn instance(seed: u64) -> oracle::Instance {
    random_instance(&mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn match_entities_agrees_with_oracle(seed in any::<u64>()) {
        let inst = instance(seed);
        prop_assert_eq!(match_entities(&inst.pair, &inst.detections, &inst.lexicon()), oracle::match_entities(&inst));
    }

    #[test]
    fn filter_triples_agrees_with_oracle(seed in any::<u64>()) {
        let inst = instance(seed);
        prop_assert_eq!(filter_triples(&inst.graph, &inst.pair, &inst.lexicon()), oracle::filter_triples(&inst));
    }

    #[test]
    fn more_synonyms_never_lose_matches(seed in any::<u64>(), a in 0..NOUNS.len(), b in 0..NOUNS.len()) {
        let inst = instance(seed);
        let mut wider = inst.clone();
        wider.synonyms.push((NOUNS[a].to_string(), NOUNS[b].to_string()));
        let narrow_triples = filter_triples(&inst.graph, &inst.pair, &inst.lexicon());
        let wide_triples = filter_triples(&wider.graph, &wider.pair, &wider.lexicon());
        for t in &narrow_triples.triples {
            prop_assert!(wide_triples.triples.contains(t));
        }
        let narrow = match_entities(&inst.pair, &inst.detections, &inst.lexicon());
        let wide = match_entities(&wider.pair, &wider.detections, &wider.lexicon());
        prop_assert!(wide.len() >= narrow.len());
        for binding in &narrow.bindings {
            let widened = wide.get(&binding.entity).expect("binding kept");
            prop_assert!(widened.kind >= binding.kind);
        }
    }

    #[test]
    fn filtered_triples_keep_source_order(seed in any::<u64>()) {
        let inst = instance(seed);
        let kept = filter_triples(&inst.graph, &inst.pair, &inst.lexicon());
        let mut source = inst.graph.triples.iter();
        for t in &kept.triples {
            prop_assert!(source.any(|s| s == t), "kept triples must be a subsequence of the graph");
        }
    }

    #[test]
    fn predicates_do_not_affect_filtering(seed in any::<u64>()) {
        let inst = instance(seed);
        let mut renamed = inst.clone();
        for (i, t) in renamed.graph.triples.iter_mut().enumerate() {
            t.predicate = format!("p{i}");
        }
        let lex = inst.lexicon();
        let before: Vec<(String, String)> = filter_triples(&inst.graph, &inst.pair, &lex)
            .triples.iter().map(|t| (t.subject.clone(), t.object.clone())).collect();
        let after: Vec<(String, String)> = filter_triples(&renamed.graph, &renamed.pair, &lex)
            .triples.iter().map(|t| (t.subject.clone(), t.object.clone())).collect();
        // renaming predicates can only split former duplicates apart
        let after_set: std::collections::BTreeSet<_> = after.iter().cloned().collect();
        let before_set: std::collections::BTreeSet<_> = before.iter().cloned().collect();
        prop_assert_eq!(before_set, after_set);
    }

    #[test]
    fn bindings_point_at_matching_detections(seed in any::<u64>()) {
        let inst = instance(seed);
        let grounded = match_entities(&inst.pair, &inst.detections, &inst.lexicon());
        for b in &grounded.bindings {
            let det = &inst.detections.detections[b.detection_index];
            prop_assert_eq!(det.bbox, b.bbox);
            let entity = inst.pair.iter().find(|e| e.text == b.entity).unwrap();
            prop_assert_eq!(oracle::score(&inst.synonyms, &det.label, entity), b.kind.score());
        }
    }
}
