//! Brute-force reference implementations over canonical vocabularies, where
//! every word is already lowercase and singular so normalization is the
//! identity.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use spatial_grounding::backends::{BBox, Detection, DetectionSet, SceneGraph, Triple};
use spatial_grounding::matching::{Binding, FilteredTriples, GroundedEntities, MatchKind, SynonymLexicon};
use spatial_grounding::{Entity, EntityPair};

pub const NOUNS: &[&str] = &["car", "tree", "dog", "cat", "bench", "road", "kerb", "lamp", "van", "cup", "mug", "sofa", "couch", "man"];
pub const ADJECTIVES: &[&str] = &["red", "big", "old"];
pub const PREDICATES: &[&str] = &["near", "on", "left of", "car", "holding"];
pub const CONFIDENCES: &[f64] = &[0.5, 0.7, 0.9];

#[derive(Debug, Clone)]
pub struct Instance {
    pub pair: EntityPair,
    pub detections: DetectionSet,
    pub graph: SceneGraph,
    pub synonyms: Vec<(String, String)>,
}

impl Instance {
    pub fn lexicon(&self) -> SynonymLexicon {
        let mut lex = SynonymLexicon::new();
        for (a, b) in &self.synonyms {
            lex.add(a, [b]);
        }
        lex
    }
}

fn phrase(rng: &mut impl Rng) -> String {
    let noun = *NOUNS.choose(rng).unwrap();
    if rng.random_bool(0.3) {
        format!("{} {noun}", ADJECTIVES.choose(rng).unwrap())
    } else {
        noun.to_string()
    }
}

fn entity(rng: &mut impl Rng) -> Option<Entity> {
    rng.random_bool(0.85).then(|| {
        let text = phrase(rng);
        let head = text.rsplit(' ').next().unwrap().to_string();
        Entity::with_head(text, head)
    })
}

/// ≤10 detections, ≤20 triples, ≤6 synonym pairs; small value ranges so that
/// confidence and area ties are common.
pub fn random_instance(rng: &mut impl Rng) -> Instance {
    let pair = EntityPair::new(entity(rng), entity(rng));
    let detections = (0..rng.random_range(0..=10))
        .map(|_| Detection {
            label: phrase(rng),
            bbox: BBox::new(
                rng.random_range(0..50) as f64,
                rng.random_range(0..50) as f64,
                rng.random_range(1..4) as f64,
                rng.random_range(1..4) as f64,
            )
            .unwrap(),
            confidence: *CONFIDENCES.choose(rng).unwrap(),
        })
        .collect();
    let triples = (0..rng.random_range(0..=20))
        .map(|_| Triple::new(&phrase(rng), PREDICATES.choose(rng).unwrap(), &phrase(rng)))
        .collect();
    let synonyms = (0..rng.random_range(0..=6))
        .map(|_| (NOUNS.choose(rng).unwrap().to_string(), NOUNS.choose(rng).unwrap().to_string()))
        .collect();
    Instance {
        pair,
        detections: DetectionSet { detections },
        graph: SceneGraph { triples },
        synonyms,
    }
}

fn synonymous(synonyms: &[(String, String)], a: &str, b: &str) -> bool {
    a == b || synonyms.iter().any(|(x, y)| (x == a && y == b) || (x == b && y == a))
}

/// 3 exact, 2 head noun, 1 synonym of the head noun, 0 no match.
pub fn score(synonyms: &[(String, String)], term: &str, entity: &Entity) -> u8 {
    if term == entity.text {
        3
    } else if term == entity.head {
        2
    } else if synonymous(synonyms, &entity.head, term) {
        1
    } else {
        0
    }
}

fn kind(score: u8) -> MatchKind {
    match score {
        3 => MatchKind::Exact,
        2 => MatchKind::HeadNoun,
        _ => MatchKind::Synonym,
    }
}

pub fn match_entities(inst: &Instance) -> GroundedEntities {
    let mut bindings = Vec::new();
    for entity in [&inst.pair.first, &inst.pair.second].into_iter().flatten() {
        let mut best: Option<(u8, f64, f64, usize)> = None;
        for (i, d) in inst.detections.detections.iter().enumerate() {
            let s = score(&inst.synonyms, &d.label, entity);
            if s == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((bs, bc, ba, _)) => {
                    s > bs || (s == bs && (d.confidence > bc || (d.confidence == bc && d.bbox.area() > ba)))
                }
            };
            if better {
                best = Some((s, d.confidence, d.bbox.area(), i));
            }
        }
        if let Some((s, _, _, i)) = best {
            bindings.push(Binding {
                entity: entity.text.clone(),
                bbox: inst.detections.detections[i].bbox,
                kind: kind(s),
                detection_index: i,
            });
        }
    }
    GroundedEntities { bindings }
}

pub fn filter_triples(inst: &Instance) -> FilteredTriples {
    let entities: Vec<&Entity> = [&inst.pair.first, &inst.pair.second].into_iter().flatten().collect();
    let mut seen = BTreeSet::new();
    let triples = inst
        .graph
        .triples
        .iter()
        .filter(|t| {
            entities
                .iter()
                .any(|e| score(&inst.synonyms, &t.subject, e) > 0 || score(&inst.synonyms, &t.object, e) > 0)
        })
        .filter(|t| seen.insert((t.subject.clone(), t.predicate.clone(), t.object.clone())))
        .cloned()
        .collect();
    FilteredTriples { triples }
}
