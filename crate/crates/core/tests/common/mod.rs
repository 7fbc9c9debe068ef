//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssan::data::{parse_corpus, Document, Entity, Mention, RelationFact};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn example_doc() -> Document {
    parse_corpus(&fixture("two_sentence.json"), None).unwrap().remove(0)
}

/// Rows of the hand-transcribed two-sentence example grid, as dependency codes.
pub fn example_grid() -> Vec<Vec<u8>> {
    std::fs::read_to_string(fixture("two_sentence_grid.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(|c| c.parse().unwrap()).collect())
        .collect()
}

/// Random valid document: 1..=4 sentences, non-overlapping mentions of up
/// to 3 tokens assigned to random entities, a few random facts.
pub fn random_document(seed: u64) -> Document {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences: Vec<Vec<String>> = (0..rng.gen_range(1..=4))
        .map(|_| (0..rng.gen_range(1..=8)).map(|_| format!("w{}", rng.gen_range(0..12))).collect())
        .collect();
    let slots = rng.gen_range(1..=4);
    let mut mentions: Vec<Vec<Mention>> = vec![Vec::new(); slots];
    for (s, sent) in sentences.iter().enumerate() {
        let mut t = 0;
        while t < sent.len() {
            if rng.gen_bool(0.4) {
                let len = rng.gen_range(1..=3).min(sent.len() - t);
                mentions[rng.gen_range(0..slots)].push(Mention {
                    name: sent[t..t + len].join(" "),
                    sentence: s,
                    start: t,
                    end: t + len,
                });
                t += len;
            } else {
                t += 1;
            }
        }
    }
    let entities: Vec<Entity> = mentions
        .into_iter()
        .filter(|m| !m.is_empty())
        .enumerate()
        .map(|(index, mentions)| Entity {
            index,
            entity_type: ["PER", "ORG"][rng.gen_range(0..2)].into(),
            mentions,
        })
        .collect();
    let mut facts = Vec::new();
    if entities.len() >= 2 {
        for _ in 0..rng.gen_range(0..3) {
            let head = rng.gen_range(0..entities.len());
            let tail = (head + rng.gen_range(1..entities.len())) % entities.len();
            let fact = RelationFact {
                head,
                tail,
                relation: ["r0", "r1"][rng.gen_range(0..2)].into(),
            };
            if !facts.contains(&fact) {
                facts.push(fact);
            }
        }
    }
    let doc = Document {
        doc_id: format!("rand{seed}"),
        sentences,
        entities,
        facts,
    };
    doc.validate().unwrap();
    doc
}

/// Dependency codes computed straight from the definitions: sentence of
/// each token and entity covering it, looked up by scanning raw spans.
pub fn oracle_codes(doc: &Document) -> Vec<u8> {
    let mut sentence_of = Vec::new();
    for (s, sent) in doc.sentences.iter().enumerate() {
        sentence_of.extend(std::iter::repeat_n(s, sent.len()));
    }
    let n = sentence_of.len();
    let entity_of = |t: usize| -> Option<usize> {
        let s = sentence_of[t];
        let local = t - sentence_of.iter().position(|&x| x == s).unwrap();
        doc.entities
            .iter()
            .position(|e| e.mentions.iter().any(|m| m.sentence == s && m.start <= local && local < m.end))
    };
    let mut out = vec![0u8; n * n];
    for i in 0..n {
        for j in 0..n {
            let same_sentence = sentence_of[i] == sentence_of[j];
            out[i * n + j] = match (entity_of(i), entity_of(j)) {
                (Some(a), Some(b)) if a == b && same_sentence => 5,
                (Some(a), Some(b)) if a == b => 4,
                (Some(_), Some(_)) if same_sentence => 3,
                (Some(_), Some(_)) => 2,
                (Some(_), None) | (None, Some(_)) if same_sentence => 1,
                _ => 0,
            };
        }
    }
    out
}
