//! Synthetic corpora whose gold facts follow from entity structure alone.
//!
//! Two entities that share a sentence hold [`R_COOCCUR`] (both directions).
//! Two entities that never share a sentence but are both co-sentential
//! with some third entity, necessarily one mentioned in two sentences, hold
//! [`R_BRIDGE`]. Recovering the latter requires following a coreference
//! chain across sentences.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Document, Entity, Mention, RelationFact};
use crate::error::{Error, Result};
use crate::structure::{build_structure_matrix, DependencyType};

pub const R_COOCCUR: &str = "r0";
pub const R_BRIDGE: &str = "r1";
const TYPES: [&str; 4] = ["PER", "ORG", "LOC", "MISC"];
const PRONOUN: &str = "it";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub docs: usize,
    /// Size of the filler-word pool.
    pub vocab_size: usize,
    /// Size of the entity-name pool.
    pub name_pool: usize,
    pub sentences: usize,
    /// Inclusive range of filler words per sentence.
    pub filler_min: usize,
    pub filler_max: usize,
    pub entities_per_doc: usize,
    /// Entities per document that receive a second mention in another sentence.
    pub bridges_per_doc: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            docs: 30,
            vocab_size: 40,
            name_pool: 40,
            sentences: 3,
            filler_min: 3,
            filler_max: 5,
            entities_per_doc: 5,
            bridges_per_doc: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sentences == 0 {
            return bad("synthetic documents need at least one sentence".into());
        }
        if self.entities_per_doc < 2 {
            return bad("synthetic documents need at least two entities".into());
        }
        if self.bridges_per_doc > self.entities_per_doc {
            return bad(format!(
                "{} bridges exceed {} entities",
                self.bridges_per_doc, self.entities_per_doc
            ));
        }
        if self.bridges_per_doc > 0 && self.sentences < 2 {
            return bad("bridges need at least two sentences".into());
        }
        if self.filler_min > self.filler_max {
            return bad("filler_min exceeds filler_max".into());
        }
        if self.vocab_size == 0 || self.name_pool == 0 {
            return bad("word pools must be non-empty".into());
        }
        let mentions = self.entities_per_doc + self.bridges_per_doc;
        let tokens = mentions * 2 + self.sentences * self.filler_max;
        if self.entities_per_doc > tokens {
            return bad("more entities than tokens".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub docs: Vec<Document>,
    /// Facts produced by the generating rule, one set per document; equal
    /// to each document's `facts`.
    pub oracle: Vec<BTreeSet<RelationFact>>,
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut docs = Vec::with_capacity(cfg.docs);
    let mut oracle = Vec::with_capacity(cfg.docs);
    for i in 0..cfg.docs {
        let mut doc = generate_doc(cfg, &mut rng, format!("synth-{}-{i}", cfg.seed));
        let facts = rule_facts(&doc);
        doc.facts = facts.iter().cloned().collect();
        doc.validate()?;
        docs.push(doc);
        oracle.push(facts);
    }
    Ok(SynthCorpus { docs, oracle })
}

fn generate_doc(cfg: &SynthConfig, rng: &mut ChaCha8Rng, doc_id: String) -> Document {
    let n_ent = cfg.entities_per_doc;
    let mut homes: Vec<usize> = (0..n_ent)
        .map(|e| if e < cfg.sentences { e } else { rng.gen_range(0..cfg.sentences) })
        .collect();
    homes.shuffle(rng);
    // (entity, sentence) for every mention; the first mention of each entity
    // is in its home sentence.
    let mut placements: Vec<(usize, usize)> = homes.iter().copied().enumerate().collect();
    let mut bridge_entities: Vec<usize> = (0..n_ent).collect();
    bridge_entities.shuffle(rng);
    for &e in bridge_entities.iter().take(cfg.bridges_per_doc) {
        let mut other = rng.gen_range(0..cfg.sentences - 1);
        if other >= homes[e] {
            other += 1;
        }
        placements.push((e, other));
    }
    let names: Vec<Vec<String>> = (0..n_ent)
        .map(|_| {
            let len = rng.gen_range(1..=2);
            (0..len)
                .map(|_| format!("n{}", rng.gen_range(0..cfg.name_pool)))
                .collect()
        })
        .collect();
    let types: Vec<&str> = (0..n_ent).map(|_| TYPES[rng.gen_range(0..TYPES.len())]).collect();

    let mut sentences = Vec::with_capacity(cfg.sentences);
    let mut mentions: Vec<Vec<Mention>> = vec![Vec::new(); n_ent];
    for s in 0..cfg.sentences {
        let filler = rng.gen_range(cfg.filler_min..=cfg.filler_max);
        // Slots: None = filler word, Some(e) = a mention of entity e.
        let mut slots: Vec<Option<usize>> = vec![None; filler];
        for &(e, _) in placements.iter().filter(|&&(_, ps)| ps == s) {
            let at = rng.gen_range(0..=slots.len());
            slots.insert(at, Some(e));
        }
        let mut tokens = Vec::new();
        for slot in slots {
            match slot {
                None => tokens.push(format!("w{}", rng.gen_range(0..cfg.vocab_size))),
                Some(e) => {
                    let surface = if !mentions[e].is_empty() && rng.gen_bool(0.5) {
                        vec![PRONOUN.to_string()]
                    } else {
                        names[e].clone()
                    };
                    let start = tokens.len();
                    tokens.extend(surface.iter().cloned());
                    mentions[e].push(Mention {
                        name: surface.join(" "),
                        sentence: s,
                        start,
                        end: tokens.len(),
                    });
                }
            }
        }
        tokens.push(".".to_string());
        sentences.push(tokens);
    }
    let entities = mentions
        .into_iter()
        .enumerate()
        .map(|(index, mentions)| Entity {
            index,
            entity_type: types[index].to_string(),
            mentions,
        })
        .collect();
    Document {
        doc_id,
        sentences,
        entities,
        facts: Vec::new(),
    }
}

/// Applies the generating rule using per-entity sentence sets.
pub fn rule_facts(doc: &Document) -> BTreeSet<RelationFact> {
    let sents: Vec<BTreeSet<usize>> = (0..doc.entities.len()).map(|e| doc.entity_sentences(e)).collect();
    let meets = |a: usize, b: usize| !sents[a].is_disjoint(&sents[b]);
    let n = doc.entities.len();
    let mut out = BTreeSet::new();
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let relation = if meets(a, b) {
                R_COOCCUR
            } else if (0..n).any(|c| c != a && c != b && meets(a, c) && meets(c, b)) {
                R_BRIDGE
            } else {
                continue;
            };
            out.insert(RelationFact {
                head: a,
                tail: b,
                relation: relation.to_string(),
            });
        }
    }
    out
}

/// Recovers the same facts from the structure matrix alone: an
/// `intra+relate` cell between two entities' tokens marks co-occurrence.
/// Used as a learning-free ceiling classifier.
pub fn structure_oracle_facts(doc: &Document) -> Result<BTreeSet<RelationFact>> {
    let m = build_structure_matrix(doc)?;
    let n = doc.entities.len();
    let tokens: Vec<Vec<usize>> = (0..n).map(|e| doc.entity_tokens(e)).collect();
    let mut linked = vec![vec![false; n]; n];
    for a in 0..n {
        for b in 0..n {
            linked[a][b] = a != b
                && tokens[a]
                    .iter()
                    .any(|&i| tokens[b].iter().any(|&j| m.get(i, j) == DependencyType::IntraRelate));
        }
    }
    let mut out = BTreeSet::new();
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let relation = if linked[a][b] {
                R_COOCCUR
            } else if (0..n).any(|c| linked[a][c] && linked[c][b]) {
                R_BRIDGE
            } else {
                continue;
            };
            out.insert(RelationFact {
                head: a,
                tail: b,
                relation: relation.to_string(),
            });
        }
    }
    Ok(out)
}
