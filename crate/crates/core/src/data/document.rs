//! Annotated documents in the DocRED layout.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structure::{MentionRef, TokenAnnotation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub name: String,
    pub sentence: usize,
    /// Sentence-local half-open token span.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub index: usize,
    pub entity_type: String,
    pub mentions: Vec<Mention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationFact {
    pub head: usize,
    pub tail: usize,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Vec<String>>,
    pub entities: Vec<Entity>,
    pub facts: Vec<RelationFact>,
}

impl Document {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// Global index of the first token of every sentence.
    pub fn sentence_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.sentences.len());
        let mut acc = 0;
        for s in &self.sentences {
            offsets.push(acc);
            acc += s.len();
        }
        offsets
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(String::as_str)
    }

    /// Global half-open span of a mention.
    pub fn global_span(&self, mention: &Mention) -> (usize, usize) {
        let offset: usize = self.sentences[..mention.sentence].iter().map(Vec::len).sum();
        (offset + mention.start, offset + mention.end)
    }

    /// Global token indices covered by all mentions of an entity, in mention order.
    pub fn entity_tokens(&self, entity: usize) -> Vec<usize> {
        self.entities[entity]
            .mentions
            .iter()
            .flat_map(|m| {
                let (s, e) = self.global_span(m);
                s..e
            })
            .collect()
    }

    /// Global start of the entity's first mention.
    pub fn first_mention_start(&self, entity: usize) -> usize {
        self.global_span(&self.entities[entity].mentions[0]).0
    }

    /// Checks spans, entity ordinals, mention overlap and fact endpoints.
    pub fn validate(&self) -> Result<()> {
        self.token_annotations().map(|_| ())?;
        for (i, e) in self.entities.iter().enumerate() {
            if e.index != i {
                return Err(Error::doc(
                    &self.doc_id,
                    format!("entity at position {i} carries ordinal {}", e.index),
                ));
            }
            if e.mentions.is_empty() {
                return Err(Error::doc(&self.doc_id, format!("entity {i} has no mentions")));
            }
        }
        for f in &self.facts {
            if f.head == f.tail {
                return Err(Error::doc(
                    &self.doc_id,
                    format!("fact {}({}, {}) relates an entity to itself", f.relation, f.head, f.tail),
                ));
            }
            let n = self.entities.len();
            if f.head >= n || f.tail >= n {
                return Err(Error::doc(
                    &self.doc_id,
                    format!("fact {}({}, {}) references a missing entity", f.relation, f.head, f.tail),
                ));
            }
        }
        Ok(())
    }

    /// Per-token sentence and mention membership. Rejects invalid or
    /// overlapping mention spans, naming the offending mention.
    pub fn token_annotations(&self) -> Result<Vec<TokenAnnotation>> {
        let mut out = Vec::with_capacity(self.token_count());
        for (s, sent) in self.sentences.iter().enumerate() {
            out.extend((0..sent.len()).map(|_| TokenAnnotation::outside(s)));
        }
        for (e, entity) in self.entities.iter().enumerate() {
            for (m, mention) in entity.mentions.iter().enumerate() {
                let label = || format!("mention {m} (`{}`) of entity {e}", mention.name);
                if mention.sentence >= self.sentences.len() {
                    return Err(Error::doc(
                        &self.doc_id,
                        format!("{}: sentence {} out of range", label(), mention.sentence),
                    ));
                }
                let len = self.sentences[mention.sentence].len();
                if mention.end <= mention.start || mention.end > len {
                    return Err(Error::doc(
                        &self.doc_id,
                        format!(
                            "{}: invalid span [{}, {}) in sentence {} of length {len}",
                            label(),
                            mention.start,
                            mention.end,
                            mention.sentence
                        ),
                    ));
                }
                let (gs, ge) = self.global_span(mention);
                for tok in &mut out[gs..ge] {
                    if let Some(prev) = tok.mention {
                        return Err(Error::doc(
                            &self.doc_id,
                            format!(
                                "{} overlaps mention {} (`{}`) of entity {}",
                                label(),
                                prev.mention,
                                self.entities[prev.entity].mentions[prev.mention].name,
                                prev.entity
                            ),
                        ));
                    }
                    tok.mention = Some(MentionRef { entity: e, mention: m });
                }
            }
        }
        Ok(out)
    }

    /// Sentences containing at least one mention of the entity.
    pub fn entity_sentences(&self, entity: usize) -> BTreeSet<usize> {
        self.entities[entity].mentions.iter().map(|m| m.sentence).collect()
    }

    /// Truncates to the first `max_len` tokens. Mentions crossing the cut
    /// are dropped; entities left without mentions are removed (later
    /// ordinals shift down) along with their facts. Returns the truncated
    /// document and one message per dropped mention or fact.
    pub fn truncated(&self, max_len: usize) -> (Document, Vec<String>) {
        let mut warnings = Vec::new();
        if self.token_count() <= max_len {
            return (self.clone(), warnings);
        }
        let mut sentences = Vec::new();
        let mut remaining = max_len;
        for s in &self.sentences {
            if remaining == 0 {
                break;
            }
            let take = s.len().min(remaining);
            sentences.push(s[..take].to_vec());
            remaining -= take;
        }
        let mut remap = vec![None; self.entities.len()];
        let mut entities = Vec::new();
        for (e, entity) in self.entities.iter().enumerate() {
            let kept: Vec<Mention> = entity
                .mentions
                .iter()
                .filter(|m| {
                    let keep = self.global_span(m).1 <= max_len;
                    if !keep {
                        warnings.push(format!(
                            "{}: dropped mention `{}` of entity {e} beyond token {max_len}",
                            self.doc_id, m.name
                        ));
                    }
                    keep
                })
                .cloned()
                .collect();
            if !kept.is_empty() {
                remap[e] = Some(entities.len());
                entities.push(Entity {
                    index: entities.len(),
                    entity_type: entity.entity_type.clone(),
                    mentions: kept,
                });
            }
        }
        let facts = self
            .facts
            .iter()
            .filter_map(|f| match (remap[f.head], remap[f.tail]) {
                (Some(h), Some(t)) => Some(RelationFact {
                    head: h,
                    tail: t,
                    relation: f.relation.clone(),
                }),
                _ => {
                    warnings.push(format!(
                        "{}: dropped fact {}({}, {}) after truncation",
                        self.doc_id, f.relation, f.head, f.tail
                    ));
                    None
                }
            })
            .collect();
        (
            Document {
                doc_id: self.doc_id.clone(),
                sentences,
                entities,
                facts,
            },
            warnings,
        )
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn ten_token_doc() -> Document {
        Document {
            doc_id: "t".into(),
            sentences: vec![words("a b c d e"), words("f g h i j")],
            entities: vec![
                Entity {
                    index: 0,
                    entity_type: "PER".into(),
                    mentions: vec![mention("a", 0, 0, 1)],
                },
                Entity {
                    index: 1,
                    entity_type: "ORG".into(),
                    mentions: vec![mention("i j", 1, 3, 5)],
                },
                Entity {
                    index: 2,
                    entity_type: "LOC".into(),
                    mentions: vec![mention("c", 0, 2, 3), mention("j", 1, 0, 1)],
                },
            ],
            facts: vec![
                RelationFact {
                    head: 0,
                    tail: 1,
                    relation: "r0".into(),
                },
                RelationFact {
                    head: 2,
                    tail: 0,
                    relation: "r1".into(),
                },
            ],
        }
    }

    #[test]
    fn truncation_drops_mention_and_its_facts() {
        let doc = ten_token_doc();
        let (t, warnings) = doc.truncated(8);
        assert_eq!(t.token_count(), 8);
        assert_eq!(t.entities.len(), 2);
        assert_eq!(t.entities[1].entity_type, "LOC");
        assert_eq!(t.entities[1].index, 1);
        assert_eq!(
            t.facts,
            vec![RelationFact {
                head: 1,
                tail: 0,
                relation: "r1".into()
            }]
        );
        assert_eq!(warnings.len(), 2);
        t.validate().unwrap();
    }

    #[test]
    fn global_spans_follow_sentence_offsets() {
        let doc = ten_token_doc();
        assert_eq!(doc.sentence_offsets(), vec![0, 5]);
        assert_eq!(doc.global_span(&doc.entities[1].mentions[0]), (8, 10));
        assert_eq!(doc.entity_tokens(2), vec![2, 5]);
    }

    #[test]
    fn overlap_names_both_mentions() {
        let mut doc = ten_token_doc();
        doc.entities[0].mentions.push(mention("b c", 0, 1, 3));
        let msg = doc.validate().unwrap_err().to_string();
        assert!(msg.contains("mention 1 (`b c`) of entity 0"), "{msg}");
        assert!(msg.contains("mention 0 (`c`) of entity 2"), "{msg}");
        assert!(msg.contains("overlaps"), "{msg}");
    }

    #[test]
    fn reversed_span_rejected() {
        let mut doc = ten_token_doc();
        doc.entities[0].mentions[0] = mention("x", 0, 3, 2);
        let msg = doc.validate().unwrap_err().to_string();
        assert!(msg.contains("invalid span [3, 2)"), "{msg}");
    }
}
