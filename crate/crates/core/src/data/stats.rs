use std::collections::BTreeSet;
use std::fmt::Write;

use super::Document;

/// Corpus summary. Mentions per sentence only counts sentences that
/// contain at least one mention.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub docs: usize,
    pub entities_per_doc: f64,
    pub mentions_per_doc: f64,
    pub mentions_per_sentence: f64,
    /// Distinct relation types among the facts.
    pub relation_types: usize,
    pub facts: usize,
}

pub fn corpus_stats(docs: &[Document]) -> CorpusStats {
    let n = docs.len();
    let entities: usize = docs.iter().map(|d| d.entities.len()).sum();
    let mentions: usize = docs
        .iter()
        .flat_map(|d| &d.entities)
        .map(|e| e.mentions.len())
        .sum();
    let bearing: usize = docs
        .iter()
        .map(|d| {
            d.entities
                .iter()
                .flat_map(|e| e.mentions.iter().map(|m| m.sentence))
                .collect::<BTreeSet<_>>()
                .len()
        })
        .sum();
    let relations: BTreeSet<&str> = docs
        .iter()
        .flat_map(|d| d.facts.iter().map(|f| f.relation.as_str()))
        .collect();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    CorpusStats {
        docs: n,
        entities_per_doc: ratio(entities, n),
        mentions_per_doc: ratio(mentions, n),
        mentions_per_sentence: ratio(mentions, bearing),
        relation_types: relations.len(),
        facts: docs.iter().map(|d| d.facts.len()).sum(),
    }
}

impl CorpusStats {
    /// Tab-separated report with a header row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("docs\tentities_per_doc\tmentions_per_doc\tmentions_per_sentence\trelation_types\tfacts\n");
        writeln!(
            s,
            "{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}",
            self.docs,
            self.entities_per_doc,
            self.mentions_per_doc,
            self.mentions_per_sentence,
            self.relation_types,
            self.facts
        )
        .unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::document::fixtures::*;
    use crate::data::Entity;

    #[test]
    fn table_columns() {
        let doc = Document {
            doc_id: "s".into(),
            sentences: vec![words("a b c d"), words("e f"), words("g h i")],
            entities: vec![
                Entity {
                    index: 0,
                    entity_type: "X".into(),
                    mentions: vec![mention("a", 0, 0, 1), mention("c", 0, 2, 3)],
                },
                Entity {
                    index: 1,
                    entity_type: "X".into(),
                    mentions: vec![mention("g", 2, 0, 1), mention("i", 2, 2, 3)],
                },
            ],
            facts: vec![],
        };
        let s = corpus_stats(&[doc]);
        assert_eq!(s.entities_per_doc, 2.0);
        assert_eq!(s.mentions_per_doc, 4.0);
        assert_eq!(s.mentions_per_sentence, 2.0);
        assert_eq!(s.relation_types, 0);
        assert!(s.to_tsv().starts_with("docs\t"));
    }
}
