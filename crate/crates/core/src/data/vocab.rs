use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Document;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
/// Entity-type index used for non-entity tokens.
pub const NO_TYPE: usize = 0;

/// Word and entity-type indices. Words are numbered in order of first
/// occurrence after the two reserved slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    types: Vec<String>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    #[serde(skip)]
    type_index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_lists(words: Vec<String>, types: Vec<String>) -> Self {
        let word_index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let type_index = types.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            words,
            types,
            word_index,
            type_index,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    pub fn type_count(&self) -> usize {
        self.types.len()
    }

    pub fn word(&self, w: &str) -> usize {
        self.word_index.get(w).copied().unwrap_or(UNK)
    }

    pub fn entity_type(&self, t: &str) -> usize {
        self.type_index.get(t).copied().unwrap_or(NO_TYPE)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocab serializes")
    }

    pub fn from_json(s: &str) -> crate::Result<Self> {
        let v: Vocab = serde_json::from_str(s)?;
        Ok(Self::from_lists(v.words, v.types))
    }
}

pub fn build_vocab(docs: &[Document], min_count: usize) -> Vocab {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    let mut types: Vec<String> = vec!["<none>".into()];
    for d in docs {
        for w in d.tokens() {
            let c = counts.entry(w).or_insert(0);
            if *c == 0 {
                order.push(w);
            }
            *c += 1;
        }
        for e in &d.entities {
            if !types.contains(&e.entity_type) {
                types.push(e.entity_type.clone());
            }
        }
    }
    let mut words: Vec<String> = vec!["<pad>".into(), "<unk>".into()];
    words.extend(
        order
            .into_iter()
            .filter(|w| counts[w] >= min_count.max(1))
            .map(String::from),
    );
    Vocab::from_lists(words, types)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::document::fixtures::words;

    fn doc(text: &str) -> Document {
        Document {
            doc_id: "v".into(),
            sentences: vec![words(text)],
            entities: vec![],
            facts: vec![],
        }
    }

    #[test]
    fn min_count_one_keeps_everything() {
        let v = build_vocab(&[doc("a a b")], 1);
        assert_eq!(v.len(), 4);
        assert_eq!(v.word("a"), 2);
        assert_eq!(v.word("b"), 3);
        assert_eq!(v.word("zzz"), UNK);
    }

    #[test]
    fn min_count_two_drops_rare() {
        let v = build_vocab(&[doc("a a b")], 2);
        assert_eq!(v.len(), 3);
        assert_eq!(v.word("b"), UNK);
    }

    #[test]
    fn deterministic_and_serializable() {
        let docs = [doc("c b a c"), doc("d a")];
        let v1 = build_vocab(&docs, 1);
        let v2 = build_vocab(&docs, 1);
        assert_eq!(v1, v2);
        assert_eq!(&v1.words()[2..], &["c", "b", "a", "d"]);
        let back = Vocab::from_json(&v1.to_json()).unwrap();
        assert_eq!(back.word("d"), v1.word("d"));
    }
}
