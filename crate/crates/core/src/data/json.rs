//! DocRED-layout JSON: `title`, `sents`, `vertexSet` (mentions with `name`,
//! `sent_id`, `pos`, `type`) and `labels` (`h`, `t`, `r`). Extra fields such
//! as `evidence` are ignored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Document, Entity, Mention, RelationFact};
use crate::error::{Error, Result};
use crate::rehead::RelationSchema;

#[derive(Debug, Serialize, Deserialize)]
struct RawDoc {
    title: String,
    sents: Vec<Vec<String>>,
    #[serde(rename = "vertexSet")]
    vertex_set: Vec<Vec<RawMention>>,
    #[serde(default)]
    labels: Vec<RawLabel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawMention {
    name: String,
    sent_id: usize,
    pos: [usize; 2],
    #[serde(rename = "type")]
    entity_type: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawLabel {
    h: usize,
    t: usize,
    r: String,
}

fn from_raw(raw: RawDoc, schema: Option<&RelationSchema>) -> Result<Document> {
    let entities = raw
        .vertex_set
        .into_iter()
        .enumerate()
        .map(|(index, ms)| Entity {
            index,
            entity_type: ms.first().map(|m| m.entity_type.clone()).unwrap_or_default(),
            mentions: ms
                .into_iter()
                .map(|m| Mention {
                    name: m.name,
                    sentence: m.sent_id,
                    start: m.pos[0],
                    end: m.pos[1],
                })
                .collect(),
        })
        .collect();
    let doc = Document {
        doc_id: raw.title,
        sentences: raw.sents,
        entities,
        facts: raw
            .labels
            .into_iter()
            .map(|l| RelationFact {
                head: l.h,
                tail: l.t,
                relation: l.r,
            })
            .collect(),
    };
    doc.validate()?;
    if let Some(schema) = schema {
        for f in &doc.facts {
            if schema.index(&f.relation).is_none() {
                return Err(Error::doc(
                    &doc.doc_id,
                    format!("label ({}, {}) has unknown relation `{}`", f.head, f.tail, f.relation),
                ));
            }
        }
    }
    Ok(doc)
}

fn to_raw(doc: &Document) -> RawDoc {
    RawDoc {
        title: doc.doc_id.clone(),
        sents: doc.sentences.clone(),
        vertex_set: doc
            .entities
            .iter()
            .map(|e| {
                e.mentions
                    .iter()
                    .map(|m| RawMention {
                        name: m.name.clone(),
                        sent_id: m.sentence,
                        pos: [m.start, m.end],
                        entity_type: e.entity_type.clone(),
                    })
                    .collect()
            })
            .collect(),
        labels: doc
            .facts
            .iter()
            .map(|f| RawLabel {
                h: f.head,
                t: f.tail,
                r: f.relation.clone(),
            })
            .collect(),
    }
}

/// Parses either a JSON array of documents or one document per line.
pub fn parse_corpus_str(text: &str, schema: Option<&RelationSchema>) -> Result<Vec<Document>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let raws: Vec<RawDoc> = serde_json::from_str(trimmed)?;
        raws.into_iter().map(|r| from_raw(r, schema)).collect()
    } else {
        let mut docs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawDoc = serde_json::from_str(line).map_err(|e| {
                Error::doc(&format!("<line {}>", lineno + 1), format!("malformed JSON: {e}"))
            })?;
            docs.push(from_raw(raw, schema)?);
        }
        Ok(docs)
    }
}

pub fn parse_corpus(path: &Path, schema: Option<&RelationSchema>) -> Result<Vec<Document>> {
    let text = std::fs::read_to_string(path)?;
    parse_corpus_str(&text, schema)
}

/// Serializes as a pretty-printed JSON array in the same layout.
pub fn to_json(docs: &[Document]) -> Result<String> {
    let raws: Vec<RawDoc> = docs.iter().map(to_raw).collect();
    Ok(serde_json::to_string_pretty(&raws)?)
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    std::fs::write(path, to_json(docs)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"[{
        "title": "Doc A",
        "sents": [["Alice", "met", "Alice", "Smith", "."]],
        "vertexSet": [[
            {"name": "Alice", "sent_id": 0, "pos": [0, 1], "type": "PER"},
            {"name": "Alice Smith", "sent_id": 0, "pos": [2, 4], "type": "PER", "global_pos": [2, 2]}
        ]],
        "labels": []
    }]"#;

    #[test]
    fn minimal_document() {
        let docs = parse_corpus_str(MINIMAL, None).unwrap();
        assert_eq!(docs.len(), 1);
        let d = &docs[0];
        assert_eq!(d.doc_id, "Doc A");
        assert_eq!(d.entities.len(), 1);
        assert_eq!(d.entities[0].mentions.len(), 2);
        assert_eq!(d.global_span(&d.entities[0].mentions[1]), (2, 4));
        assert!(d.facts.is_empty());
    }

    #[test]
    fn line_delimited_and_round_trip() {
        let docs = parse_corpus_str(MINIMAL, None).unwrap();
        let json = to_json(&docs).unwrap();
        assert_eq!(parse_corpus_str(&json, None).unwrap(), docs);
        let line = serde_json::to_string(&to_raw(&docs[0])).unwrap();
        let jsonl = format!("{line}\n\n{line}\n");
        assert_eq!(parse_corpus_str(&jsonl, None).unwrap().len(), 2);
    }

    #[test]
    fn reversed_span_names_mention() {
        let bad = MINIMAL.replace("[2, 4]", "[3, 2]");
        let msg = parse_corpus_str(&bad, None).unwrap_err().to_string();
        assert!(msg.contains("Doc A") && msg.contains("mention 1 (`Alice Smith`)"), "{msg}");
    }

    #[test]
    fn unknown_relation_rejected() {
        let with_label = MINIMAL.replace(
            r#""labels": []"#,
            r#""vertexSet2": [], "labels": [{"h": 0, "t": 0, "r": "P17", "evidence": [0]}]"#,
        );
        // self-relation is caught first
        assert!(parse_corpus_str(&with_label, None).is_err());
        let two_entities = r#"[{"title": "B", "sents": [["x", "y"]],
            "vertexSet": [[{"name": "x", "sent_id": 0, "pos": [0, 1], "type": "T"}],
                          [{"name": "y", "sent_id": 0, "pos": [1, 2], "type": "T"}]],
            "labels": [{"h": 0, "t": 1, "r": "P99"}]}]"#;
        let schema = RelationSchema::new(vec!["P17".into()]).unwrap();
        let msg = parse_corpus_str(two_entities, Some(&schema)).unwrap_err().to_string();
        assert!(msg.contains("unknown relation `P99`") && msg.contains("`B`"), "{msg}");
        assert!(parse_corpus_str(two_entities, None).is_ok());
    }

    #[test]
    fn malformed_json_reports_line() {
        let msg = parse_corpus_str("{\"title\": 1}\n", None).unwrap_err().to_string();
        assert!(msg.contains("<line 1>"), "{msg}");
    }
}
