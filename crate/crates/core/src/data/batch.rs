use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::{Vocab, NO_TYPE, PAD};
use super::{Document, RelationFact};
use crate::error::Result;
use crate::structure::{build_structure_matrix, StructureMatrix};

/// A document after truncation, with its word ids and structure matrix.
#[derive(Debug, Clone)]
pub struct PreparedDoc {
    pub doc: Document,
    pub word_ids: Vec<usize>,
    /// Entity-type index per token (`NO_TYPE` outside mentions).
    pub type_ids: Vec<usize>,
    /// Entity ordinal per token, if inside a mention.
    pub entity_ids: Vec<Option<usize>>,
    pub structure: StructureMatrix,
}

impl PreparedDoc {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }
}

/// Truncates every document to `max_len` (logging what was dropped) and
/// builds its structure matrix.
pub fn prepare(docs: &[Document], vocab: &Vocab, max_len: usize) -> Result<Vec<PreparedDoc>> {
    docs.iter()
        .map(|d| {
            let (doc, warnings) = d.truncated(max_len);
            for w in warnings {
                log::warn!("{w}");
            }
            let structure = build_structure_matrix(&doc)?;
            let word_ids = doc.tokens().map(|w| vocab.word(w)).collect();
            let entity_ids: Vec<Option<usize>> = doc
                .token_annotations()?
                .iter()
                .map(|a| a.entity_index())
                .collect();
            let type_ids = entity_ids
                .iter()
                .map(|e| e.map_or(NO_TYPE, |e| vocab.entity_type(&doc.entities[e].entity_type)))
                .collect();
            Ok(PreparedDoc {
                doc,
                word_ids,
                type_ids,
                entity_ids,
                structure,
            })
        })
        .collect()
}

/// Right-padded group of documents.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub items: Vec<&'a PreparedDoc>,
    /// Padded length shared by every row.
    pub len: usize,
    pub token_ids: Vec<Vec<usize>>,
    /// `true` for real tokens.
    pub mask: Vec<Vec<bool>>,
    pub structures: Vec<StructureMatrix>,
    /// Per document, per entity: global token indices of all its mentions.
    pub entity_tokens: Vec<Vec<Vec<usize>>>,
    pub gold: Vec<BTreeSet<RelationFact>>,
}

impl<'a> Batch<'a> {
    pub fn new(items: Vec<&'a PreparedDoc>) -> Self {
        let len = items.iter().map(|p| p.len()).max().unwrap_or(0);
        let token_ids = items
            .iter()
            .map(|p| {
                let mut ids = p.word_ids.clone();
                ids.resize(len, PAD);
                ids
            })
            .collect();
        let mask = items
            .iter()
            .map(|p| (0..len).map(|i| i < p.len()).collect())
            .collect();
        let structures = items.iter().map(|p| p.structure.padded(len)).collect();
        let entity_tokens = items
            .iter()
            .map(|p| (0..p.doc.entities.len()).map(|e| p.doc.entity_tokens(e)).collect())
            .collect();
        let gold = items.iter().map(|p| p.doc.facts.iter().cloned().collect()).collect();
        Self {
            items,
            len,
            token_ids,
            mask,
            structures,
            entity_tokens,
            gold,
        }
    }

    pub fn size(&self) -> usize {
        self.items.len()
    }
}

/// Seeded shuffle followed by consecutive chunks of `batch_size`.
pub fn make_batches(docs: &[PreparedDoc], batch_size: usize, seed: u64) -> Vec<Batch<'_>> {
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
        .chunks(batch_size.max(1))
        .map(|chunk| Batch::new(chunk.iter().map(|&i| &docs[i]).collect()))
        .collect()
}
