//! Corpus model, DocRED-layout I/O, vocabulary, batching, synthetic corpora
//! and corpus statistics.

mod batch;
pub(crate) mod document;
pub mod json;
pub mod stats;
pub mod synth;
mod vocab;

pub use batch::{make_batches, prepare, Batch, PreparedDoc};
pub use document::{Document, Entity, Mention, RelationFact};
pub use json::{parse_corpus, parse_corpus_str, write_corpus};
pub use stats::{corpus_stats, CorpusStats};
pub use synth::{generate_synthetic, SynthConfig, SynthCorpus};
pub use vocab::{build_vocab, Vocab, NO_TYPE, PAD, UNK};
