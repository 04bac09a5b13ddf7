//! Dialogue ingestion, query / response / future-turn triples, vocabulary and padded batches.

mod batch;
pub mod synthetic;
mod triples;
mod vocab;

pub use batch::{encode_batch, EncodedTriple, PaddedBatch};
pub use triples::{
    build_triples, read_dialogues, read_triples, write_triples, Dialogue, Triple, TripleOptions, TripleReport, EOU,
};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};
