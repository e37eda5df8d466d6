//! Transaction ingestion, vocabularies, example construction and batching.

pub mod context;
pub mod examples;
pub mod synth;
pub mod transactions;
pub mod vocab;

pub use context::{ContextSchema, RawContext, CONTEXT_FIELDS};
pub use examples::{
    batch, build_vocabs, make_examples, read_examples, write_examples, ContextVector, ExampleOptions, ExampleSet,
    OrderExample, SeqBatch, Vocabs,
};
pub use synth::{generate_synthetic, PlantedRule, SyntheticSpec};
pub use transactions::{parse_transactions, split_by_time, write_transactions, ParseOutcome, TransactionRecord};
pub use vocab::{Vocabulary, PAD_ID, UNK_ID};
