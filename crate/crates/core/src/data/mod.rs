//! Corpus ingestion: CoNLL parsing, vocabularies and padded batches.

mod batch;
mod conll;
mod vocab;

pub use batch::{make_batches, Batch};
pub use conll::{parse_conll, parse_tokens, read_conll, serialize_conll, write_conll, Sentence};
pub use vocab::{build_label_vocab, LabelVocab, TokenVocab, PAD_ID, UNK_ID};

/// Label string that marks a position excluded from loss and scoring.
pub const IGNORE_LABEL: &str = "-100";
