//! Context Association Test datasets.

mod dataset;
mod fill;
mod nsp;
mod validate;

use thiserror::Error;

pub use dataset::{parse_dataset, read_dataset, serialize_dataset, BiasType, Candidate, CandidateLabel, Dataset, Example, TestKind};
pub use fill::{extract_fill_word, fill_blank, split_blank, BLANK};
pub use nsp::{build_nsp_corpus, read_sentences, write_nsp_tsv, NspLabel, NspPair, SentenceRecord};
pub use validate::{validate_dataset, KindCounts, ValidationCounts, ValidationReport, Violation, ViolationKind};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed dataset at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("schema error{}: {message}", example_id.as_ref().map(|id| format!(" in example `{id}`")).unwrap_or_default())]
    Schema { example_id: Option<String>, message: String },
    #[error("cannot align filled sentence {filled:?} with context {context:?}")]
    FillWord { context: String, filled: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
