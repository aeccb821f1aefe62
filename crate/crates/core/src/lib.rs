//! Stereotype-bias evaluation of pre-trained language models on Context
//! Association Test datasets.

pub mod corpus;
pub mod inter;
pub mod intra;
pub mod pipeline;
pub mod prediction;
pub mod provider;
pub mod scoring;
pub mod translate;

/// A score or probability outside its mathematical domain.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("domain error: {0}")]
pub struct DomainError(pub String);

impl DomainError {
    pub fn new(message: impl Into<String>) -> Self {
        DomainError(message.into())
    }
}
