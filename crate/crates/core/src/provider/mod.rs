//! Model-backend abstraction.
//!
//! A provider answers tokenization and probability queries for one model.
//! Pipelines only ever talk to the [`Provider`] trait; concrete backends are
//! the in-process [`MockProvider`] and the [`Client`], which speaks the
//! newline-delimited JSON protocol in [`protocol`] to an external process.

pub mod client;
pub mod mock;
pub mod protocol;
pub mod server;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::Client;
pub use mock::MockProvider;
pub use protocol::{Request, Response};

/// Probabilities below this value are clamped before any log-space math.
pub const PROB_FLOOR: f64 = 1e-12;

pub const PROTOCOL_VERSION: u32 = 1;

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Encoder,
    Decoder,
    EncoderDecoder,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Encoder => "encoder",
            ModelKind::Decoder => "decoder",
            ModelKind::EncoderDecoder => "encoder_decoder",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "encoder" => Ok(ModelKind::Encoder),
            "decoder" => Ok(ModelKind::Decoder),
            "encoder_decoder" | "encoder-decoder" => Ok(ModelKind::EncoderDecoder),
            other => Err(format!("unknown model kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Mlm,
    Nsp,
    CausalLm,
    Seq2seqLm,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::Mlm => "mlm",
            Capability::Nsp => "nsp",
            Capability::CausalLm => "causal_lm",
            Capability::Seq2seqLm => "seq2seq_lm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialToken {
    Mask,
    Bos,
    Pad,
    #[serde(rename = "sentinel_0")]
    Sentinel0,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPiece {
    pub id: TokenId,
    pub surface: String,
}

/// Static description of a backend, returned by the handshake.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub model_kind: ModelKind,
    pub capabilities: BTreeSet<Capability>,
    pub special_tokens: BTreeMap<SpecialToken, TokenPiece>,
    pub vocab_size: u32,
}

impl ProviderInfo {
    pub fn has(&self, cap: Capability) -> bool {
        self.capabilities.contains(&cap)
    }

    pub fn special(&self, token: SpecialToken) -> Option<&TokenPiece> {
        self.special_tokens.get(&token)
    }

    pub fn require(&self, cap: Capability) -> Result<(), ProviderError> {
        if self.has(cap) {
            Ok(())
        } else {
            Err(ProviderError::Capability(cap))
        }
    }

    pub fn require_special(&self, token: SpecialToken) -> Result<&TokenPiece, ProviderError> {
        self.special(token)
            .ok_or_else(|| ProviderError::Request(format!("backend declares no {token:?} token")))
    }

    /// Checks the descriptor invariants. A backend that fails this check is
    /// rejected at handshake time.
    pub fn check(&self) -> Result<(), String> {
        let required = match self.model_kind {
            ModelKind::Encoder => Capability::Mlm,
            ModelKind::Decoder => Capability::CausalLm,
            ModelKind::EncoderDecoder => Capability::Seq2seqLm,
        };
        if !self.has(required) {
            return Err(format!("{} backend must declare {required}", self.model_kind));
        }
        if self.has(Capability::Mlm) != self.special(SpecialToken::Mask).is_some() {
            return Err("mask token must be present iff mlm is declared".into());
        }
        if self.has(Capability::Seq2seqLm) != self.special(SpecialToken::Sentinel0).is_some() {
            return Err("sentinel_0 token must be present iff seq2seq_lm is declared".into());
        }
        if self.has(Capability::Seq2seqLm) && self.special(SpecialToken::Pad).is_none() {
            return Err("seq2seq_lm backends must declare a pad token".into());
        }
        if self.model_kind == ModelKind::Decoder && self.special(SpecialToken::Bos).is_none() {
            return Err("decoder backend must declare a bos token".into());
        }
        if self.vocab_size == 0 {
            return Err("vocab_size must be positive".into());
        }
        Ok(())
    }
}

/// Ordered token pieces as produced by a backend tokenizer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenPieceSeq {
    pub pieces: Vec<TokenPiece>,
}

impl TokenPieceSeq {
    pub fn new(pieces: Vec<TokenPiece>) -> Self {
        Self { pieces }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.pieces.iter().map(|p| p.id)
    }

    pub fn push(&mut self, piece: TokenPiece) {
        self.pieces.push(piece);
    }

    pub fn extend_from(&mut self, other: &TokenPieceSeq) {
        self.pieces.extend(other.pieces.iter().cloned());
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> TokenPieceSeq {
        TokenPieceSeq::new(self.pieces[range].to_vec())
    }
}

impl FromIterator<TokenPiece> for TokenPieceSeq {
    fn from_iter<I: IntoIterator<Item = TokenPiece>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Per-position post-softmax probabilities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbSeq {
    pub probs: Vec<f64>,
}

impl ProbSeq {
    pub fn new(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Copy with every entry raised to at least [`PROB_FLOOR`].
    pub fn clamped(&self) -> ProbSeq {
        ProbSeq::new(self.probs.iter().map(|&p| clamp_prob(p)).collect())
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    if p.is_nan() {
        PROB_FLOOR
    } else {
        p.max(PROB_FLOOR)
    }
}

/// Error codes carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Capability,
    Request,
    Protocol,
    Handshake,
    Internal,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("backend lacks the `{0}` capability")]
    Capability(Capability),
    #[error("invalid request: {0}")]
    Request(String),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend error ({code:?}): {message}")]
    Remote { code: ErrorCode, message: String },
    #[error("transport error: {0}")]
    Io(#[from] std::io::Error),
}

impl ProviderError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ProviderError::Capability(_) => ErrorCode::Capability,
            ProviderError::Request(_) => ErrorCode::Request,
            ProviderError::Handshake(_) => ErrorCode::Handshake,
            ProviderError::Protocol(_) => ErrorCode::Protocol,
            ProviderError::Remote { code, .. } => *code,
            ProviderError::Io(_) => ErrorCode::Internal,
        }
    }
}

/// A model backend.
///
/// `execute` is the single primitive: it answers a batch of sub-requests and
/// returns one result per sub-request, in sub-request order. The typed
/// helpers wrap it for one-off queries.
pub trait Provider {
    fn info(&self) -> &ProviderInfo;

    fn execute(&mut self, requests: &[Request]) -> Result<Vec<Result<Response, ProviderError>>, ProviderError>;

    fn call(&mut self, request: Request) -> Result<Response, ProviderError> {
        let mut out = self.execute(std::slice::from_ref(&request))?;
        match out.pop() {
            Some(r) if out.is_empty() => r,
            _ => Err(ProviderError::Protocol("batch returned wrong number of responses".into())),
        }
    }

    fn tokenize(&mut self, text: &str) -> Result<TokenPieceSeq, ProviderError> {
        self.call(Request::Tokenize { text: text.to_string() })?.into_tokens()
    }

    fn mlm_token_prob(
        &mut self,
        sequence: &TokenPieceSeq,
        targets: &[(usize, TokenId)],
    ) -> Result<ProbSeq, ProviderError> {
        self.call(Request::Mlm { sequence: sequence.clone(), targets: targets.to_vec() })?
            .into_probs()
    }

    fn causal_token_probs(&mut self, sequence: &TokenPieceSeq, prepend_bos: bool) -> Result<ProbSeq, ProviderError> {
        self.call(Request::Causal { sequence: sequence.clone(), prepend_bos })?.into_probs()
    }

    fn seq2seq_token_probs(
        &mut self,
        encoder_input: &TokenPieceSeq,
        decoder_input: &TokenPieceSeq,
        targets: &TokenPieceSeq,
    ) -> Result<ProbSeq, ProviderError> {
        self.call(Request::Seq2seq {
            encoder_input: encoder_input.clone(),
            decoder_input: decoder_input.clone(),
            targets: targets.clone(),
        })?
        .into_probs()
    }

    fn nsp_prob(&mut self, sentence_a: &str, sentence_b: &str) -> Result<f64, ProviderError> {
        self.call(Request::Nsp { sentence_a: sentence_a.to_string(), sentence_b: sentence_b.to_string() })?
            .into_prob()
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn info(&self) -> &ProviderInfo {
        (**self).info()
    }

    fn execute(&mut self, requests: &[Request]) -> Result<Vec<Result<Response, ProviderError>>, ProviderError> {
        (**self).execute(requests)
    }
}

/// Capability and shape checks shared by every backend implementation.
pub fn check_request(info: &ProviderInfo, request: &Request) -> Result<(), ProviderError> {
    match request {
        Request::Tokenize { .. } => Ok(()),
        Request::Mlm { sequence, targets } => {
            info.require(Capability::Mlm)?;
            let mask = info.require_special(SpecialToken::Mask)?.id;
            for &(pos, _) in targets {
                match sequence.pieces.get(pos) {
                    Some(p) if p.id == mask => {}
                    Some(_) => return Err(ProviderError::Request(format!("target position {pos} is not masked"))),
                    None => return Err(ProviderError::Request(format!("target position {pos} out of range"))),
                }
            }
            Ok(())
        }
        Request::Causal { prepend_bos, .. } => {
            info.require(Capability::CausalLm)?;
            if *prepend_bos {
                info.require_special(SpecialToken::Bos)?;
            }
            Ok(())
        }
        Request::Seq2seq { decoder_input, targets, .. } => {
            info.require(Capability::Seq2seqLm)?;
            if decoder_input.len() != targets.len() {
                return Err(ProviderError::Request(format!(
                    "decoder input has {} tokens but targets have {}",
                    decoder_input.len(),
                    targets.len()
                )));
            }
            Ok(())
        }
        Request::Nsp { .. } => info.require(Capability::Nsp),
    }
}
