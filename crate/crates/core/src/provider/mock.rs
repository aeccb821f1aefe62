//! Deterministic in-process backend.
//!
//! Tokenization splits on whitespace. Every probability is a stable hash of
//! the seed and the request content mapped into the unit interval, so the
//! same `(seed, request)` pair always yields the same answer and the causal
//! probabilities of a prefix never depend on what follows it.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{
    check_request, Capability, ModelKind, ProbSeq, Provider, ProviderError, ProviderInfo, Request, Response,
    SpecialToken, TokenId, TokenPiece, TokenPieceSeq,
};

pub const MOCK_VOCAB_SIZE: u32 = 30_000;

const PAD: (TokenId, &str) = (0, "<pad>");
const BOS: (TokenId, &str) = (1, "<s>");
const MASK: (TokenId, &str) = (2, "[MASK]");
const SENTINEL: (TokenId, &str) = (3, "<extra_id_0>");
const FIRST_WORD_ID: TokenId = 4;

#[derive(Debug, Clone)]
pub struct MockProvider {
    seed: u64,
    info: ProviderInfo,
}

impl MockProvider {
    /// Full-capability mock presenting itself as an encoder.
    pub fn new(seed: u64) -> Self {
        Self::with_kind(seed, ModelKind::Encoder)
    }

    /// Full-capability mock presenting the given architecture.
    pub fn with_kind(seed: u64, model_kind: ModelKind) -> Self {
        let capabilities = [Capability::Mlm, Capability::Nsp, Capability::CausalLm, Capability::Seq2seqLm];
        Self::build(seed, model_kind, &capabilities)
    }

    /// Encoder-only mock with `{mlm, nsp}`, like a BERT checkpoint.
    pub fn encoder(seed: u64) -> Self {
        Self::build(seed, ModelKind::Encoder, &[Capability::Mlm, Capability::Nsp])
    }

    /// Decoder-only mock with `{causal_lm}`, like a GPT-2 checkpoint.
    pub fn decoder(seed: u64) -> Self {
        Self::build(seed, ModelKind::Decoder, &[Capability::CausalLm])
    }

    /// Encoder-decoder mock with `{seq2seq_lm}` and optionally a fine-tuned NSP head.
    pub fn encoder_decoder(seed: u64, nsp_head: bool) -> Self {
        let mut caps = vec![Capability::Seq2seqLm];
        if nsp_head {
            caps.push(Capability::Nsp);
        }
        Self::build(seed, ModelKind::EncoderDecoder, &caps)
    }

    /// Names accepted by [`MockProvider::from_name`].
    pub const NAMES: [&'static str; 5] = ["full", "encoder", "decoder", "encoder_decoder", "encoder_decoder_nsp"];

    pub fn from_name(name: &str, seed: u64) -> Option<Self> {
        Some(match name {
            "full" => Self::new(seed),
            "encoder" => Self::encoder(seed),
            "decoder" => Self::decoder(seed),
            "encoder_decoder" => Self::encoder_decoder(seed, false),
            "encoder_decoder_nsp" => Self::encoder_decoder(seed, true),
            _ => return None,
        })
    }

    fn build(seed: u64, model_kind: ModelKind, capabilities: &[Capability]) -> Self {
        let capabilities: std::collections::BTreeSet<_> = capabilities.iter().copied().collect();
        let mut special_tokens = BTreeMap::new();
        let mut add = |tok: SpecialToken, (id, surface): (TokenId, &str)| {
            special_tokens.insert(tok, TokenPiece { id, surface: surface.to_string() });
        };
        if capabilities.contains(&Capability::Mlm) {
            add(SpecialToken::Mask, MASK);
        }
        if capabilities.contains(&Capability::CausalLm) {
            add(SpecialToken::Bos, BOS);
        }
        if capabilities.contains(&Capability::Seq2seqLm) {
            add(SpecialToken::Sentinel0, SENTINEL);
            add(SpecialToken::Pad, PAD);
        }
        let info = ProviderInfo { model_kind, capabilities, special_tokens, vocab_size: MOCK_VOCAB_SIZE };
        debug_assert!(info.check().is_ok());
        Self { seed, info }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Whitespace tokenizer; special-token surfaces map to their reserved ids.
    pub fn tokenize_text(&self, text: &str) -> TokenPieceSeq {
        text.split_whitespace()
            .map(|w| TokenPiece { id: word_id(w), surface: w.to_string() })
            .collect()
    }

    pub fn mlm_prob(&self, sequence: &[TokenId], position: usize, target: TokenId) -> f64 {
        let mut h = self.hasher(b"mlm");
        put_ids(&mut h, sequence);
        h.update((position as u64).to_le_bytes());
        h.update(target.to_le_bytes());
        open_unit(h)
    }

    /// Probability of `token` given the (possibly BOS-prefixed) left context.
    pub fn causal_prob(&self, left_context: &[TokenId], token: TokenId) -> f64 {
        let mut h = self.hasher(b"causal");
        put_ids(&mut h, left_context);
        h.update(token.to_le_bytes());
        open_unit(h)
    }

    pub fn seq2seq_prob(&self, encoder_input: &[TokenId], decoder_prefix: &[TokenId], target: TokenId) -> f64 {
        let mut h = self.hasher(b"seq2seq");
        put_ids(&mut h, encoder_input);
        put_ids(&mut h, decoder_prefix);
        h.update(target.to_le_bytes());
        open_unit(h)
    }

    pub fn nsp(&self, sentence_a: &str, sentence_b: &str) -> f64 {
        let mut h = self.hasher(b"nsp");
        put_str(&mut h, sentence_a);
        put_str(&mut h, sentence_b);
        1.0 - open_unit(h).min(1.0)
    }

    fn hasher(&self, tag: &[u8]) -> Sha256 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        put_str(&mut h, std::str::from_utf8(tag).expect("ascii tag"));
        h
    }

    fn answer(&self, request: &Request) -> Result<Response, ProviderError> {
        check_request(&self.info, request)?;
        Ok(match request {
            Request::Tokenize { text } => Response::Tokens(self.tokenize_text(text)),
            Request::Mlm { sequence, targets } => {
                let ids: Vec<_> = sequence.ids().collect();
                Response::Probs(ProbSeq::new(
                    targets.iter().map(|&(pos, target)| self.mlm_prob(&ids, pos, target)).collect(),
                ))
            }
            Request::Causal { sequence, prepend_bos } => {
                let mut context: Vec<TokenId> = Vec::with_capacity(sequence.len() + 1);
                if *prepend_bos {
                    context.push(BOS.0);
                }
                let mut probs = Vec::with_capacity(sequence.len());
                for id in sequence.ids() {
                    probs.push(self.causal_prob(&context, id));
                    context.push(id);
                }
                Response::Probs(ProbSeq::new(probs))
            }
            Request::Seq2seq { encoder_input, decoder_input, targets } => {
                let enc: Vec<_> = encoder_input.ids().collect();
                let dec: Vec<_> = decoder_input.ids().collect();
                Response::Probs(ProbSeq::new(
                    targets.ids().enumerate().map(|(i, t)| self.seq2seq_prob(&enc, &dec[..=i], t)).collect(),
                ))
            }
            Request::Nsp { sentence_a, sentence_b } => Response::Prob(self.nsp(sentence_a, sentence_b)),
        })
    }
}

impl Provider for MockProvider {
    fn info(&self) -> &ProviderInfo {
        &self.info
    }

    fn execute(&mut self, requests: &[Request]) -> Result<Vec<Result<Response, ProviderError>>, ProviderError> {
        Ok(requests.iter().map(|r| self.answer(r)).collect())
    }
}

fn word_id(word: &str) -> TokenId {
    for (id, surface) in [PAD, BOS, MASK, SENTINEL] {
        if word == surface {
            return id;
        }
    }
    let digest = Sha256::digest(word.as_bytes());
    let h = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    FIRST_WORD_ID + (h % u64::from(MOCK_VOCAB_SIZE - FIRST_WORD_ID)) as TokenId
}

fn put_ids(h: &mut Sha256, ids: &[TokenId]) {
    h.update((ids.len() as u64).to_le_bytes());
    for id in ids {
        h.update(id.to_le_bytes());
    }
}

fn put_str(h: &mut Sha256, s: &str) {
    h.update((s.len() as u64).to_le_bytes());
    h.update(s.as_bytes());
}

/// Maps a digest into (0, 1].
fn open_unit(h: Sha256) -> f64 {
    let digest = h.finalize();
    let bits = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) >> 11;
    1.0 - (bits as f64) * (1.0 / (1u64 << 53) as f64)
}
