//! Fill-in-the-blank (intra-sentence) candidate scoring.
//!
//! Encoders score a candidate by unmasking its word pieces left to right and
//! averaging the masked-token probabilities. Decoders and encoder-decoders
//! score the token sequence and combine per-token probabilities with
//! [`combine_generative`].

use log::warn;

use crate::corpus::{split_blank, Example};
use crate::prediction::{PredictError, PredictionRecord};
use crate::provider::{
    clamp_prob, Capability, Provider, Request, SpecialToken, TokenId, TokenPiece, TokenPieceSeq,
};
use crate::DomainError;

/// One step of the left-to-right unmasking of a candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedVariant {
    pub sequence: TokenPieceSeq,
    pub mask_position: usize,
    pub target_piece: TokenId,
}

/// What follows the mask inside a variant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MaskStyle {
    /// Pieces right of the mask are dropped.
    #[default]
    Truncate,
    /// Every remaining piece is masked as well.
    TrailingMasks,
}

/// Builds one variant per fill piece: variant `j` realises pieces `1..j`,
/// masks piece `j`, then continues with the context right of the blank.
pub fn mlm_variants(
    prefix: &TokenPieceSeq,
    suffix: &TokenPieceSeq,
    fill_pieces: &TokenPieceSeq,
    mask: &TokenPiece,
    style: MaskStyle,
) -> Result<Vec<MaskedVariant>, DomainError> {
    if fill_pieces.is_empty() {
        return Err(DomainError::new("candidate has no word pieces"));
    }
    let k = fill_pieces.len();
    Ok((0..k)
        .map(|j| {
            let mut seq = prefix.clone();
            seq.pieces.extend_from_slice(&fill_pieces.pieces[..j]);
            let mask_position = seq.len();
            let masks = match style {
                MaskStyle::Truncate => 1,
                MaskStyle::TrailingMasks => k - j,
            };
            seq.pieces.extend(std::iter::repeat_n(mask.clone(), masks));
            seq.extend_from(suffix);
            MaskedVariant { sequence: seq, mask_position, target_piece: fill_pieces.pieces[j].id }
        })
        .collect())
}

/// Tokenizes the context around `BLANK` and builds the variants for one candidate.
pub fn build_mlm_variants<P: Provider + ?Sized>(
    context: &str,
    fill_pieces: &TokenPieceSeq,
    provider: &mut P,
    style: MaskStyle,
) -> Result<Vec<MaskedVariant>, VariantError> {
    let (prefix, suffix) =
        split_blank(context).ok_or_else(|| DomainError::new("context needs exactly one BLANK"))?;
    let mask = provider.info().require_special(SpecialToken::Mask)?.clone();
    let prefix = provider.tokenize(prefix)?;
    let suffix = provider.tokenize(suffix)?;
    Ok(mlm_variants(&prefix, &suffix, fill_pieces, &mask, style)?)
}

#[derive(Debug, thiserror::Error)]
pub enum VariantError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Provider(#[from] crate::provider::ProviderError),
}

/// Geometric mean of token probabilities, computed in log2 space.
pub fn combine_generative(probs: &[f64]) -> Result<f64, DomainError> {
    if probs.is_empty() {
        return Err(DomainError::new("cannot combine an empty probability sequence"));
    }
    let mut sum = 0.0;
    for &p in probs {
        if !(p > 0.0 && p <= 1.0) {
            return Err(DomainError::new(format!("probability {p} is outside (0, 1]")));
        }
        sum += p.log2();
    }
    Ok((sum / probs.len() as f64).exp2())
}

pub(crate) fn combine_clamped(example: &Example, probs: &[f64]) -> Result<f64, PredictError> {
    let clamped: Vec<f64> = probs.iter().map(|&p| clamp_prob(p)).collect();
    combine_generative(&clamped).map_err(|e| PredictError::example(example, e.to_string()))
}

/// Runs a batch and unwraps every sub-response, attributing failures to `example`.
pub(crate) fn run_batch<P: Provider + ?Sized>(
    provider: &mut P,
    example: &Example,
    requests: &[Request],
) -> Result<Vec<crate::provider::Response>, PredictError> {
    provider
        .execute(requests)
        .map_err(PredictError::provider(example))?
        .into_iter()
        .map(|r| r.map_err(PredictError::provider(example)))
        .collect()
}

pub(crate) fn tokenize_all<P: Provider + ?Sized>(
    provider: &mut P,
    example: &Example,
    texts: &[&str],
) -> Result<Vec<TokenPieceSeq>, PredictError> {
    let requests: Vec<Request> = texts.iter().map(|t| Request::Tokenize { text: t.to_string() }).collect();
    run_batch(provider, example, &requests)?
        .into_iter()
        .map(|r| r.into_tokens().map_err(PredictError::provider(example)))
        .collect()
}

fn blank_parts(example: &Example) -> Result<(&str, &str), PredictError> {
    split_blank(&example.context).ok_or_else(|| PredictError::example(example, "context needs exactly one BLANK"))
}

fn fill_words(example: &Example) -> Result<[&str; 3], PredictError> {
    let cands = example.labeled().map_err(|e| PredictError::example(example, e.to_string()))?;
    let mut out = [""; 3];
    for (slot, c) in out.iter_mut().zip(cands) {
        *slot = c
            .fill_word
            .as_deref()
            .ok_or_else(|| PredictError::example(example, format!("candidate `{}` has no aligned fill word", c.id)))?;
    }
    Ok(out)
}

/// Masked-LM scoring: arithmetic mean of the masked-piece probabilities.
pub fn score_intra_mlm<P: Provider + ?Sized>(
    example: &Example,
    provider: &mut P,
    style: MaskStyle,
) -> Result<PredictionRecord, PredictError> {
    provider.info().require(Capability::Mlm).map_err(PredictError::provider(example))?;
    let mask = provider
        .info()
        .require_special(SpecialToken::Mask)
        .map_err(PredictError::provider(example))?
        .clone();
    let (prefix, suffix) = blank_parts(example)?;
    let fills = fill_words(example)?;
    let toks = tokenize_all(provider, example, &[prefix, suffix, fills[0], fills[1], fills[2]])?;
    let (prefix, suffix) = (&toks[0], &toks[1]);

    let mut requests = Vec::new();
    let mut owners = Vec::new();
    for (c, pieces) in toks[2..].iter().enumerate() {
        let variants =
            mlm_variants(prefix, suffix, pieces, &mask, style).map_err(|e| PredictError::example(example, e.to_string()))?;
        for v in variants {
            requests.push(Request::Mlm { sequence: v.sequence, targets: vec![(v.mask_position, v.target_piece)] });
            owners.push(c);
        }
    }
    let responses = run_batch(provider, example, &requests)?;
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for (resp, &c) in responses.into_iter().zip(&owners) {
        let probs = resp.into_probs().map_err(PredictError::provider(example))?;
        let p = *probs
            .probs
            .first()
            .ok_or_else(|| PredictError::example(example, "backend returned no probability"))?;
        sums[c] += clamp_prob(p);
        counts[c] += 1;
    }
    let mean = |c: usize| sums[c] / counts[c] as f64;
    Ok(PredictionRecord::new(example, [mean(0), mean(1), mean(2)]))
}

/// Causal-LM scoring of the full filled sentence.
pub fn score_intra_causal<P: Provider + ?Sized>(
    example: &Example,
    provider: &mut P,
) -> Result<PredictionRecord, PredictError> {
    provider.info().require(Capability::CausalLm).map_err(PredictError::provider(example))?;
    let bos = provider.info().special(SpecialToken::Bos).is_some();
    if !bos {
        warn!("backend has no BOS token; the first token of each sentence is scored as probability 1");
    }
    let cands = example.labeled().map_err(|e| PredictError::example(example, e.to_string()))?;
    let toks = tokenize_all(provider, example, &cands.map(|c| c.text.as_str()))?;
    let requests: Vec<Request> =
        toks.iter().map(|t| Request::Causal { sequence: t.clone(), prepend_bos: bos }).collect();
    let responses = run_batch(provider, example, &requests)?;
    let mut scores = [0.0; 3];
    for (slot, (resp, t)) in scores.iter_mut().zip(responses.into_iter().zip(&toks)) {
        let probs = resp.into_probs().map_err(PredictError::provider(example))?;
        if probs.len() != t.len() {
            return Err(PredictError::example(example, "causal response length does not match the sequence"));
        }
        let scored = if bos { &probs.probs[..] } else { &probs.probs[1.min(probs.len())..] };
        *slot = if scored.is_empty() && !t.is_empty() { 1.0 } else { combine_clamped(example, scored)? };
    }
    Ok(PredictionRecord::new(example, scores))
}

/// Builds the teacher-forced decoder input and targets for a span:
/// decoder `[pad, sentinel, t1..t(k-1)]`, targets `[sentinel, t1..tk]`.
pub fn teacher_forcing(pad: &TokenPiece, sentinel: &TokenPiece, span: &TokenPieceSeq) -> (TokenPieceSeq, TokenPieceSeq) {
    let mut decoder = TokenPieceSeq::new(vec![pad.clone(), sentinel.clone()]);
    if !span.is_empty() {
        decoder.pieces.extend_from_slice(&span.pieces[..span.len() - 1]);
    }
    let mut targets = TokenPieceSeq::new(vec![sentinel.clone()]);
    targets.extend_from(span);
    (decoder, targets)
}

/// Span-infilling scoring: the blank becomes the first sentinel and the fill
/// pieces are scored under teacher forcing; the sentinel position is excluded.
pub fn score_intra_seq2seq<P: Provider + ?Sized>(
    example: &Example,
    provider: &mut P,
) -> Result<PredictionRecord, PredictError> {
    let info = provider.info();
    info.require(Capability::Seq2seqLm).map_err(PredictError::provider(example))?;
    let sentinel = info.require_special(SpecialToken::Sentinel0).map_err(PredictError::provider(example))?.clone();
    let pad = info.require_special(SpecialToken::Pad).map_err(PredictError::provider(example))?.clone();
    let (prefix, suffix) = blank_parts(example)?;
    let fills = fill_words(example)?;
    let toks = tokenize_all(provider, example, &[prefix, suffix, fills[0], fills[1], fills[2]])?;

    let mut encoder = toks[0].clone();
    encoder.push(sentinel.clone());
    encoder.extend_from(&toks[1]);

    let requests: Vec<Request> = toks[2..]
        .iter()
        .map(|span| {
            let (decoder_input, targets) = teacher_forcing(&pad, &sentinel, span);
            Request::Seq2seq { encoder_input: encoder.clone(), decoder_input, targets }
        })
        .collect();
    let responses = run_batch(provider, example, &requests)?;
    let mut scores = [0.0; 3];
    for (slot, resp) in scores.iter_mut().zip(responses) {
        let probs = resp.into_probs().map_err(PredictError::provider(example))?;
        *slot = combine_clamped(example, probs.probs.get(1..).unwrap_or(&[]))?;
    }
    Ok(PredictionRecord::new(example, scores))
}
