//! Discourse-level (inter-sentence) candidate scoring.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::intra::{combine_clamped, run_batch, teacher_forcing, tokenize_all};
use crate::prediction::{PredictError, PredictionRecord};
use crate::provider::{Capability, Provider, Request, SpecialToken, TokenPieceSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterMode {
    /// Next-sentence-prediction head.
    Nsp,
    /// Conditional probability of the candidate tokens given the context.
    Gen,
    /// Ratio of full-sentence and context probabilities.
    GenOrig,
}

impl fmt::Display for InterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InterMode::Nsp => "nsp",
            InterMode::Gen => "gen",
            InterMode::GenOrig => "gen_orig",
        })
    }
}

impl FromStr for InterMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nsp" => Ok(InterMode::Nsp),
            "gen" => Ok(InterMode::Gen),
            "gen_orig" => Ok(InterMode::GenOrig),
            _ => Err(format!("unknown inter-sentence mode `{s}` (expected nsp, gen or gen_orig)")),
        }
    }
}

pub const DEFAULT_JOINER: &str = " ";

/// Joins context and candidate; an empty side contributes nothing.
pub fn join_sentences(context: &str, candidate: &str, joiner: &str) -> String {
    match (context.is_empty(), candidate.is_empty()) {
        (true, _) => candidate.to_string(),
        (_, true) => context.to_string(),
        _ => format!("{context}{joiner}{candidate}"),
    }
}

/// Length of the shared token prefix of two sequences.
pub fn common_prefix_len(a: &TokenPieceSeq, b: &TokenPieceSeq) -> usize {
    a.pieces.iter().zip(&b.pieces).take_while(|(x, y)| x == y).count()
}

fn texts(example: &Example) -> Result<[&str; 3], PredictError> {
    let cands = example.labeled().map_err(|e| PredictError::example(example, e.to_string()))?;
    Ok(cands.map(|c| c.text.as_str()))
}

/// Scores each candidate with the next-sentence-prediction head.
pub fn score_inter_nsp<P: Provider + ?Sized>(example: &Example, provider: &mut P) -> Result<PredictionRecord, PredictError> {
    provider.info().require(Capability::Nsp).map_err(PredictError::provider(example))?;
    let requests: Vec<Request> = texts(example)?
        .iter()
        .map(|t| Request::Nsp { sentence_a: example.context.clone(), sentence_b: t.to_string() })
        .collect();
    let mut scores = [0.0; 3];
    for (slot, resp) in scores.iter_mut().zip(run_batch(provider, example, &requests)?) {
        *slot = resp.into_prob().map_err(PredictError::provider(example))?;
    }
    Ok(PredictionRecord::new(example, scores))
}

/// Scores the candidate tokens of `context + joiner + candidate` conditioned
/// on everything before them.
pub fn score_inter_causal_gen<P: Provider + ?Sized>(
    example: &Example,
    provider: &mut P,
    joiner: &str,
) -> Result<PredictionRecord, PredictError> {
    provider.info().require(Capability::CausalLm).map_err(PredictError::provider(example))?;
    let bos = provider.info().special(SpecialToken::Bos).is_some();
    if !bos {
        warn!("backend has no BOS token; a sentence-initial token is scored as probability 1");
    }
    let cands = texts(example)?;
    let full: Vec<String> = cands.iter().map(|c| join_sentences(&example.context, c, joiner)).collect();
    let toks = tokenize_all(provider, example, &[&example.context, &full[0], &full[1], &full[2]])?;
    let context = &toks[0];

    let mut spans = [0usize; 3];
    for (i, seq) in toks[1..].iter().enumerate() {
        let start = if example.context.is_empty() { 0 } else { common_prefix_len(context, seq) };
        if start >= seq.len() {
            return Err(PredictError::example(
                example,
                format!("candidate {:?} has no tokens after the context", cands[i]),
            ));
        }
        spans[i] = start;
    }
    let requests: Vec<Request> =
        toks[1..].iter().map(|t| Request::Causal { sequence: t.clone(), prepend_bos: bos }).collect();
    let mut scores = [0.0; 3];
    for (i, resp) in run_batch(provider, example, &requests)?.into_iter().enumerate() {
        let probs = resp.into_probs().map_err(PredictError::provider(example))?;
        if probs.len() != toks[i + 1].len() {
            return Err(PredictError::example(example, "causal response length does not match the sequence"));
        }
        let start = if bos { spans[i] } else { spans[i].max(1) };
        let span = &probs.probs[start.min(probs.len())..];
        scores[i] = if span.is_empty() { 1.0 } else { combine_clamped(example, span)? };
    }
    Ok(PredictionRecord::new(example, scores))
}

/// Scores a candidate as P(context + candidate) / P(context), both combined
/// over whole sentences. The ratio is not bounded by 1.
pub fn score_inter_causal_gen_orig<P: Provider + ?Sized>(
    example: &Example,
    provider: &mut P,
    joiner: &str,
) -> Result<PredictionRecord, PredictError> {
    provider.info().require(Capability::CausalLm).map_err(PredictError::provider(example))?;
    let bos = provider.info().special(SpecialToken::Bos).is_some();
    let cands = texts(example)?;
    let full: Vec<String> = cands.iter().map(|c| join_sentences(&example.context, c, joiner)).collect();
    let toks = tokenize_all(provider, example, &[&example.context, &full[0], &full[1], &full[2]])?;

    let requests: Vec<Request> = toks
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| Request::Causal { sequence: t.clone(), prepend_bos: bos })
        .collect();
    let mut responses = run_batch(provider, example, &requests)?.into_iter();
    let mut combined = [1.0f64; 4];
    for (slot, t) in combined.iter_mut().zip(&toks) {
        if t.is_empty() {
            continue;
        }
        let probs = responses
            .next()
            .ok_or_else(|| PredictError::example(example, "missing causal response"))?
            .into_probs()
            .map_err(PredictError::provider(example))?;
        let scored = if bos { &probs.probs[..] } else { &probs.probs[1.min(probs.len())..] };
        *slot = if scored.is_empty() { 1.0 } else { combine_clamped(example, scored)? };
    }
    let denom = combined[0];
    Ok(PredictionRecord::new(example, [combined[1] / denom, combined[2] / denom, combined[3] / denom]))
}

/// Scores the candidate as the span following the context, with the
/// encoder seeing the context and a trailing sentinel.
pub fn score_inter_seq2seq<P: Provider + ?Sized>(example: &Example, provider: &mut P) -> Result<PredictionRecord, PredictError> {
    let info = provider.info();
    info.require(Capability::Seq2seqLm).map_err(PredictError::provider(example))?;
    let sentinel = info.require_special(SpecialToken::Sentinel0).map_err(PredictError::provider(example))?.clone();
    let pad = info.require_special(SpecialToken::Pad).map_err(PredictError::provider(example))?.clone();
    let cands = texts(example)?;
    let toks = tokenize_all(provider, example, &[&example.context, cands[0], cands[1], cands[2]])?;
    let mut encoder = toks[0].clone();
    encoder.push(sentinel.clone());

    let mut requests = Vec::with_capacity(3);
    for (span, text) in toks[1..].iter().zip(cands) {
        if span.is_empty() {
            return Err(PredictError::example(example, format!("candidate {text:?} has no tokens")));
        }
        let (decoder_input, targets) = teacher_forcing(&pad, &sentinel, span);
        requests.push(Request::Seq2seq { encoder_input: encoder.clone(), decoder_input, targets });
    }
    let mut scores = [0.0; 3];
    for (slot, resp) in scores.iter_mut().zip(run_batch(provider, example, &requests)?) {
        let probs = resp.into_probs().map_err(PredictError::provider(example))?;
        *slot = combine_clamped(example, probs.probs.get(1..).unwrap_or(&[]))?;
    }
    Ok(PredictionRecord::new(example, scores))
}
