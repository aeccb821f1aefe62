//! Next-sentence-prediction pairs from sentence-tokenised articles.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceRecord {
    pub article: String,
    pub index: u64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NspLabel {
    IsNext,
    NotNext,
}

impl NspLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            NspLabel::IsNext => "is_next",
            NspLabel::NotNext => "not_next",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NspPair {
    pub sentence_a: String,
    pub sentence_b: String,
    pub label: NspLabel,
    pub article_a: String,
    pub article_b: String,
}

/// Builds positive pairs from consecutive sentences of the same article and
/// negative pairs from sentences of different articles.
///
/// `negative_ratio` is the target fraction of negatives in the output. The
/// result is a deterministic function of the input order and `seed`.
pub fn build_nsp_corpus(
    sentences: &[SentenceRecord],
    negative_ratio: f64,
    seed: u64,
) -> Result<Vec<NspPair>, CorpusError> {
    if !(0.0..1.0).contains(&negative_ratio) {
        return Err(CorpusError::Config(format!("negative ratio must be in [0, 1), got {negative_ratio}")));
    }

    // articles in order of first appearance, sentences sorted by index
    let mut order: Vec<&str> = Vec::new();
    let mut by_article: HashMap<&str, Vec<&SentenceRecord>> = HashMap::new();
    for s in sentences {
        by_article
            .entry(s.article.as_str())
            .or_insert_with(|| {
                order.push(s.article.as_str());
                Vec::new()
            })
            .push(s);
    }
    if order.len() < 2 {
        return Err(CorpusError::Config(format!(
            "negative pairs need at least 2 articles, got {}",
            order.len()
        )));
    }

    let mut flat: Vec<&SentenceRecord> = Vec::with_capacity(sentences.len());
    let mut blocks: Vec<(usize, usize)> = Vec::with_capacity(order.len());
    let mut pairs = Vec::new();
    for article in &order {
        let mut group = by_article.remove(article).expect("grouped above");
        group.sort_by_key(|s| s.index);
        for w in group.windows(2) {
            if w[1].index == w[0].index + 1 {
                pairs.push(NspPair {
                    sentence_a: w[0].text.clone(),
                    sentence_b: w[1].text.clone(),
                    label: NspLabel::IsNext,
                    article_a: w[0].article.clone(),
                    article_b: w[1].article.clone(),
                });
            }
        }
        let start = flat.len();
        flat.extend(group);
        blocks.push((start, flat.len()));
    }

    let positives = pairs.len() as f64;
    let negatives = (positives * negative_ratio / (1.0 - negative_ratio)).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let article_of: Vec<usize> = blocks
        .iter()
        .enumerate()
        .flat_map(|(b, &(s, e))| std::iter::repeat_n(b, e - s))
        .collect();
    for _ in 0..negatives {
        let anchor = rng.gen_range(0..flat.len());
        let (start, end) = blocks[article_of[anchor]];
        let k = rng.gen_range(0..flat.len() - (end - start));
        let partner = if k < start { k } else { k + (end - start) };
        let (a, b) = (flat[anchor], flat[partner]);
        pairs.push(NspPair {
            sentence_a: a.text.clone(),
            sentence_b: b.text.clone(),
            label: NspLabel::NotNext,
            article_a: a.article.clone(),
            article_b: b.article.clone(),
        });
    }
    pairs.shuffle(&mut rng);
    Ok(pairs)
}

/// Reads `article<TAB>index<TAB>text` lines.
pub fn read_sentences<R: BufRead>(reader: R) -> Result<Vec<SentenceRecord>, CorpusError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(article), Some(index), Some(text)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(CorpusError::Config(format!("line {}: expected article<TAB>index<TAB>text", n + 1)));
        };
        let index = index
            .trim()
            .parse()
            .map_err(|_| CorpusError::Config(format!("line {}: bad sentence index `{index}`", n + 1)))?;
        out.push(SentenceRecord { article: article.to_string(), index, text: text.to_string() });
    }
    Ok(out)
}

/// Writes `label<TAB>sentence_a<TAB>sentence_b` lines.
pub fn write_nsp_tsv<W: Write>(mut w: W, pairs: &[NspPair]) -> std::io::Result<()> {
    let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
    for p in pairs {
        writeln!(w, "{}\t{}\t{}", p.label.as_str(), clean(&p.sentence_a), clean(&p.sentence_b))?;
    }
    Ok(())
}
