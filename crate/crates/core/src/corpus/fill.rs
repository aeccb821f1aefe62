use super::CorpusError;

/// Placeholder token in intra-sentence contexts.
pub const BLANK: &str = "BLANK";

/// Recovers the text that replaced `BLANK` in `filled_sentence`.
///
/// The context is split around its single `BLANK`; the filled sentence must
/// start with the left part and end with the right part. The first character
/// of the sentence is compared case-insensitively, since a fill word at the
/// start of a sentence is capitalised.
pub fn extract_fill_word(context: &str, filled_sentence: &str) -> Result<String, CorpusError> {
    let fail = || CorpusError::FillWord { context: context.to_string(), filled: filled_sentence.to_string() };
    let (prefix, suffix) = split_blank(context).ok_or_else(fail)?;
    let rest = strip_prefix_first_char_insensitive(filled_sentence, prefix).ok_or_else(fail)?;
    let fill = rest.strip_suffix(suffix).ok_or_else(fail)?;
    if fill.is_empty() {
        return Err(fail());
    }
    Ok(fill.to_string())
}

/// Substitutes `fill` for the single `BLANK` in `context`.
pub fn fill_blank(context: &str, fill: &str) -> Option<String> {
    let (prefix, suffix) = split_blank(context)?;
    Some(format!("{prefix}{fill}{suffix}"))
}

/// Splits a context around its only `BLANK`; `None` unless there is exactly one.
pub fn split_blank(context: &str) -> Option<(&str, &str)> {
    let mut found = context.match_indices(BLANK);
    let (at, _) = found.next()?;
    if found.next().is_some() {
        return None;
    }
    Some((&context[..at], &context[at + BLANK.len()..]))
}

fn strip_prefix_first_char_insensitive<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let mut pc = prefix.chars();
    let Some(p0) = pc.next() else {
        return Some(s);
    };
    let mut sc = s.chars();
    let s0 = sc.next()?;
    if !p0.to_lowercase().eq(s0.to_lowercase()) {
        return None;
    }
    sc.as_str().strip_prefix(pc.as_str())
}

/// Whether `candidate_text` equals `context` with `fill` substituted, modulo
/// the case of the first character.
pub(crate) fn matches_fill(context: &str, fill: &str, candidate_text: &str) -> bool {
    match fill_blank(context, fill) {
        Some(expected) => {
            let mut a = expected.chars();
            let mut b = candidate_text.chars();
            match (a.next(), b.next()) {
                (Some(x), Some(y)) => x.to_lowercase().eq(y.to_lowercase()) && a.as_str() == b.as_str(),
                (None, None) => true,
                _ => false,
            }
        }
        None => false,
    }
}
