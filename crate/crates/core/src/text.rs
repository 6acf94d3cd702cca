//! Small tokenizers shared by the filter, the validator and the metrics.
//!
//! Three flavours are needed:
//! - [`word_tokens`]: case-folded words only, punctuation dropped. Used by the
//!   pronoun filter and by term matching.
//! - [`folded_tokens`]: case-folded words *and* punctuation marks, each mark a
//!   token of its own. Used by the reformulation validator.
//! - [`bleu_tokens`]: case-preserving whitespace split with punctuation
//!   isolated. Used by BLEU.

/// A word character: letters (any script), digits and combining marks.
fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '\u{0300}'..='\u{036F}')
}

/// Split `text` into runs of word characters and single punctuation marks.
/// Whitespace separates tokens and is never part of one.
fn split_runs(text: &str, keep_punct: bool) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if is_word_char(c) {
            if start.is_none() {
                start = Some(i);
            }
            continue;
        }
        if let Some(s) = start.take() {
            out.push(&text[s..i]);
        }
        if keep_punct && !c.is_whitespace() {
            out.push(&text[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

/// Case-folded word tokens; punctuation and apostrophes act as separators.
///
/// `"It hit him, not me."` becomes `["it", "hit", "him", "not", "me"]` and
/// `"I'm"` becomes `["i", "m"]`.
pub fn word_tokens(text: &str) -> Vec<String> {
    split_runs(text, false)
        .into_iter()
        .map(str::to_lowercase)
        .collect()
}

/// Case-folded tokens with every punctuation mark kept as its own token.
pub fn folded_tokens(text: &str) -> Vec<String> {
    split_runs(text, true)
        .into_iter()
        .map(str::to_lowercase)
        .collect()
}

/// Case-sensitive BLEU tokenization: whitespace split, punctuation isolated.
pub fn bleu_tokens(text: &str) -> Vec<&str> {
    split_runs(text, true)
}
