use alloc::string::String;
use alloc::vec::Vec;

use super::vocab::{Vocabulary, CLS, PAD};
use crate::error::{Error, Result};

/// Lowercased words of `text`. Alphanumeric runs form words; every other
/// non-whitespace character is a one-character token.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
            continue;
        }
        if !cur.is_empty() {
            out.push(core::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.extend(core::iter::once(ch.to_lowercase().collect()));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn join_words(words: &[String]) -> String {
    words.join(" ")
}

/// `[CLS]` followed by the ids of `words`, truncated to `max_len`.
pub fn tokenize_words(words: &[String], vocab: &Vocabulary, max_len: usize) -> Result<Vec<usize>> {
    if max_len < 2 {
        return Err(Error::Config("max_len must be at least 2".into()));
    }
    let mut ids = Vec::with_capacity(max_len.min(words.len() + 1));
    ids.push(CLS);
    ids.extend(words.iter().take(max_len - 1).map(|w| vocab.id(w)));
    Ok(ids)
}

pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<Vec<usize>> {
    tokenize_words(&words(text), vocab, max_len)
}

/// Inverse of [`tokenize`] for in-vocabulary text: drops `[CLS]` and
/// padding and joins the rest with single spaces.
pub fn detokenize(ids: &[usize], vocab: &Vocabulary) -> String {
    let toks: Vec<&str> = ids
        .iter()
        .filter(|&&id| id != CLS && id != PAD)
        .filter_map(|&id| vocab.token(id))
        .collect();
    toks.join(" ")
}
