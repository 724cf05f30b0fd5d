use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const MASK: usize = 2;
pub const CLS: usize = 3;
pub const SEP: usize = 4;
/// Number of reserved ids; ordinary tokens start here.
pub const RESERVED: usize = 5;
pub const RESERVED_TOKENS: [&str; RESERVED] = ["[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]"];

/// Bijective token/id mapping whose first five ids are the reserved
/// tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    to_id: BTreeMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Reserved tokens followed by `words` in order; duplicates and words
    /// clashing with reserved tokens are skipped.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self {
            to_id: BTreeMap::new(),
            tokens: Vec::new(),
        };
        for t in RESERVED_TOKENS {
            v.insert(t);
        }
        for w in words {
            v.insert(w.as_ref());
        }
        v
    }

    fn insert(&mut self, tok: &str) -> bool {
        if self.to_id.contains_key(tok) {
            return false;
        }
        self.to_id.insert(tok.to_string(), self.tokens.len());
        self.tokens.push(tok.to_string());
        true
    }

    /// Builds a vocabulary from texts: words sorted by descending count,
    /// ties broken lexicographically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for w in super::words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_words(ranked.into_iter().map(|(w, _)| w))
    }

    /// Parses the one-token-per-line format; line number (from 0) is the id.
    pub fn parse(text: &str) -> Result<Self> {
        let mut v = Self {
            to_id: BTreeMap::new(),
            tokens: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let tok = line.trim_end_matches('\r');
            if i < RESERVED && tok != RESERVED_TOKENS[i] {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected reserved token {}, found {tok:?}", RESERVED_TOKENS[i]),
                });
            }
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("invalid token {tok:?}"),
                });
            }
            if !v.insert(tok) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate token {tok:?}"),
                });
            }
        }
        if v.tokens.len() < RESERVED {
            return Err(Error::Parse {
                line: v.tokens.len() + 1,
                msg: "vocabulary is missing reserved tokens".into(),
            });
        }
        Ok(v)
    }

    /// Serializes to the one-token-per-line format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or `UNK` when absent.
    pub fn id(&self, token: &str) -> usize {
        self.to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}
