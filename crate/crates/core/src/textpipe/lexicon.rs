use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Non-fatal issue found while parsing a lexicon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadWarning {
    pub line: usize,
    pub msg: String,
}

/// Word to ordered synonym list, all lowercase.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces an entry. Self-references and repeated synonyms are
    /// dropped.
    pub fn insert(&mut self, word: &str, synonyms: &[&str]) -> Option<Vec<String>> {
        let word = word.to_lowercase();
        let mut syns: Vec<String> = Vec::with_capacity(synonyms.len());
        for s in synonyms {
            let s = s.trim().to_lowercase();
            if s.is_empty() || s == word || syns.contains(&s) {
                continue;
            }
            syns.push(s);
        }
        self.entries.insert(word, syns)
    }

    /// Parses `word<TAB>syn1,syn2,...` lines. Blank lines are skipped; a
    /// repeated word replaces the earlier entry and yields a warning.
    pub fn parse(text: &str) -> Result<(Self, Vec<LoadWarning>)> {
        let mut lex = Self::new();
        let mut warnings = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let Some((word, syns)) = line.split_once('\t') else {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "expected word<TAB>synonyms".into(),
                });
            };
            let word = word.trim();
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("invalid headword {word:?}"),
                });
            }
            let list: Vec<&str> = syns.split(',').collect();
            if list.iter().any(|s| s.trim().to_lowercase() == word.to_lowercase()) {
                warnings.push(LoadWarning {
                    line: i + 1,
                    msg: format!("{word:?} lists itself as a synonym; dropped"),
                });
            }
            if lex.insert(word, &list).is_some() {
                warnings.push(LoadWarning {
                    line: i + 1,
                    msg: format!("duplicate entry for {word:?}; later line wins"),
                });
            }
        }
        Ok((lex, warnings))
    }

    /// Case-insensitive lookup.
    pub fn synonyms(&self, word: &str) -> &[String] {
        let key = if word.chars().any(char::is_uppercase) {
            word.to_lowercase()
        } else {
            word.to_string()
        };
        self.entries.get(&key).map_or(&[], Vec::as_slice)
    }

    /// True when `word` has at least one synonym.
    pub fn is_eligible(&self, word: &str) -> bool {
        !self.synonyms(word).is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entry() {
        let (lex, w) = SynonymLexicon::parse("good\tfine,nice\n").unwrap();
        assert!(w.is_empty());
        assert_eq!(lex.synonyms("good"), ["fine", "nice"]);
        assert_eq!(lex.synonyms("GOOD"), ["fine", "nice"]);
    }

    #[test]
    fn duplicate_word_later_wins_with_warning() {
        let (lex, w) = SynonymLexicon::parse("good\tfine\n\ngood\tnice\n").unwrap();
        assert_eq!(lex.synonyms("good"), ["nice"]);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].line, 3);
    }

    #[test]
    fn self_synonym_is_dropped() {
        let (lex, w) = SynonymLexicon::parse("good\tgood,fine\n").unwrap();
        assert_eq!(lex.synonyms("good"), ["fine"]);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn missing_tab_is_parse_error_with_line() {
        let err = SynonymLexicon::parse("good\tfine\nbad fine\n").unwrap_err();
        assert_eq!(
            err,
            Error::Parse {
                line: 2,
                msg: "expected word<TAB>synonyms".into()
            }
        );
    }
}
