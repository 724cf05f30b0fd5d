use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Non-blank lines of a one-sentence-per-line corpus.
pub fn parse_corpus(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .map(ToString::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    /// 1-based line in the source file.
    pub line: usize,
    pub label: usize,
    pub text: String,
}

/// Parses `label<TAB>text` lines; blank lines are skipped.
pub fn parse_labeled(text: &str) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "expected label<TAB>text".into(),
        })?;
        let label = label.trim().parse::<usize>().map_err(|_| Error::Parse {
            line: i + 1,
            msg: format!("label {label:?} is not a non-negative integer"),
        })?;
        out.push(LabeledExample {
            line: i + 1,
            label,
            text: body.trim().to_string(),
        });
    }
    Ok(out)
}
