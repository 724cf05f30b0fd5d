//! Loaders for the plain-text data files and a guarded writer.

use std::fs;
use std::io::Write;
use std::path::Path;

use dcl_core::textpipe::{parse_corpus, parse_labeled, LabeledExample, SynonymLexicon, Vocabulary};

use crate::error::{CliError, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn tag<T>(path: &Path, r: dcl_core::Result<T>) -> Result<T> {
    r.map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// One sentence per line; blank lines are skipped.
pub fn load_corpus(path: &Path) -> Result<Vec<String>> {
    let c = parse_corpus(&read_text(path)?);
    if c.is_empty() {
        return tag(path, Err(dcl_core::Error::EmptyInput("corpus")));
    }
    Ok(c)
}

/// `word<TAB>syn1,syn2,...` lines. Recoverable problems are logged.
pub fn load_lexicon(path: &Path) -> Result<SynonymLexicon> {
    let (lex, warnings) = tag(path, SynonymLexicon::parse(&read_text(path)?))?;
    for w in warnings {
        log::warn!("{}:{}: {}", path.display(), w.line, w.msg);
    }
    Ok(lex)
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    tag(path, Vocabulary::parse(&read_text(path)?))
}

/// `label<TAB>text` lines.
pub fn load_labeled(path: &Path) -> Result<Vec<LabeledExample>> {
    tag(path, parse_labeled(&read_text(path)?))
}

/// Writes `bytes` to a file that must not exist yet.
pub fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::AlreadyExists => CliError::Exists(path.to_path_buf()),
            _ => CliError::io(path, e),
        })?;
    f.write_all(bytes).map_err(|e| CliError::io(path, e))
}

/// Writes a report file, replacing an older report of the same name.
pub fn write_report(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
