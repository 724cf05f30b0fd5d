//! Whole-word tokenization, vocabularies, synonym lexicons, synonym
//! augmentation and MLM corruption.

mod augment;
mod batch;
mod data;
mod lexicon;
mod mlm;
mod tokenize;
mod vocab;

pub use augment::augment;
pub use batch::{batch, batch_from_ids, join_all, TokenizedBatch};
pub use data::{parse_corpus, parse_labeled, LabeledExample};
pub use lexicon::{LoadWarning, SynonymLexicon};
pub use mlm::{mask_for_mlm, NOT_PREDICTED};
pub use tokenize::{detokenize, join_words, tokenize, tokenize_words, words};
pub use vocab::{Vocabulary, CLS, MASK, PAD, RESERVED, RESERVED_TOKENS, SEP, UNK};
