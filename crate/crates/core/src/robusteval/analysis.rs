use alloc::string::String;
use alloc::vec::Vec;

use super::SentenceEncoder;
use crate::error::{Error, Result};
use crate::numerics::cosine_similarity;
use crate::rng::SeededStream;
use crate::textpipe::{augment, words, SynonymLexicon};

/// Mean cosine of positive pairs (a text against its own augmentation) and
/// of random pairs of distinct texts, for one encoder condition.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRow {
    pub condition: String,
    pub positive_mean: f64,
    pub random_mean: f64,
    pub positive: Vec<f64>,
    pub random: Vec<f64>,
}

/// Draw order: `n_pairs` positive pairs first, each one `index(n)` for the
/// text followed by one [`augment`] call at rate `p`; then `n_pairs` random
/// pairs, each `i = index(n)` and `j = index(n - 1)`, with `j` shifted up by
/// one when `j >= i` so the two texts differ.
#[allow(clippy::too_many_arguments)]
pub fn cosine_analysis<E: SentenceEncoder + ?Sized>(
    condition: &str,
    enc: &E,
    texts: &[String],
    lex: &SynonymLexicon,
    n_pairs: usize,
    p: f64,
    rng: &mut SeededStream,
) -> Result<AnalysisRow> {
    let n = texts.len();
    if n < 2 {
        return Err(Error::DegenerateInput("cosine analysis needs at least two texts"));
    }
    if n_pairs == 0 {
        return Err(Error::Config("n_pairs must be at least 1".into()));
    }
    let mut inputs = Vec::with_capacity(4 * n_pairs);
    for _ in 0..n_pairs {
        let w = words(&texts[rng.index(n)]);
        let a = augment(&w, lex, p, rng);
        inputs.push(w);
        inputs.push(a);
    }
    for _ in 0..n_pairs {
        let i = rng.index(n);
        let mut j = rng.index(n - 1);
        if j >= i {
            j += 1;
        }
        inputs.push(words(&texts[i]));
        inputs.push(words(&texts[j]));
    }
    let reps = enc.encode(&inputs)?;
    let cos = reps
        .chunks(2)
        .map(|pair| cosine_similarity(&pair[0], &pair[1]))
        .collect::<Result<Vec<_>>>()?;
    let (positive, random) = cos.split_at(n_pairs);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(AnalysisRow {
        condition: condition.into(),
        positive_mean: mean(positive),
        random_mean: mean(random),
        positive: positive.to_vec(),
        random: random.to_vec(),
    })
}
