//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use dcl_core::robusteval::Classifier;
use dcl_core::textpipe::SynonymLexicon;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Replay of the seeded-stream draw contract on a raw ChaCha8 generator.
pub struct Replay(ChaCha8Rng);

impl Replay {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / 9007199254740992.0
    }

    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

pub fn oracle_augment(w: &[String], lex: &SynonymLexicon, p: f64, r: &mut Replay) -> Vec<String> {
    let eligible: Vec<usize> = (0..w.len()).filter(|&i| !lex.synonyms(&w[i]).is_empty()).collect();
    let mut chosen = Vec::new();
    for &i in &eligible {
        if r.uniform() < p {
            chosen.push(i);
        }
    }
    if p > 0.0 && chosen.is_empty() && !eligible.is_empty() {
        chosen.push(eligible[r.index(eligible.len())]);
    }
    let mut out = w.to_vec();
    for i in chosen {
        let s = lex.synonyms(&w[i]);
        out[i] = s[r.index(s.len())].clone();
    }
    out
}

/// The invariance pass rule written out directly.
pub fn oracle_pass(cosine: f64, flipped: bool, eps: f64) -> bool {
    if flipped {
        return false;
    }
    cosine >= eps
}

/// Softmax over summed per-word class weights; unknown words weigh 0.
pub struct BagOfWords {
    pub weights: BTreeMap<String, Vec<f64>>,
    pub classes: usize,
}

impl BagOfWords {
    pub fn probs(&self, words: &[String]) -> Vec<f64> {
        let mut z = vec![0.0; self.classes];
        for w in words {
            if let Some(v) = self.weights.get(w) {
                for (a, b) in z.iter_mut().zip(v) {
                    *a += b;
                }
            }
        }
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }
}

impl Classifier for BagOfWords {
    fn proba(&self, inputs: &[Vec<String>]) -> dcl_core::Result<Vec<Vec<f64>>> {
        Ok(inputs.iter().map(|w| self.probs(w)).collect())
    }
}

/// A small lexicon and a bag-of-words model over its words, with weights
/// chosen so that some attacks succeed and some do not.
pub fn toy_attack_setup() -> (SynonymLexicon, BagOfWords, Vec<String>) {
    let mut lex = SynonymLexicon::new();
    lex.insert("good", &["fine", "decent", "great"]);
    lex.insert("bad", &["poor", "awful"]);
    lex.insert("movie", &["film"]);
    // Multiples of 1/16: every logit sum is exact in any order, so equal
    // words at different positions tie exactly.
    let w: &[(&str, [f64; 2])] = &[
        ("good", [-1.1875, 1.3125]),
        ("fine", [-0.3125, 0.1875]),
        ("decent", [-0.5, 0.4375]),
        ("great", [-1.625, 1.875]),
        ("bad", [1.375, -1.125]),
        ("poor", [0.625, -0.375]),
        ("awful", [1.875, -1.6875]),
        ("movie", [0.125, 0.0625]),
        ("film", [-0.1875, 0.3125]),
        ("plot", [0.125, -0.25]),
        ("[UNK]", [0.0, 0.0]),
    ];
    let weights = w.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect();
    let pool = ["good", "bad", "movie", "plot"].iter().map(|s| s.to_string()).collect();
    (lex, BagOfWords { weights, classes: 2 }, pool)
}

/// Every sentence over `pool` with 1 to `max_len` words.
pub fn all_sentences(pool: &[String], max_len: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<String>> = vec![vec![]];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s| {
                pool.iter().map(move |w| {
                    let mut t = s.clone();
                    t.push(w.clone());
                    t
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleAttack {
    pub adversarial: Vec<String>,
    pub initial_label: usize,
    pub final_label: usize,
    /// (position, replacement, H)
    pub substitutions: Vec<(usize, String, f64)>,
    pub success: bool,
    pub queries: usize,
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

/// PWWS by exhaustive enumeration: every single-word edit is scored
/// explicitly, and the greedy phase repeatedly scans for the highest
/// remaining priority instead of sorting.
pub fn oracle_pwws(clf: &BagOfWords, text: &[String], y: usize, lex: &SynonymLexicon) -> OracleAttack {
    let mut queries = 1;
    let p0 = clf.probs(text);
    let initial = argmax(&p0);
    if initial != y {
        return OracleAttack {
            adversarial: text.to_vec(),
            initial_label: initial,
            final_label: initial,
            substitutions: vec![],
            success: true,
            queries,
        };
    }
    let n = text.len();
    let mut sal = vec![0.0; n];
    for i in 0..n {
        let mut t = text.to_vec();
        t[i] = "[UNK]".into();
        sal[i] = p0[y] - clf.probs(&t)[y];
        queries += 1;
    }
    let m = sal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = sal.iter().map(|s| (s - m).exp()).sum();
    let weight: Vec<f64> = sal.iter().map(|s| (s - m).exp() / z).collect();

    // (position, best substitute, dP)
    let mut best: Vec<Option<(String, f64)>> = vec![None; n];
    for i in 0..n {
        for s in lex.synonyms(&text[i]) {
            let mut t = text.to_vec();
            t[i] = s.clone();
            let dp = p0[y] - clf.probs(&t)[y];
            queries += 1;
            let better = match &best[i] {
                None => true,
                Some((_, b)) => dp > *b,
            };
            if better {
                best[i] = Some((s.clone(), dp));
            }
        }
    }
    let mut remaining: Vec<(usize, String, f64)> = (0..n)
        .filter_map(|i| best[i].clone().filter(|(_, dp)| *dp > 0.0).map(|(s, dp)| (i, s, dp * weight[i])))
        .collect();
    let mut cur = text.to_vec();
    let mut subs = Vec::new();
    let mut label = initial;
    while !remaining.is_empty() {
        let mut k = 0;
        for j in 1..remaining.len() {
            let (a, b) = (&remaining[j], &remaining[k]);
            if a.2 > b.2 || (a.2 == b.2 && a.0 < b.0) {
                k = j;
            }
        }
        let (i, s, h) = remaining.remove(k);
        cur[i] = s.clone();
        subs.push((i, s, h));
        label = argmax(&clf.probs(&cur));
        queries += 1;
        if label != y {
            break;
        }
    }
    OracleAttack {
        adversarial: cur,
        initial_label: initial,
        final_label: label,
        substitutions: subs,
        success: label != y,
        queries,
    }
}
