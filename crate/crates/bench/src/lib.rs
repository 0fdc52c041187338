//! Shared fixtures for the decoding benchmarks.

use contrastive_core::ngram::train_ngram;
use contrastive_core::synthetic::generate_corpus;
use contrastive_core::{NGramModel, TokenId, Vocabulary};

/// Expert and amateur n-grams trained on `bytes` of synthetic text, plus a
/// handful of 32-token prompts from a held-out sample.
pub struct Fixture {
    pub expert: NGramModel,
    pub amateur: NGramModel,
    pub prompts: Vec<Vec<TokenId>>,
}

pub fn ngram_fixture(bytes: usize, expert_order: usize) -> Fixture {
    let train = generate_corpus(1, bytes);
    let held = generate_corpus(2, 20_000);
    let vocab = Vocabulary::build([train.as_str(), held.as_str()]);
    let seqs: Vec<Vec<TokenId>> = train.split("\n\n").map(|p| vocab.encode(p)).collect();
    let expert = train_ngram(&seqs, vocab.clone(), expert_order, 0.01, None).expect("expert");
    let amateur = train_ngram(&seqs, vocab.clone(), 1, 1e-3, None).expect("amateur");
    let prompts = held
        .split("\n\n")
        .map(|p| vocab.encode(p))
        .filter(|ids| ids.len() >= 32)
        .map(|ids| ids[..32].to_vec())
        .take(8)
        .collect();
    Fixture {
        expert,
        amateur,
        prompts,
    }
}

/// Pseudo-random log-weights of length `n`, deterministic in
/// `salt`.
pub fn pseudo_logits(n: usize, salt: u64) -> Vec<f64> {
    let mut x = salt.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 11) as f64 / (1u64 << 53) as f64 * 8.0
        })
        .collect()
}
