use std::cmp::Ordering;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_prompt, check_same_vocab, DecodeParams, DecodeResult, StepInfo};
use crate::contrast::{score_step, ContrastConfig};
use crate::error::{Error, Result};
use crate::lm::{LanguageModel, LogProbs};
use crate::vocab::TokenId;

/// Per-step randomness for the sampling decoders.
///
/// Step `t` (0-based) draws exactly one uniform `u ∈ [0, 1)` from ChaCha8
/// seeded with `seed_from_u64(seed)`, switched to stream `t` at word position
/// 0, taking the top 53 bits of the first `next_u64()` and scaling by 2^-53.
/// The token is then chosen by inverse CDF over the kept candidates in
/// ascending id order. Step draws are independent of one another, so a
/// decode is reproducible from `(inputs, seed)` on any platform.
#[derive(Debug, Clone)]
pub struct StepRng {
    rng: ChaCha8Rng,
}

impl StepRng {
    pub fn new(seed: u64) -> Self {
        StepRng {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, step: u64) -> f64 {
        self.rng.set_stream(step);
        self.rng.set_word_pos(0);
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Inverse-CDF pick: the first index whose running weight sum exceeds
/// `u · total`. Zero-weight entries are never chosen.
pub fn sample_index(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last_positive = i;
        if target < acc {
            return i;
        }
    }
    last_positive
}

/// Finite-probability tokens sorted by probability descending, id ascending.
fn by_probability(d: &LogProbs) -> Vec<TokenId> {
    let lp = d.as_slice();
    let mut ids: Vec<TokenId> = (0..lp.len() as TokenId)
        .filter(|&i| lp[i as usize] > f64::NEG_INFINITY)
        .collect();
    ids.sort_by(|&a, &b| {
        lp[b as usize]
            .partial_cmp(&lp[a as usize])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    ids
}

/// Shortest prefix of `order` whose probability mass reaches `mass`.
fn mass_prefix(d: &LogProbs, order: Vec<TokenId>, mass: f64) -> Vec<TokenId> {
    let mut acc = 0.0;
    let mut kept = Vec::new();
    for id in order {
        acc += d.get(id).exp();
        kept.push(id);
        if acc >= mass {
            break;
        }
    }
    kept
}

/// The `k` most probable tokens (ties: lower id first), ascending by id.
pub fn top_k_filter(d: &LogProbs, k: usize) -> Result<Vec<TokenId>> {
    if k == 0 {
        return Err(Error::invalid("top-k needs k >= 1"));
    }
    let mut kept = by_probability(d);
    kept.truncate(k);
    kept.sort_unstable();
    Ok(kept)
}

/// Smallest probability-sorted prefix with cumulative mass `>= p`.
pub fn nucleus_filter(d: &LogProbs, p: f64) -> Result<Vec<TokenId>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("nucleus p must lie in (0, 1], got {p}")));
    }
    let mut kept = mass_prefix(d, by_probability(d), p);
    kept.sort_unstable();
    Ok(kept)
}

/// Tokens ranked by `|-log p - H|` ascending (ties by id); the smallest
/// prefix reaching `mass` is kept.
pub fn typical_filter(d: &LogProbs, mass: f64) -> Result<Vec<TokenId>> {
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(Error::invalid(format!("typical mass must lie in (0, 1], got {mass}")));
    }
    let lp = d.as_slice();
    let entropy: f64 = lp
        .iter()
        .filter(|x| x.is_finite())
        .map(|&x| -x.exp() * x)
        .sum();
    let dist = |i: TokenId| (-lp[i as usize] - entropy).abs();
    let mut order: Vec<TokenId> = (0..lp.len() as TokenId)
        .filter(|&i| lp[i as usize] > f64::NEG_INFINITY)
        .collect();
    order.sort_by(|&a, &b| dist(a).partial_cmp(&dist(b)).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut kept = mass_prefix(d, order, mass);
    kept.sort_unstable();
    Ok(kept)
}

/// Shared driver for samplers that truncate the model distribution and
/// renormalize.
fn truncated_sampler(
    model: &dyn LanguageModel,
    prompt: &[TokenId],
    params: &DecodeParams,
    filter: impl Fn(&LogProbs) -> Result<Vec<TokenId>>,
) -> Result<DecodeResult> {
    check_prompt(prompt, model.vocab_size())?;
    model.clear_cache();
    let mut rng = StepRng::new(params.seed);
    let mut context = prompt.to_vec();
    let mut steps = Vec::with_capacity(params.max_new_tokens);
    for t in 0..params.max_new_tokens {
        let d = model.next_logprobs(&context)?;
        let kept = filter(&d)?;
        let weights: Vec<f64> = kept.iter().map(|&i| d.get(i).exp()).collect();
        let tok = kept[sample_index(&weights, rng.uniform(t as u64))];
        steps.push(StepInfo {
            token: tok,
            score: d.get(tok),
            candidates: Some(kept.len()),
        });
        context.push(tok);
        if params.stops_at(tok) {
            break;
        }
    }
    Ok(DecodeResult::from_steps(steps))
}

pub fn top_k_sample(model: &dyn LanguageModel, prompt: &[TokenId], k: usize, params: &DecodeParams) -> Result<DecodeResult> {
    if k == 0 {
        return Err(Error::invalid("top-k needs k >= 1"));
    }
    truncated_sampler(model, prompt, params, |d| top_k_filter(d, k))
}

pub fn nucleus_sample(model: &dyn LanguageModel, prompt: &[TokenId], p: f64, params: &DecodeParams) -> Result<DecodeResult> {
    truncated_sampler(model, prompt, params, |d| nucleus_filter(d, p))
}

pub fn typical_sample(model: &dyn LanguageModel, prompt: &[TokenId], mass: f64, params: &DecodeParams) -> Result<DecodeResult> {
    truncated_sampler(model, prompt, params, |d| typical_filter(d, mass))
}

/// Samples each token from the softmax of the contrastive scores over the
/// plausible set. `amateur` must already be weakened.
pub fn cd_sample(
    expert: &dyn LanguageModel,
    amateur: &dyn LanguageModel,
    prompt: &[TokenId],
    cfg: &ContrastConfig,
    params: &DecodeParams,
) -> Result<DecodeResult> {
    cfg.validate()?;
    check_same_vocab(expert, amateur)?;
    check_prompt(prompt, expert.vocab_size())?;
    expert.clear_cache();
    amateur.clear_cache();
    let alpha = cfg.effective_alpha();
    let mut rng = StepRng::new(params.seed);
    let mut context = prompt.to_vec();
    let mut steps = Vec::with_capacity(params.max_new_tokens);
    for t in 0..params.max_new_tokens {
        let step = score_step(expert.next_logprobs(&context)?, amateur.next_logprobs(&context)?, alpha)?;
        let max = step.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = step.scores.iter().map(|&s| (s - max).exp()).collect();
        let tok = sample_index(&weights, rng.uniform(t as u64)) as TokenId;
        steps.push(StepInfo {
            token: tok,
            score: step.scores[tok as usize],
            candidates: Some(step.set_size),
        });
        context.push(tok);
        if params.stops_at(tok) {
            break;
        }
    }
    Ok(DecodeResult::from_steps(steps))
}
