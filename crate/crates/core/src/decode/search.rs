use std::cmp::Ordering;

use log::warn;

use super::{check_prompt, check_same_vocab, DecodeParams, DecodeResult, Diagnostic, StepInfo};
use crate::contrast::{plausible_set, cd_scores, ContrastConfig};
use crate::error::Result;
use crate::lm::{LanguageModel, LogProbs, WeakenedAmateur};
use crate::vocab::TokenId;

/// A partial continuation tracked by beam search.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<TokenId>,
    /// Sum of per-step objective values. For contrastive search this is the
    /// factored contrastive objective.
    pub score_sum: f64,
    pub expert_logp_sum: f64,
    pub finished: bool,
    steps: Vec<StepInfo>,
}

impl BeamHypothesis {
    fn empty() -> Self {
        BeamHypothesis {
            tokens: Vec::new(),
            score_sum: 0.0,
            expert_logp_sum: 0.0,
            finished: false,
            steps: Vec::new(),
        }
    }

    fn extend(&self, token: TokenId, score: f64, expert_logp: f64, candidates: Option<usize>) -> Self {
        let mut tokens = self.tokens.clone();
        tokens.push(token);
        let mut steps = self.steps.clone();
        steps.push(StepInfo {
            token,
            score,
            candidates,
        });
        BeamHypothesis {
            tokens,
            score_sum: self.score_sum + score,
            expert_logp_sum: self.expert_logp_sum + expert_logp,
            finished: false,
            steps,
        }
    }

    /// Higher score first, then the lexicographically smaller sequence.
    fn rank(a: &Self, b: &Self) -> Ordering {
        b.score_sum
            .partial_cmp(&a.score_sum)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.tokens.cmp(&b.tokens))
    }
}

/// What one beam step needs from the objective.
struct Scored {
    scores: Vec<f64>,
    expert: LogProbs,
    set_size: Option<usize>,
    degenerate: bool,
}

trait Objective {
    fn score(&self, context: &[TokenId]) -> Result<Scored>;
}

struct Likelihood<'a> {
    model: &'a dyn LanguageModel,
}

impl Objective for Likelihood<'_> {
    fn score(&self, context: &[TokenId]) -> Result<Scored> {
        let expert = self.model.next_logprobs(context)?;
        Ok(Scored {
            scores: expert.as_slice().to_vec(),
            expert,
            set_size: None,
            degenerate: false,
        })
    }
}

struct Contrastive<'a> {
    expert: &'a dyn LanguageModel,
    amateur: &'a dyn LanguageModel,
    alpha: f64,
}

impl Objective for Contrastive<'_> {
    fn score(&self, context: &[TokenId]) -> Result<Scored> {
        let expert = self.expert.next_logprobs(context)?;
        // The plausible set is fixed before the amateur is consulted.
        let set = plausible_set(&expert, self.alpha)?;
        let amateur = self.amateur.next_logprobs(context)?;
        let step = cd_scores(expert, amateur, &set)?;
        let degenerate = step.is_degenerate();
        Ok(Scored {
            scores: step.scores,
            expert: step.expert,
            set_size: Some(step.set_size),
            degenerate,
        })
    }
}

/// The `k` best finite entries, score descending then id ascending.
fn top_finite(scores: &[f64], k: usize) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = (0..scores.len() as TokenId)
        .filter(|&i| scores[i as usize].is_finite())
        .collect();
    let by_score = |a: &TokenId, b: &TokenId| {
        scores[*b as usize]
            .partial_cmp(&scores[*a as usize])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    if ids.len() > k {
        ids.select_nth_unstable_by(k - 1, by_score);
        ids.truncate(k);
    }
    ids.sort_unstable_by(by_score);
    ids
}

struct BeamOutcome {
    best: BeamHypothesis,
    all_degenerate: bool,
}

fn run_beam(objective: &dyn Objective, prompt: &[TokenId], params: &DecodeParams) -> Result<BeamOutcome> {
    params.validate()?;
    let width = params.beam_width;
    let mut beams = vec![BeamHypothesis::empty()];
    let mut all_degenerate = true;
    let mut context = Vec::with_capacity(prompt.len() + params.max_new_tokens);
    for _ in 0..params.max_new_tokens {
        let mut pool = Vec::with_capacity(width * width);
        for h in &beams {
            context.clear();
            context.extend_from_slice(prompt);
            context.extend_from_slice(&h.tokens);
            let s = objective.score(&context)?;
            all_degenerate &= s.degenerate;
            for tok in top_finite(&s.scores, width) {
                pool.push(h.extend(tok, s.scores[tok as usize], s.expert.get(tok), s.set_size));
            }
        }
        if pool.is_empty() {
            break;
        }
        pool.sort_by(BeamHypothesis::rank);
        // Finished and live hypotheses are only ever compared at equal length:
        // a finished one wins only if it tops this step's pool.
        if params.stops_at(*pool[0].tokens.last().expect("non-empty")) {
            let mut best = pool.swap_remove(0);
            best.finished = true;
            return Ok(BeamOutcome { best, all_degenerate });
        }
        pool.retain(|h| !params.stops_at(*h.tokens.last().expect("non-empty")));
        pool.truncate(width);
        beams = pool;
    }
    let best = beams.into_iter().next().unwrap_or_else(BeamHypothesis::empty);
    Ok(BeamOutcome { best, all_degenerate })
}

fn into_result(outcome: BeamOutcome) -> DecodeResult {
    let mut r = DecodeResult::from_steps(outcome.best.steps);
    r.objective_total = outcome.best.score_sum;
    r
}

/// Picks the most probable token at every step.
pub fn greedy(model: &dyn LanguageModel, prompt: &[TokenId], params: &DecodeParams) -> Result<DecodeResult> {
    check_prompt(prompt, model.vocab_size())?;
    model.clear_cache();
    let mut context = prompt.to_vec();
    let mut steps = Vec::with_capacity(params.max_new_tokens);
    for _ in 0..params.max_new_tokens {
        let d = model.next_logprobs(&context)?;
        let tok = d.argmax();
        steps.push(StepInfo {
            token: tok,
            score: d.get(tok),
            candidates: None,
        });
        context.push(tok);
        if params.stops_at(tok) {
            break;
        }
    }
    Ok(DecodeResult::from_steps(steps))
}

/// Beam search over cumulative log-probability, no length normalization.
pub fn beam_search(model: &dyn LanguageModel, prompt: &[TokenId], params: &DecodeParams) -> Result<DecodeResult> {
    check_prompt(prompt, model.vocab_size())?;
    model.clear_cache();
    let outcome = run_beam(&Likelihood { model }, prompt, params)?;
    Ok(into_result(outcome))
}

/// Beam search over the contrastive objective. `amateur` must already be
/// weakened (temperature, context window); see [`cd_search_weakened`].
pub fn cd_search(
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
    let objective = Contrastive {
        expert,
        amateur,
        alpha: cfg.effective_alpha(),
    };
    let outcome = run_beam(&objective, prompt, params)?;
    let degenerate = outcome.all_degenerate && params.max_new_tokens > 0;
    let mut r = into_result(outcome);
    if degenerate {
        warn!("contrastive scores were zero at every step; expert and amateur are indistinguishable");
        r.diagnostics.push(Diagnostic::DegenerateContrast);
    }
    Ok(r)
}

/// [`cd_search`] with `amateur` wrapped per `cfg.amateur` for this prompt.
pub fn cd_search_weakened(
    expert: &dyn LanguageModel,
    amateur: &dyn LanguageModel,
    prompt: &[TokenId],
    cfg: &ContrastConfig,
    params: &DecodeParams,
) -> Result<DecodeResult> {
    let weak = WeakenedAmateur::new(amateur, cfg.amateur, prompt.len())?;
    cd_search(expert, &weak, prompt, cfg, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::score_step;
    use crate::lm::{AmateurConfig, ContextWindow, TableModel, UniformModel};
    use crate::Error;
    use proptest::prelude::*;

    fn lp(p: &[f64]) -> LogProbs {
        LogProbs::from_probs(p).unwrap()
    }

    fn params(m: usize, width: usize) -> DecodeParams {
        DecodeParams {
            max_new_tokens: m,
            beam_width: width,
            ..Default::default()
        }
    }

    /// A bigram table model over `v` tokens built from a row per previous token.
    fn bigram(rows: &[Vec<f64>]) -> TableModel {
        let v = rows.len();
        let mut m = TableModel::new(v, 1, lp(&vec![1.0; v])).unwrap();
        for (i, r) in rows.iter().enumerate() {
            m.insert(vec![i as TokenId], lp(r)).unwrap();
        }
        m
    }

    /// Every continuation of length `m` over `v` tokens, lexicographic order.
    fn all_sequences(v: usize, m: usize) -> Vec<Vec<TokenId>> {
        let mut out = vec![vec![]];
        for _ in 0..m {
            out = out
                .into_iter()
                .flat_map(|s| {
                    (0..v as TokenId).map(move |t| {
                        let mut s = s.clone();
                        s.push(t);
                        s
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn greedy_constant_argmax() {
        let m = TableModel::new(3, 0, lp(&[0.2, 0.5, 0.3])).unwrap();
        let r = greedy(&m, &[0], &params(7, 1)).unwrap();
        assert_eq!(r.continuation, vec![1; 7]);
        assert_eq!(r, greedy(&m, &[0], &params(7, 1)).unwrap());
    }

    #[test]
    fn greedy_matches_per_step_oracle() {
        let m = bigram(&[vec![0.1, 0.6, 0.3], vec![0.2, 0.2, 0.6], vec![0.7, 0.1, 0.2]]);
        let r = greedy(&m, &[0], &params(6, 1)).unwrap();
        // Oracle: walk the table by hand, taking the largest entry each time.
        let rows = [[0.1, 0.6, 0.3], [0.2, 0.2, 0.6], [0.7, 0.1, 0.2]];
        let mut prev = 0usize;
        let mut want = Vec::new();
        for _ in 0..6 {
            let next = (0..3).fold(0, |b, j| if rows[prev][j] > rows[prev][b] { j } else { b });
            want.push(next as TokenId);
            prev = next;
        }
        assert_eq!(r.continuation, want);
    }

    #[test]
    fn greedy_stops_at_eos() {
        let m = bigram(&[vec![0.1, 0.9], vec![0.9, 0.1]]);
        let mut p = params(10, 1);
        p.eos_stops = true;
        p.eos_id = Some(0);
        let r = greedy(&m, &[0], &p).unwrap();
        assert_eq!(r.continuation, vec![1, 0]);
        p.eos_stops = false;
        assert_eq!(greedy(&m, &[0], &p).unwrap().continuation.len(), 10);
    }

    #[test]
    fn empty_prompt_rejected() {
        let u = UniformModel::with_size(3).unwrap();
        assert!(matches!(greedy(&u, &[], &params(2, 1)), Err(Error::InvalidParameter(_))));
        assert!(beam_search(&u, &[7], &params(2, 1)).is_err());
        assert!(beam_search(&u, &[0], &params(2, 0)).is_err());
    }

    #[test]
    fn beam_zero_length() {
        let u = UniformModel::with_size(3).unwrap();
        let r = beam_search(&u, &[0], &params(0, 3)).unwrap();
        assert!(r.continuation.is_empty());
        assert_eq!(r.objective_total, 0.0);
    }

    #[test]
    fn beam_exhaustive_two_steps() {
        // From token 2, greedy takes 2 twice (0.16); the best path is 1 -> 2 (0.3 * 0.9).
        let m = bigram(&[vec![0.5, 0.45, 0.05], vec![0.05, 0.05, 0.9], vec![0.3, 0.3, 0.4]]);
        let r = beam_search(&m, &[2], &params(2, 3)).unwrap();
        let logp = |s: &[TokenId]| {
            let mut ctx = vec![2];
            let mut t = 0.0;
            for &x in s {
                t += m.next_logprobs(&ctx).unwrap().get(x);
                ctx.push(x);
            }
            t
        };
        let best = all_sequences(3, 2)
            .into_iter()
            .max_by(|a, b| logp(a).partial_cmp(&logp(b)).unwrap().then(b.cmp(a)))
            .unwrap();
        assert_eq!(r.continuation, best);
        assert_eq!(best, vec![1, 2]);
        assert!((r.objective_total - logp(&best)).abs() < 1e-12);
        assert_eq!(greedy(&m, &[2], &params(2, 1)).unwrap().continuation, vec![2, 2]);
    }

    #[test]
    fn beam_eos_compares_at_equal_length() {
        // eos = 0. After the prompt, token 0 (eos) has 0.6: the finished
        // hypothesis tops the first step and wins.
        let m = bigram(&[vec![0.6, 0.4], vec![0.6, 0.4]]);
        let mut p = params(5, 2);
        p.eos_stops = true;
        p.eos_id = Some(0);
        let r = beam_search(&m, &[1], &p).unwrap();
        assert_eq!(r.continuation, vec![0]);
    }

    #[test]
    fn cd_uniform_amateur_equals_beam() {
        let m = bigram(&[vec![0.5, 0.45, 0.05], vec![0.05, 0.05, 0.9], vec![0.3, 0.3, 0.4]]);
        let u = UniformModel::with_size(3).unwrap();
        let cfg = ContrastConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let a = cd_search(&m, &u, &[2], &cfg, &params(4, 3)).unwrap();
        let b = beam_search(&m, &[2], &params(4, 3)).unwrap();
        assert_eq!(a.continuation, b.continuation);
    }

    #[test]
    fn cd_self_contrast_warns() {
        let m = bigram(&[vec![0.3, 0.3, 0.4], vec![0.5, 0.25, 0.25], vec![0.2, 0.4, 0.4]]);
        let r = cd_search(&m, &m, &[0], &ContrastConfig::default(), &params(5, 2)).unwrap();
        assert_eq!(r.diagnostics, vec![Diagnostic::DegenerateContrast]);
        assert!(r.steps.iter().all(|s| s.score == 0.0));
        // all-zero objective: tie-break picks the lowest plausible id each step
        let mut ctx = vec![0];
        for &t in &r.continuation {
            let set = plausible_set(&m.next_logprobs(&ctx).unwrap(), 0.1).unwrap();
            assert_eq!(t, set.members()[0]);
            ctx.push(t);
        }
    }

    #[test]
    fn cd_vocab_mismatch() {
        let a = UniformModel::with_size(3).unwrap();
        let b = UniformModel::with_size(4).unwrap();
        assert!(matches!(
            cd_search(&a, &b, &[0], &ContrastConfig::default(), &params(2, 2)),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn cd_hand_built_exhaustive() {
        // 4-token bigram expert and amateur, beam 2, α = 0.1, 2 steps.
        let expert = bigram(&[
            vec![0.40, 0.30, 0.25, 0.05],
            vec![0.10, 0.60, 0.28, 0.02],
            vec![0.50, 0.20, 0.20, 0.10],
            vec![0.25, 0.25, 0.25, 0.25],
        ]);
        let amateur = bigram(&[
            vec![0.70, 0.10, 0.15, 0.05],
            vec![0.20, 0.70, 0.05, 0.05],
            vec![0.30, 0.30, 0.30, 0.10],
            vec![0.10, 0.20, 0.30, 0.40],
        ]);
        let cfg = ContrastConfig::default();
        let r = cd_search(&expert, &amateur, &[0], &cfg, &params(2, 2)).unwrap();
        let total = |s: &[TokenId]| {
            let mut ctx = vec![0];
            let mut t = 0.0;
            for &x in s {
                let st = score_step(
                    expert.next_logprobs(&ctx).unwrap(),
                    amateur.next_logprobs(&ctx).unwrap(),
                    0.1,
                )
                .unwrap();
                t += st.scores[x as usize];
                ctx.push(x);
            }
            t
        };
        let seqs = all_sequences(4, 2);
        assert_eq!(seqs.len(), 16);
        let best = seqs
            .into_iter()
            .filter(|s| total(s).is_finite())
            .max_by(|a, b| total(a).partial_cmp(&total(b)).unwrap().then(b.cmp(a)))
            .unwrap();
        assert_eq!(r.continuation, best);
        assert!((r.objective_total - total(&best)).abs() < 1e-12);
    }

    #[test]
    fn cd_mmi_reduction_scores() {
        // Trigram-ish table keyed on the last two tokens; same model as
        // expert and amateur, amateur sees only the last prompt token.
        let mut m = TableModel::new(3, 2, lp(&[0.2, 0.3, 0.5])).unwrap();
        m.insert(vec![0, 1], lp(&[0.6, 0.3, 0.1])).unwrap();
        m.insert(vec![1, 2], lp(&[0.1, 0.1, 0.8])).unwrap();
        m.insert(vec![2, 2], lp(&[0.3, 0.4, 0.3])).unwrap();
        let prompt = [0, 0, 1];
        let cfg = ContrastConfig {
            alpha: 0.0,
            amateur: AmateurConfig {
                temperature: 1.0,
                context_window: ContextWindow::Last(1),
            },
            plausibility_filter: true,
        };
        let r = cd_search_weakened(&m, &m, &prompt, &cfg, &params(4, 1)).unwrap();
        let mut ctx = prompt.to_vec();
        for s in &r.steps {
            let full = m.next_logprobs(&ctx).unwrap().get(s.token);
            let mut trunc = vec![*prompt.last().unwrap()];
            trunc.extend_from_slice(&ctx[prompt.len()..]);
            let part = m.next_logprobs(&trunc).unwrap().get(s.token);
            assert_eq!(s.score, full - part);
            ctx.push(s.token);
        }
    }

    fn random_bigram(v: usize) -> impl Strategy<Value = TableModel> {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, v), v).prop_map(|rows| bigram(&rows))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn beam_width_one_is_greedy(m in random_bigram(5), start in 0u32..5, len in 1usize..8) {
            let a = beam_search(&m, &[start], &params(len, 1)).unwrap();
            let b = greedy(&m, &[start], &params(len, 1)).unwrap();
            prop_assert_eq!(a.continuation, b.continuation);
        }

        #[test]
        fn lengths_exact_without_eos(m in random_bigram(4), len in 0usize..10, w in 1usize..4) {
            prop_assert_eq!(beam_search(&m, &[0], &params(len, w)).unwrap().continuation.len(), len);
            prop_assert_eq!(greedy(&m, &[0], &params(len, w)).unwrap().continuation.len(), len);
            let cd = cd_search(&m, &UniformModel::with_size(4).unwrap(), &[0], &ContrastConfig::default(), &params(len, w)).unwrap();
            prop_assert_eq!(cd.continuation.len(), len);
        }

        #[test]
        fn cd_objective_replays(e in random_bigram(5), a in random_bigram(5), len in 1usize..8, w in 1usize..4) {
            let cfg = ContrastConfig::default();
            let r = cd_search(&e, &a, &[1], &cfg, &params(len, w)).unwrap();
            let mut ctx = vec![1];
            let mut total = 0.0;
            for &t in &r.continuation {
                let st = score_step(e.next_logprobs(&ctx).unwrap(), a.next_logprobs(&ctx).unwrap(), 0.1).unwrap();
                prop_assert!(st.scores[t as usize].is_finite());
                total += st.scores[t as usize];
                ctx.push(t);
            }
            prop_assert!((total - r.objective_total).abs() <= 1e-9);
        }
    }
}
