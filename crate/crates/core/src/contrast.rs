//! The contrastive objective: the adaptive plausibility filter over the
//! expert distribution, the per-token expert/amateur log-ratio, and the
//! pointwise-mutual-information view of the same quantity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{AmateurConfig, LogProbs};
use crate::vocab::TokenId;

/// Default plausibility threshold.
pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub alpha: f64,
    pub amateur: AmateurConfig,
    /// When false every token with finite expert log-prob is admitted, as
    /// if `alpha` were 0. Exists only for the plausibility ablation.
    #[serde(default = "default_true")]
    pub plausibility_filter: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            alpha: DEFAULT_ALPHA,
            amateur: AmateurConfig::default(),
            plausibility_filter: true,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        self.amateur.validate()
    }

    /// The α actually applied when building plausible sets.
    pub fn effective_alpha(&self) -> f64 {
        if self.plausibility_filter {
            self.alpha
        } else {
            0.0
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// Tokens whose expert probability is at least α times the maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct PlausibleSet {
    members: Vec<TokenId>,
    threshold: f64,
}

impl PlausibleSet {
    /// Member ids in ascending order.
    pub fn members(&self) -> &[TokenId] {
        &self.members
    }

    /// Log-domain cutoff: `ln α + max logp`.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.members.binary_search(&id).is_ok()
    }
}

/// `{i : logp_i >= ln α + max_j logp_j}`, compared exactly. For α = 0 this is
/// every token with finite log-prob.
pub fn plausible_set(expert: &LogProbs, alpha: f64) -> Result<PlausibleSet> {
    check_alpha(alpha)?;
    let threshold = alpha.ln() + expert.max();
    let members = expert
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &lp)| lp > f64::NEG_INFINITY && lp >= threshold)
        .map(|(i, _)| i as TokenId)
        .collect();
    Ok(PlausibleSet { members, threshold })
}

/// Per-step contrastive scores over the whole vocabulary.
#[derive(Debug, Clone)]
pub struct ScoredStep {
    /// `expert - amateur` on plausible tokens, `-inf` elsewhere.
    pub scores: Vec<f64>,
    pub set_size: usize,
    pub expert: LogProbs,
    pub amateur: LogProbs,
}

impl ScoredStep {
    /// Best-scoring token; lowest id on ties.
    pub fn argmax(&self) -> TokenId {
        crate::lm::argmax(&self.scores).expect("plausible set is never empty")
    }

    /// True when every finite score is exactly zero.
    pub fn is_degenerate(&self) -> bool {
        self.scores
            .iter()
            .filter(|s| s.is_finite())
            .all(|&s| s == 0.0)
    }
}

pub fn cd_scores(expert: LogProbs, amateur: LogProbs, set: &PlausibleSet) -> Result<ScoredStep> {
    if expert.len() != amateur.len() {
        return Err(Error::ContractViolation(format!(
            "expert vocabulary has {} tokens, amateur {}",
            expert.len(),
            amateur.len()
        )));
    }
    let mut scores = vec![f64::NEG_INFINITY; expert.len()];
    for &i in set.members() {
        scores[i as usize] = expert.get(i) - amateur.get(i);
    }
    Ok(ScoredStep {
        scores,
        set_size: set.len(),
        expert,
        amateur,
    })
}

/// Builds the plausible set from the expert alone, then scores it.
pub fn score_step(expert: LogProbs, amateur: LogProbs, alpha: f64) -> Result<ScoredStep> {
    let set = plausible_set(&expert, alpha)?;
    cd_scores(expert, amateur, &set)
}

/// `log p_exp - log(0.5 p_exp + 0.5 p_ama)` per token, in log space.
pub fn pmi_scores(expert: &LogProbs, amateur: &LogProbs) -> Result<Vec<f64>> {
    if expert.len() != amateur.len() {
        return Err(Error::ContractViolation(
            "expert and amateur vocabularies differ".into(),
        ));
    }
    Ok(expert
        .as_slice()
        .iter()
        .zip(amateur.as_slice())
        .map(|(&e, &a)| pmi_one(e, a))
        .collect())
}

fn pmi_one(e: f64, a: f64) -> f64 {
    if e == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    // ln(0.5 e^e + 0.5 e^a) = ln 0.5 + max + ln(1 + e^{min - max})
    let (hi, lo) = if e >= a { (e, a) } else { (a, e) };
    let mix = 0.5f64.ln() + hi + (lo - hi).exp().ln_1p();
    e - mix
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lp(p: &[f64]) -> LogProbs {
        LogProbs::from_probs(p).unwrap()
    }

    /// Scans every token against the threshold in probability space.
    fn scan(p: &[f64], alpha: f64) -> Vec<TokenId> {
        let max = p.iter().cloned().fold(0.0, f64::max);
        (0..p.len())
            .filter(|&i| p[i] > 0.0 && p[i] >= alpha * max)
            .map(|i| i as TokenId)
            .collect()
    }

    #[test]
    fn inclusive_threshold_example() {
        // 0.05 sits exactly on 0.1 * 0.5 in probability space; the log-domain
        // comparison must still admit it.
        let d = LogProbs::new(vec![0.5f64.ln(), 0.3f64.ln(), 0.15f64.ln(), 0.05f64.ln()]).unwrap();
        let s = plausible_set(&d, 0.1).unwrap();
        assert_eq!(s.members(), &[0, 1, 2, 3]);
        assert_eq!(scan(&[0.5, 0.3, 0.15, 0.05], 0.1), vec![0, 1, 2, 3]);
    }

    #[test]
    fn alpha_one_is_argmax_tie_set() {
        let d = lp(&[0.4, 0.1, 0.4, 0.1]);
        assert_eq!(plausible_set(&d, 1.0).unwrap().members(), &[0, 2]);
    }

    #[test]
    fn alpha_zero_excludes_support_gaps() {
        let d = lp(&[0.5, 0.0, 0.5]);
        assert_eq!(plausible_set(&d, 0.0).unwrap().members(), &[0, 2]);
    }

    #[test]
    fn alpha_out_of_range() {
        let d = lp(&[0.5, 0.5]);
        assert!(plausible_set(&d, -0.1).is_err());
        assert!(plausible_set(&d, 1.1).is_err());
        assert!(plausible_set(&d, f64::NAN).is_err());
    }

    #[test]
    fn false_positive_fixture() {
        // "NetMessage": p_exp = 3e-9, p_ama = 8e-14; the expert's top token has 0.1.
        let (p_exp, p_ama): (f64, f64) = (3e-9, 8e-14);
        let contrast = p_exp.ln() - p_ama.ln();
        assert!((contrast - 10.532).abs() < 0.01);
        let mut expert = vec![0.1, p_exp];
        let rest = 1.0 - 0.1 - p_exp;
        expert.extend(std::iter::repeat(rest / 9.0).take(9));
        let mut amateur = vec![0.2, p_ama];
        amateur.extend(std::iter::repeat((1.0 - 0.2 - p_ama) / 9.0).take(9));
        let step = score_step(lp(&expert), lp(&amateur), 0.1).unwrap();
        assert!(!step.scores[1].is_finite());
        let unfiltered = score_step(lp(&expert), lp(&amateur), 0.0).unwrap();
        assert!((unfiltered.scores[1] - contrast).abs() < 1e-9);
        assert_eq!(unfiltered.argmax(), 1);
    }

    #[test]
    fn worked_example_scores() {
        let step = score_step(lp(&[0.5, 0.3, 0.2]), lp(&[0.7, 0.2, 0.1]), 0.4).unwrap();
        let want = [(0.5f64 / 0.7).ln(), (0.3f64 / 0.2).ln(), (0.2f64 / 0.1).ln()];
        for (g, w) in step.scores.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
        assert!((step.scores[0] + 0.336).abs() < 1e-3);
        assert!((step.scores[1] - 0.405).abs() < 1e-3);
        assert!((step.scores[2] - 0.693).abs() < 1e-3);
        assert_eq!(step.argmax(), 2);
    }

    #[test]
    fn self_contrast_is_zero() {
        let d = lp(&[0.3, 0.3, 0.4]);
        let step = score_step(d.clone(), d, 0.1).unwrap();
        assert!(step.is_degenerate());
        assert_eq!(step.argmax(), 0);
    }

    #[test]
    fn mismatched_vocab() {
        let set = plausible_set(&lp(&[0.5, 0.5]), 0.1).unwrap();
        assert!(matches!(
            cd_scores(lp(&[0.5, 0.5]), lp(&[0.2, 0.3, 0.5]), &set),
            Err(Error::ContractViolation(_))
        ));
        assert!(pmi_scores(&lp(&[0.5, 0.5]), &lp(&[1.0])).is_err());
    }

    #[test]
    fn pmi_examples() {
        let pmi = pmi_scores(&lp(&[0.6, 0.4]), &lp(&[0.2, 0.8])).unwrap();
        assert!((pmi[0] - (0.6f64 / 0.4).ln()).abs() < 1e-12);
        let same = pmi_scores(&lp(&[0.3, 0.7]), &lp(&[0.3, 0.7])).unwrap();
        assert!(same.iter().all(|x| x.abs() < 1e-15));
        let e = LogProbs::new(vec![0.5f64.ln(), 0.5f64.ln()]).unwrap();
        let a = LogProbs::new(vec![-800.0, 0.0]).unwrap();
        let lim = pmi_scores(&e, &a).unwrap();
        assert!((lim[0] - 2f64.ln()).abs() < 1e-12);
    }

    fn dist(v: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(1e-4f64..1.0, v)
    }

    proptest! {
        #[test]
        fn set_contains_argmax_and_respects_threshold(p in dist(20), alpha in 0.0f64..=1.0) {
            let d = lp(&p);
            let s = plausible_set(&d, alpha).unwrap();
            prop_assert!(s.contains(d.argmax()));
            let probs = d.probs();
            let max = probs.iter().cloned().fold(0.0, f64::max);
            for &m in s.members() {
                prop_assert!(probs[m as usize] >= alpha * max * (1.0 - 1e-12));
            }
        }

        #[test]
        fn set_monotone_in_alpha(p in dist(20), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let d = lp(&p);
            let big = plausible_set(&d, lo).unwrap();
            let small = plausible_set(&d, hi).unwrap();
            for m in small.members() {
                prop_assert!(big.contains(*m));
            }
        }

        #[test]
        fn dominant_token_forces_singleton(v in 2usize..40, alpha in 0.01f64..0.9, amateur in dist(40)) {
            // Mass q on token 0, the rest spread evenly: the others get
            // (1-q)/(v-1), which falls below α q exactly when q > 1/(1 + α(v-1)).
            let vf = v as f64;
            let bound = 1.0 / (1.0 + alpha * (vf - 1.0));
            let q = bound + (1.0 - bound) / 2.0;
            let mut p = vec![(1.0 - q) / (vf - 1.0); v];
            p[0] = q;
            let e = lp(&p);
            let a = lp(&amateur[..v]);
            let step = score_step(e.clone(), a, alpha).unwrap();
            prop_assert_eq!(step.set_size, 1);
            prop_assert_eq!(step.argmax(), e.argmax());
        }
    }
}
