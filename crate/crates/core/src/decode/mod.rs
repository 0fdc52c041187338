//! Decoders: contrastive beam search and contrastive sampling, plus the
//! greedy, beam, top-k, nucleus and typical baselines.
//!
//! All argmax decisions break ties toward the lowest token id, and beam
//! pruning breaks score ties toward the lexicographically smaller sequence.
//! Sampling decoders are pure functions of their inputs and the seed; see
//! [`StepRng`] for the exact stream rule.

mod sample;
mod search;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::contrast::ContrastConfig;
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::vocab::TokenId;

pub use sample::{
    cd_sample, nucleus_filter, nucleus_sample, sample_index, top_k_filter, top_k_sample,
    typical_filter, typical_sample, StepRng,
};
pub use search::{beam_search, cd_search, cd_search_weakened, greedy, BeamHypothesis};

pub const DEFAULT_MAX_NEW_TOKENS: usize = 256;
pub const DEFAULT_BEAM_WIDTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub max_new_tokens: usize,
    pub beam_width: usize,
    pub seed: u64,
    /// Stop once `eos_id` is produced. Has no effect without an `eos_id`.
    pub eos_stops: bool,
    #[serde(default)]
    pub eos_id: Option<TokenId>,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            beam_width: DEFAULT_BEAM_WIDTH,
            seed: 0,
            eos_stops: false,
            eos_id: None,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::invalid("beam width must be at least 1"));
        }
        Ok(())
    }

    fn stops_at(&self, tok: TokenId) -> bool {
        self.eos_stops && self.eos_id == Some(tok)
    }
}

/// One generated token with its score under the decoder's objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub token: TokenId,
    pub score: f64,
    /// Plausible-set size for contrastive decoders, kept-set size for
    /// truncation samplers.
    pub candidates: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Diagnostic {
    /// Every contrastive score the search looked at was exactly zero, so the
    /// output was decided by tie-breaking alone. Usually means the expert and
    /// amateur are the same model.
    DegenerateContrast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub continuation: Vec<TokenId>,
    pub steps: Vec<StepInfo>,
    pub objective_total: f64,
    pub diagnostics: Vec<Diagnostic>,
}

impl DecodeResult {
    fn from_steps(steps: Vec<StepInfo>) -> Self {
        DecodeResult {
            continuation: steps.iter().map(|s| s.token).collect(),
            objective_total: steps.iter().map(|s| s.score).sum(),
            steps,
            diagnostics: Vec::new(),
        }
    }
}

/// Named decoder plus its own hyperparameters. Shared search parameters live
/// in [`DecodeParams`] and [`ContrastConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Decoder {
    Greedy,
    Beam,
    TopK { k: usize },
    Nucleus { p: f64 },
    Typical { mass: f64 },
    CdSearch,
    CdSample,
}

impl Decoder {
    pub fn is_contrastive(&self) -> bool {
        matches!(self, Decoder::CdSearch | Decoder::CdSample)
    }

    /// Runs the decoder. `amateur` is the unweakened base model; the
    /// contrastive decoders wrap it according to `contrast.amateur`.
    pub fn run(
        &self,
        expert: &dyn LanguageModel,
        amateur: Option<&dyn LanguageModel>,
        prompt: &[TokenId],
        contrast: &ContrastConfig,
        params: &DecodeParams,
    ) -> Result<DecodeResult> {
        let need_amateur = || {
            amateur.ok_or_else(|| Error::invalid(format!("decoder {self} needs an amateur model")))
        };
        match *self {
            Decoder::Greedy => greedy(expert, prompt, params),
            Decoder::Beam => beam_search(expert, prompt, params),
            Decoder::TopK { k } => top_k_sample(expert, prompt, k, params),
            Decoder::Nucleus { p } => nucleus_sample(expert, prompt, p, params),
            Decoder::Typical { mass } => typical_sample(expert, prompt, mass, params),
            Decoder::CdSearch => cd_search_weakened(expert, need_amateur()?, prompt, contrast, params),
            Decoder::CdSample => {
                let amateur = crate::lm::WeakenedAmateur::new(need_amateur()?, contrast.amateur, prompt.len())?;
                cd_sample(expert, &amateur, prompt, contrast, params)
            }
        }
    }
}

impl fmt::Display for Decoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decoder::Greedy => f.write_str("greedy"),
            Decoder::Beam => f.write_str("beam"),
            Decoder::TopK { k } => write!(f, "top-k-{k}"),
            Decoder::Nucleus { p } => write!(f, "nucleus-{p}"),
            Decoder::Typical { mass } => write!(f, "typical-{mass}"),
            Decoder::CdSearch => f.write_str("cd-search"),
            Decoder::CdSample => f.write_str("cd-sample"),
        }
    }
}

impl std::str::FromStr for Decoder {
    type Err = Error;

    /// Accepts `greedy`, `beam`, `top-k[=K]`, `nucleus[=P]`, `typical[=MASS]`,
    /// `cd`/`cd-search` and `cd-sample`. Defaults: k=50, p=0.95, mass=0.95.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once('=') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |default: f64| -> Result<f64> {
            arg.map(|a| a.parse::<f64>().map_err(|_| Error::invalid(format!("bad decoder argument in {s:?}"))))
                .unwrap_or(Ok(default))
        };
        Ok(match name.replace('_', "-").as_str() {
            "greedy" => Decoder::Greedy,
            "beam" => Decoder::Beam,
            "top-k" | "topk" => Decoder::TopK { k: num(50.0)? as usize },
            "nucleus" | "top-p" => Decoder::Nucleus { p: num(0.95)? },
            "typical" => Decoder::Typical { mass: num(0.95)? },
            "cd" | "cd-search" => Decoder::CdSearch,
            "cd-sample" => Decoder::CdSample,
            _ => return Err(Error::invalid(format!("unknown decoder {s:?}"))),
        })
    }
}

fn check_prompt(prompt: &[TokenId], vocab_size: usize) -> Result<()> {
    if prompt.is_empty() {
        return Err(Error::invalid("prompt must not be empty"));
    }
    if let Some(bad) = prompt.iter().find(|&&t| t as usize >= vocab_size) {
        return Err(Error::ContractViolation(format!(
            "prompt token {bad} outside vocabulary of size {vocab_size}"
        )));
    }
    Ok(())
}

fn check_same_vocab(expert: &dyn LanguageModel, amateur: &dyn LanguageModel) -> Result<()> {
    if expert.vocab_size() != amateur.vocab_size() {
        return Err(Error::ContractViolation(format!(
            "expert vocabulary has {} tokens, amateur {}",
            expert.vocab_size(),
            amateur.vocab_size()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoder_names_parse() {
        assert_eq!("greedy".parse::<Decoder>().unwrap(), Decoder::Greedy);
        assert_eq!("top-k=10".parse::<Decoder>().unwrap(), Decoder::TopK { k: 10 });
        assert_eq!("nucleus".parse::<Decoder>().unwrap(), Decoder::Nucleus { p: 0.95 });
        assert_eq!("typical=0.2".parse::<Decoder>().unwrap(), Decoder::Typical { mass: 0.2 });
        assert_eq!("cd".parse::<Decoder>().unwrap(), Decoder::CdSearch);
        assert_eq!("cd_sample".parse::<Decoder>().unwrap(), Decoder::CdSample);
        assert!("viterbi".parse::<Decoder>().is_err());
        assert!("top-k=x".parse::<Decoder>().is_err());
    }

    #[test]
    fn decoder_json_shape() {
        let s = serde_json::to_string(&Decoder::TopK { k: 50 }).unwrap();
        assert_eq!(s, r#"{"name":"top_k","k":50}"#);
        assert_eq!(serde_json::from_str::<Decoder>(r#"{"name":"cd_search"}"#).unwrap(), Decoder::CdSearch);
    }
}
