//! Contrastive decoding over pluggable language-model backends.
//!
//! The engine searches for continuations that maximize the gap between an
//! expert model's and a weaker amateur model's log-probabilities, restricted
//! at each step to tokens the expert itself finds plausible. Baseline
//! decoders, interpolated n-gram backends, degeneration metrics and an
//! evaluation harness live alongside it.
//!
//! ```
//! use contrastive_core::{ContrastConfig, DecodeParams, UniformModel, cd_search};
//!
//! let expert = UniformModel::with_size(8).unwrap();
//! let amateur = UniformModel::with_size(8).unwrap();
//! let params = DecodeParams { max_new_tokens: 4, ..Default::default() };
//! let out = cd_search(&expert, &amateur, &[1, 2], &ContrastConfig::default(), &params).unwrap();
//! assert_eq!(out.continuation.len(), 4);
//! ```

pub mod contrast;
pub mod decode;
pub mod error;
pub mod harness;
pub mod lm;
pub mod metrics;
pub mod ngram;
pub mod synthetic;
pub mod vocab;

pub use contrast::{cd_scores, plausible_set, pmi_scores, score_step, ContrastConfig, PlausibleSet, ScoredStep, DEFAULT_ALPHA};
pub use decode::{
    beam_search, cd_sample, cd_search, cd_search_weakened, greedy, nucleus_sample, top_k_sample, typical_sample,
    BeamHypothesis, DecodeParams, DecodeResult, Decoder, Diagnostic, StepInfo,
};
pub use error::{BackendError, Error, Result};
pub use lm::{
    apply_temperature, restrict_context, AmateurConfig, ContextWindow, LanguageModel, LogProbs, TableModel,
    UniformModel, WeakenedAmateur,
};
pub use metrics::{coherence, diversity, perplexity, rep_n, BagOfWords, Embedder, MetricsReport, PrecomputedEmbeddings};
pub use ngram::{train_ngram, DynamicNGramModel, NGramModel, PrefixFittedAmateur};
pub use vocab::{tokenize_build, SpecialIds, TokenId, Vocabulary};

/// Engine version recorded alongside evaluation output.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
