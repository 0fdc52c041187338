//! The language-model interface and the distribution transforms shared by
//! every decoder: temperature, amateur context restriction, and the uniform
//! model.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

/// Tolerance on `logsumexp == 0` for a vector to count as normalized.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Numerically stable `ln Σ exp(x)`. Returns `-inf` for an empty slice or one
/// that is entirely `-inf`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// One next-token distribution in natural-log space.
#[derive(Clone, PartialEq)]
pub struct LogProbs(Vec<f64>);

impl LogProbs {
    /// Wraps an already-normalized vector, checking the invariants.
    pub fn new(logp: Vec<f64>) -> Result<Self> {
        let lp = LogProbs(logp);
        lp.validate()?;
        Ok(lp)
    }

    /// Normalizes arbitrary log-weights (`-inf` entries stay `-inf`).
    pub fn from_log_weights(mut w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::invalid("log-weights contain NaN or +inf"));
        }
        let z = logsumexp(&w);
        if !z.is_finite() {
            return Err(Error::invalid("log-weights have no finite entry"));
        }
        for x in &mut w {
            *x -= z;
        }
        Ok(LogProbs(w))
    }

    /// From plain probabilities; they are renormalized, zeros become `-inf`.
    pub fn from_probs(p: &[f64]) -> Result<Self> {
        if p.iter().any(|&x| x.is_nan() || x < 0.0) {
            return Err(Error::invalid("probabilities must be non-negative"));
        }
        Self::from_log_weights(p.iter().map(|x| x.ln()).collect())
    }

    pub(crate) fn from_raw_unchecked(logp: Vec<f64>) -> Self {
        LogProbs(logp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::invalid("empty distribution"));
        }
        if self.0.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::invalid("distribution contains NaN or +inf"));
        }
        let z = logsumexp(&self.0);
        if z.is_nan() || z.abs() > NORMALIZATION_TOL {
            return Err(Error::invalid(format!(
                "distribution not normalized: logsumexp = {z}"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, id: TokenId) -> f64 {
        self.0[id as usize]
    }

    pub fn probs(&self) -> Vec<f64> {
        self.0.iter().map(|x| x.exp()).collect()
    }

    /// Highest-probability token; ties go to the lowest id.
    pub fn argmax(&self) -> TokenId {
        argmax(&self.0).expect("distribution is non-empty")
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl fmt::Debug for LogProbs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("LogProbs").field(&self.0).finish()
    }
}

/// Index of the largest value, lowest index on ties. `None` if the slice is
/// empty or all entries are NaN.
pub fn argmax(xs: &[f64]) -> Option<TokenId> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in xs.iter().enumerate() {
        if x.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i as TokenId)
}

/// A conditional next-token distribution provider over a fixed vocabulary.
///
/// Implementations must be deterministic: the same context always yields the
/// same vector.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbs>;

    /// Drops any per-decode response cache. Decoders call this once at the
    /// start of each invocation.
    fn clear_cache(&self) {}
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbs> {
        (**self).next_logprobs(context)
    }

    fn clear_cache(&self) {
        (**self).clear_cache()
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for Box<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbs> {
        (**self).next_logprobs(context)
    }

    fn clear_cache(&self) {
        (**self).clear_cache()
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbs> {
        (**self).next_logprobs(context)
    }

    fn clear_cache(&self) {
        (**self).clear_cache()
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "temperature must be positive and finite, got {tau}"
        )))
    }
}

/// Renormalizes `exp(logp / tau)`. `-inf` entries stay `-inf`.
pub fn apply_temperature(d: &LogProbs, tau: f64) -> Result<LogProbs> {
    check_temperature(tau)?;
    if tau == 1.0 {
        return Ok(d.clone());
    }
    let scaled: Vec<f64> = d.as_slice().iter().map(|x| x / tau).collect();
    LogProbs::from_log_weights(scaled)
}

/// The last `min(window, len)` tokens of `context`.
pub fn restrict_context(context: &[TokenId], window: usize) -> &[TokenId] {
    let start = context.len().saturating_sub(window);
    &context[start..]
}

/// How much of the prompt the amateur may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextWindow {
    Unlimited,
    Last(usize),
}

impl ContextWindow {
    pub fn validate(self) -> Result<()> {
        match self {
            ContextWindow::Last(0) => Err(Error::invalid("context window must be at least 1")),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ContextWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextWindow::Unlimited => f.write_str("unlimited"),
            ContextWindow::Last(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for ContextWindow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("unlimited") {
            return Ok(ContextWindow::Unlimited);
        }
        let n: usize = s
            .parse()
            .map_err(|_| Error::invalid(format!("bad context window {s:?}")))?;
        let w = ContextWindow::Last(n);
        w.validate()?;
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmateurConfig {
    pub temperature: f64,
    pub context_window: ContextWindow,
}

impl Default for AmateurConfig {
    fn default() -> Self {
        AmateurConfig {
            temperature: 1.0,
            context_window: ContextWindow::Unlimited,
        }
    }
}

impl AmateurConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        self.context_window.validate()
    }
}

/// An amateur weakened by temperature and by hiding all but the last few
/// prompt tokens. Generated tokens (everything past `prompt_len`) are always
/// visible.
pub struct WeakenedAmateur<M> {
    base: M,
    cfg: AmateurConfig,
    prompt_len: usize,
}

impl<M: LanguageModel> WeakenedAmateur<M> {
    pub fn new(base: M, cfg: AmateurConfig, prompt_len: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(WeakenedAmateur {
            base,
            cfg,
            prompt_len,
        })
    }

    /// The context actually handed to the base model.
    pub fn visible_context(&self, context: &[TokenId]) -> Vec<TokenId> {
        let split = self.prompt_len.min(context.len());
        let (prompt, generated) = context.split_at(split);
        let prompt = match self.cfg.context_window {
            ContextWindow::Unlimited => prompt,
            ContextWindow::Last(w) => restrict_context(prompt, w),
        };
        let mut visible = Vec::with_capacity(prompt.len() + generated.len());
        visible.extend_from_slice(prompt);
        visible.extend_from_slice(generated);
        visible
    }
}

impl<M: LanguageModel> LanguageModel for WeakenedAmateur<M> {
    fn vocab_size(&self) -> usize {
        self.base.vocab_size()
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbs> {
        let d = match self.cfg.context_window {
            ContextWindow::Unlimited => self.base.next_logprobs(context)?,
            ContextWindow::Last(_) => self.base.next_logprobs(&self.visible_context(context))?,
        };
        apply_temperature(&d, self.cfg.temperature)
    }

    fn clear_cache(&self) {
        self.base.clear_cache()
    }
}

/// Shorthand for [`WeakenedAmateur::new`].
pub fn weakened_amateur<M: LanguageModel>(
    base: M,
    cfg: AmateurConfig,
    prompt_len: usize,
) -> Result<WeakenedAmateur<M>> {
    WeakenedAmateur::new(base, cfg, prompt_len)
}

/// Context-independent uniform distribution.
#[derive(Debug, Clone)]
pub struct UniformModel {
    size: usize,
}

impl UniformModel {
    pub fn new(vocab: &Vocabulary) -> Result<Self> {
        Self::with_size(vocab.len())
    }

    pub fn with_size(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("uniform model needs a non-empty vocabulary"));
        }
        Ok(UniformModel { size })
    }
}

impl LanguageModel for UniformModel {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn next_logprobs(&self, _context: &[TokenId]) -> Result<LogProbs> {
        let v = -(self.size as f64).ln();
        Ok(LogProbs::from_raw_unchecked(vec![v; self.size]))
    }
}

/// A fixed table of distributions keyed by the last `order - 1` tokens, with a
/// fallback for unseen keys. Handy for hand-built toy models.
#[derive(Debug, Clone)]
pub struct TableModel {
    size: usize,
    key_len: usize,
    table: std::collections::HashMap<Vec<TokenId>, LogProbs>,
    fallback: LogProbs,
}

impl TableModel {
    pub fn new(size: usize, key_len: usize, fallback: LogProbs) -> Result<Self> {
        if fallback.len() != size {
            return Err(Error::ContractViolation("fallback length mismatch".into()));
        }
        Ok(TableModel {
            size,
            key_len,
            table: Default::default(),
            fallback,
        })
    }

    pub fn insert(&mut self, key: Vec<TokenId>, d: LogProbs) -> Result<()> {
        if d.len() != self.size || key.len() != self.key_len {
            return Err(Error::ContractViolation("table entry shape mismatch".into()));
        }
        self.table.insert(key, d);
        Ok(())
    }
}

impl LanguageModel for TableModel {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbs> {
        if context.len() >= self.key_len {
            let key = restrict_context(context, self.key_len);
            if let Some(d) = self.table.get(key) {
                return Ok(d.clone());
            }
        }
        Ok(self.fallback.clone())
    }
}
