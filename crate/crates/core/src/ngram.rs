//! Interpolated add-k n-gram language models.
//!
//! For order `n`, smoothing `k` and weights `λ_1..λ_n` the model estimates
//!
//! ```text
//! p(w | ctx) = Σ_j λ_j · (c_j(ctx_j, w) + k) / (T_j(ctx_j) + k·|V|)
//! ```
//!
//! where `ctx_j` is the last `j - 1` tokens of the context and `T_j` the total
//! count observed after `ctx_j`. A context shorter than `j - 1` tokens has no
//! order-`j` counts, so that term degenerates to `1/|V|`.
//!
//! [`DynamicNGramModel`] adds a second, mutable count table that is blended
//! into the same formula; it backs the soft n-gram-blocking amateur.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{LanguageModel, LogProbs};
use crate::vocab::{TokenId, Vocabulary};

pub const MODEL_FORMAT: &str = "contrastive-ngram";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

/// Counts keyed by context, one map per context length `0..order`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    by_len: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
}

impl CountTable {
    pub fn new(order: usize) -> Self {
        CountTable {
            by_len: vec![HashMap::new(); order],
        }
    }

    pub fn order(&self) -> usize {
        self.by_len.len()
    }

    /// Adds one occurrence of `token` after every suffix of `context` shorter
    /// than the model order.
    pub fn observe(&mut self, token: TokenId, context: &[TokenId]) {
        self.add(token, context, 1);
    }

    fn add(&mut self, token: TokenId, context: &[TokenId], count: u64) {
        for (len, table) in self.by_len.iter_mut().enumerate() {
            if context.len() < len {
                break;
            }
            let key = &context[context.len() - len..];
            let entry = match table.get_mut(key) {
                Some(e) => e,
                None => table.entry(key.to_vec()).or_default(),
            };
            entry.total += count;
            *entry.next.entry(token).or_insert(0) += count;
        }
    }

    /// Raw count of `token` after exactly `context` (whose length selects the
    /// order).
    pub fn count(&self, context: &[TokenId], token: TokenId) -> u64 {
        self.by_len
            .get(context.len())
            .and_then(|t| t.get(context))
            .and_then(|c| c.next.get(&token))
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self, context: &[TokenId]) -> u64 {
        self.by_len
            .get(context.len())
            .and_then(|t| t.get(context))
            .map(|c| c.total)
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.by_len.iter().all(HashMap::is_empty)
    }

    fn lookup(&self, key: &[TokenId]) -> Option<&ContextCounts> {
        self.by_len.get(key.len()).and_then(|t| t.get(key))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    k: f64,
    lambdas: Vec<f64>,
    vocab: Vocabulary,
    counts: CountTable,
}

/// Uniform interpolation weights over `order` orders.
pub fn uniform_lambdas(order: usize) -> Vec<f64> {
    vec![1.0 / order as f64; order]
}

fn check_params(order: usize, k: f64, lambdas: &[f64]) -> Result<()> {
    if order < 1 {
        return Err(Error::invalid("n-gram order must be at least 1"));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::invalid(format!("smoothing k must be positive, got {k}")));
    }
    if lambdas.len() != order {
        return Err(Error::invalid(format!(
            "expected {order} interpolation weights, got {}",
            lambdas.len()
        )));
    }
    if lambdas.iter().any(|&l| !(l.is_finite() && l >= 0.0)) {
        return Err(Error::invalid("interpolation weights must be non-negative"));
    }
    let sum: f64 = lambdas.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "interpolation weights sum to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Trains an order-`n` model. Each corpus entry is one passage; n-grams never
/// span passages.
pub fn train_ngram(
    corpus: &[Vec<TokenId>],
    vocab: Vocabulary,
    order: usize,
    k: f64,
    lambdas: Option<Vec<f64>>,
) -> Result<NGramModel> {
    let lambdas = lambdas.unwrap_or_else(|| uniform_lambdas(order.max(1)));
    check_params(order, k, &lambdas)?;
    if corpus.iter().all(Vec::is_empty) {
        return Err(Error::invalid("training corpus is empty"));
    }
    let mut counts = CountTable::new(order);
    for seq in corpus {
        vocab.check_ids(seq)?;
        for i in 0..seq.len() {
            counts.observe(seq[i], &seq[..i]);
        }
    }
    Ok(NGramModel {
        order,
        k,
        lambdas,
        vocab,
        counts,
    })
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn counts(&self) -> &CountTable {
        &self.counts
    }

    /// The interpolated estimate with counts summed over `tables`.
    fn estimate(&self, context: &[TokenId], tables: &[&CountTable]) -> LogProbs {
        let v = self.vocab.len();
        let kv = self.k * v as f64;
        let mut acc = vec![0.0f64; v];
        let mut floor = 0.0f64;
        for (len, &lambda) in self.lambdas.iter().enumerate() {
            if lambda == 0.0 {
                continue;
            }
            if context.len() < len {
                floor += lambda / v as f64;
                continue;
            }
            let key = &context[context.len() - len..];
            let found: Vec<&ContextCounts> = tables.iter().filter_map(|t| t.lookup(key)).collect();
            let total: u64 = found.iter().map(|c| c.total).sum();
            let denom = total as f64 + kv;
            floor += lambda * self.k / denom;
            let scale = lambda / denom;
            for c in found {
                for (&tok, &n) in &c.next {
                    acc[tok as usize] += scale * n as f64;
                }
            }
        }
        for x in &mut acc {
            *x = (*x + floor).ln();
        }
        LogProbs::from_raw_unchecked(acc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&ModelFile::from(self))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&body).map_err(|e| Error::ModelFormat {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        file.into_model().map_err(|e| Error::ModelFormat {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(s)?.into_model()
    }
}

impl LanguageModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbs> {
        Ok(self.estimate(context, &[&self.counts]))
    }
}

/// On-disk layout. Count tables are stored sorted so the encoding is
/// canonical.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    order: usize,
    k: f64,
    lambdas: Vec<f64>,
    vocab: Vocabulary,
    /// `counts[len]` holds every context of that length.
    counts: Vec<Vec<ContextEntry>>,
}

#[derive(Serialize, Deserialize)]
struct ContextEntry {
    context: Vec<TokenId>,
    next: Vec<(TokenId, u64)>,
}

impl From<&NGramModel> for ModelFile {
    fn from(m: &NGramModel) -> Self {
        let counts = m
            .counts
            .by_len
            .iter()
            .map(|table| {
                let sorted: BTreeMap<&Vec<TokenId>, &ContextCounts> = table.iter().collect();
                sorted
                    .into_iter()
                    .map(|(ctx, c)| {
                        let mut next: Vec<(TokenId, u64)> =
                            c.next.iter().map(|(&t, &n)| (t, n)).collect();
                        next.sort_unstable();
                        ContextEntry {
                            context: ctx.clone(),
                            next,
                        }
                    })
                    .collect()
            })
            .collect();
        ModelFile {
            format: MODEL_FORMAT.to_owned(),
            version: MODEL_VERSION,
            order: m.order,
            k: m.k,
            lambdas: m.lambdas.clone(),
            vocab: m.vocab.clone(),
            counts,
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<NGramModel> {
        if self.format != MODEL_FORMAT {
            return Err(Error::invalid(format!("unknown model format {:?}", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model version {}",
                self.version
            )));
        }
        check_params(self.order, self.k, &self.lambdas)?;
        if self.counts.len() != self.order {
            return Err(Error::invalid("count table count does not match order"));
        }
        let mut table = CountTable::new(self.order);
        for (len, entries) in self.counts.into_iter().enumerate() {
            for e in entries {
                if e.context.len() != len {
                    return Err(Error::invalid("context length does not match its table"));
                }
                self.vocab.check_ids(&e.context)?;
                let mut c = ContextCounts::default();
                for (tok, n) in e.next {
                    self.vocab.check_ids(&[tok])?;
                    c.total += n;
                    *c.next.entry(tok).or_insert(0) += n;
                }
                table.by_len[len].insert(e.context, c);
            }
        }
        Ok(NGramModel {
            order: self.order,
            k: self.k,
            lambdas: self.lambdas,
            vocab: self.vocab,
            counts: table,
        })
    }
}

/// An n-gram model with an extra mutable count table for tokens observed
/// during generation. Single-owner: share it only through
/// [`PrefixFittedAmateur`], which never mutates.
#[derive(Debug, Clone)]
pub struct DynamicNGramModel {
    base: NGramModel,
    dynamic: CountTable,
    use_static: bool,
}

impl DynamicNGramModel {
    /// Static and dynamic counts blended.
    pub fn new(base: NGramModel) -> Self {
        let dynamic = CountTable::new(base.order);
        DynamicNGramModel {
            base,
            dynamic,
            use_static: true,
        }
    }

    /// Ignores the static counts; only observed tokens shape the estimate.
    pub fn dynamic_only(base: NGramModel) -> Self {
        DynamicNGramModel {
            use_static: false,
            ..Self::new(base)
        }
    }

    /// An untrained dynamic-only model over `vocab`.
    pub fn empty(vocab: Vocabulary, order: usize, k: f64, lambdas: Option<Vec<f64>>) -> Result<Self> {
        let lambdas = lambdas.unwrap_or_else(|| uniform_lambdas(order.max(1)));
        check_params(order, k, &lambdas)?;
        if vocab.is_empty() {
            return Err(Error::invalid("empty vocabulary"));
        }
        let base = NGramModel {
            order,
            k,
            lambdas,
            vocab,
            counts: CountTable::new(order),
        };
        Ok(Self::dynamic_only(base))
    }

    pub fn base(&self) -> &NGramModel {
        &self.base
    }

    pub fn dynamic_counts(&self) -> &CountTable {
        &self.dynamic
    }

    pub fn observe(&mut self, token: TokenId, context: &[TokenId]) {
        self.dynamic.observe(token, context);
    }

    pub fn reset(&mut self) {
        self.dynamic = CountTable::new(self.base.order);
    }

    fn score_with(&self, context: &[TokenId], extra: Option<&CountTable>) -> LogProbs {
        let mut tables: Vec<&CountTable> = Vec::with_capacity(3);
        if self.use_static {
            tables.push(&self.base.counts);
        }
        tables.push(&self.dynamic);
        if let Some(e) = extra {
            tables.push(e);
        }
        self.base.estimate(context, &tables)
    }
}

impl LanguageModel for DynamicNGramModel {
    fn vocab_size(&self) -> usize {
        self.base.vocab.len()
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbs> {
        Ok(self.score_with(context, None))
    }
}

/// Read-only view of a [`DynamicNGramModel`] whose dynamic counts are fitted,
/// per query, to the generated part of the context (everything after
/// `prompt_len`). Each beam hypothesis thus sees counts for its own prefix.
pub struct PrefixFittedAmateur<'a> {
    model: &'a DynamicNGramModel,
    prompt_len: usize,
}

impl<'a> PrefixFittedAmateur<'a> {
    pub fn new(model: &'a DynamicNGramModel, prompt_len: usize) -> Self {
        PrefixFittedAmateur { model, prompt_len }
    }
}

impl LanguageModel for PrefixFittedAmateur<'_> {
    fn vocab_size(&self) -> usize {
        self.model.vocab_size()
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbs> {
        let mut fitted = CountTable::new(self.model.base.order);
        for i in self.prompt_len.min(context.len())..context.len() {
            fitted.observe(context[i], &context[..i]);
        }
        Ok(self.model.score_with(context, Some(&fitted)))
    }
}
