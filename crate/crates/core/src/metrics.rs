//! Degeneration and quality metrics: rep-n, diversity, coherence and
//! perplexity.
//!
//! All metrics work on raw token ids with no case folding or other
//! normalization. rep-n and diversity look at the continuation only.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::vocab::TokenId;

/// `1 - distinct / total` over overlapping n-grams of `cont`.
pub fn rep_n(cont: &[TokenId], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("rep-n needs n >= 1"));
    }
    if cont.len() < n {
        return Err(Error::UndefinedMetric(format!(
            "rep-{n} needs at least {n} tokens, got {}",
            cont.len()
        )));
    }
    let total = cont.len() - n + 1;
    let distinct: HashSet<&[TokenId]> = cont.windows(n).collect();
    Ok(1.0 - distinct.len() as f64 / total as f64)
}

/// `(1 - rep_2)(1 - rep_3)(1 - rep_4)`.
pub fn diversity(cont: &[TokenId]) -> Result<f64> {
    let mut d = 1.0;
    for n in 2..=4 {
        d *= 1.0 - rep_n(cont, n)?;
    }
    Ok(d)
}

/// Maps a token sequence to a fixed-dimension vector.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, tokens: &[TokenId]) -> Result<Vec<f64>>;
}

/// L2-normalized token count vector over the vocabulary.
///
/// This is a lexical-overlap proxy for a learned sentence encoder. It keeps
/// the cosine structure of the coherence metric but rewards shared surface
/// tokens rather than shared meaning.
#[derive(Debug, Clone, Copy)]
pub struct BagOfWords {
    vocab_size: usize,
}

impl BagOfWords {
    pub fn new(vocab_size: usize) -> Self {
        BagOfWords { vocab_size }
    }
}

impl Embedder for BagOfWords {
    fn dim(&self) -> usize {
        self.vocab_size
    }

    fn embed(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.vocab_size];
        for &t in tokens {
            let slot = v.get_mut(t as usize).ok_or_else(|| {
                Error::ContractViolation(format!("token {t} outside vocabulary of size {}", self.vocab_size))
            })?;
            *slot += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ContractViolation(format!(
            "embedding dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedMetric("cosine of a zero-norm embedding".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn coherence(prompt: &[TokenId], cont: &[TokenId], emb: &dyn Embedder) -> Result<f64> {
    if prompt.is_empty() || cont.is_empty() {
        return Err(Error::UndefinedMetric("coherence needs a non-empty prompt and continuation".into()));
    }
    cosine(&emb.embed(prompt)?, &emb.embed(cont)?)
}

/// `exp(-mean log p(x_i | prompt + cont_<i))` under `scorer`.
pub fn perplexity(cont: &[TokenId], prompt: &[TokenId], scorer: &dyn LanguageModel) -> Result<f64> {
    if cont.is_empty() {
        return Err(Error::UndefinedMetric("perplexity of an empty continuation".into()));
    }
    let mut context = prompt.to_vec();
    let mut total = 0.0;
    for &t in cont {
        let d = scorer.next_logprobs(&context)?;
        if t as usize >= d.len() {
            return Err(Error::ContractViolation(format!("token {t} outside scorer vocabulary")));
        }
        total += d.get(t);
        context.push(t);
    }
    Ok((-total / cont.len() as f64).exp())
}

/// Vectors produced by an external encoder, exchanged as JSONL lines
/// `{"id": ..., "vector": [...]}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrecomputedEmbeddings {
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    id: String,
    vector: Vec<f64>,
}

impl PrecomputedEmbeddings {
    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) {
        self.vectors.insert(id.into(), vector);
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Cosine between two stored vectors.
    pub fn coherence(&self, prompt_id: &str, cont_id: &str) -> Result<f64> {
        let look = |id: &str| {
            self.get(id)
                .ok_or_else(|| Error::UndefinedMetric(format!("no embedding for {id:?}")))
        };
        cosine(look(prompt_id)?, look(cont_id)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = PrecomputedEmbeddings::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingLine = serde_json::from_str(&line).map_err(|e| Error::Ingestion {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            out.vectors.insert(rec.id, rec.vector);
        }
        Ok(out)
    }

    /// Writes lines sorted by id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut ids: Vec<&String> = self.vectors.keys().collect();
        ids.sort();
        for id in ids {
            let line = EmbeddingLine {
                id: id.clone(),
                vector: self.vectors[id].clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Per-continuation metrics. A field is `None` when the metric is undefined
/// for that continuation (too short for rep-n, empty, or no scorer given).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rep_2: Option<f64>,
    pub rep_3: Option<f64>,
    pub rep_4: Option<f64>,
    pub diversity: Option<f64>,
    pub coherence: Option<f64>,
    pub ppl: Option<f64>,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(x) => Ok(Some(x)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

impl MetricsReport {
    pub fn compute(
        prompt: &[TokenId],
        cont: &[TokenId],
        emb: &dyn Embedder,
        scorer: Option<&dyn LanguageModel>,
    ) -> Result<Self> {
        Ok(MetricsReport {
            rep_2: defined(rep_n(cont, 2))?,
            rep_3: defined(rep_n(cont, 3))?,
            rep_4: defined(rep_n(cont, 4))?,
            diversity: defined(diversity(cont))?,
            coherence: defined(coherence(prompt, cont, emb))?,
            ppl: match scorer {
                Some(s) => defined(perplexity(cont, prompt, s))?,
                None => None,
            },
        })
    }
}
