//! Evaluation harness: corpus ingestion, experiment configs, parallel
//! decoding over prompt sets, record persistence and comparison reports.

mod corpus;
mod http;
mod report;

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contrast::ContrastConfig;
use crate::decode::{DecodeParams, Decoder, Diagnostic};
use crate::error::{Error, Result};
use crate::lm::{ContextWindow, LanguageModel, UniformModel};
use crate::metrics::{BagOfWords, Embedder, MetricsReport};
use crate::ngram::{DynamicNGramModel, NGramModel, PrefixFittedAmateur};
use crate::vocab::{TokenId, Vocabulary};

pub use corpus::{
    build_prompts, ingest_corpus, split_passages, CorpusFormat, PromptInstance, MIN_PASSAGE_TOKENS, PROMPT_TOKENS,
};
pub use http::{HttpBackend, HttpOptions, HTTP_NORMALIZATION_TOL};
pub use report::{compare_report, group_by_config, ComparisonReport, ReportRow};

/// Where a model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendSpec {
    /// A model file written by `NGramModel::save`.
    Ngram { path: PathBuf },
    /// Uniform over the expert's vocabulary.
    Uniform,
    /// An n-gram model over the expert's vocabulary whose counts come only
    /// from the text generated so far (soft repetition blocking).
    DynamicNgram { order: usize, k: f64 },
    /// A remote server; `vocab` is the vocabulary file it indexes.
    Http {
        endpoint: String,
        vocab: PathBuf,
        #[serde(default)]
        options: HttpOptions,
    },
}

/// The two plausibility and prompt-visibility ablations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Score every token instead of the plausible set only.
    #[serde(default)]
    pub disable_vhead: bool,
    /// Let the amateur see the whole prompt regardless of its window.
    #[serde(default)]
    pub full_prompt_amateur: bool,
}

/// One declarative experiment. Its canonical JSON form (sorted keys, no
/// whitespace) is hashed into [`ExperimentConfig::digest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub expert: BackendSpec,
    #[serde(default)]
    pub amateur: Option<BackendSpec>,
    /// Perplexity scorer; the expert when absent.
    #[serde(default)]
    pub scorer: Option<BackendSpec>,
    pub decoder: Decoder,
    #[serde(default)]
    pub contrast: ContrastConfig,
    #[serde(default)]
    pub params: DecodeParams,
    #[serde(default)]
    pub ablation: Ablation,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.contrast.validate()?;
        self.params.validate()?;
        let ablated = self.ablation.disable_vhead || self.ablation.full_prompt_amateur;
        if ablated && !self.decoder.is_contrastive() {
            return Err(Error::invalid(format!(
                "ablation flags need a contrastive decoder, got {}",
                self.decoder
            )));
        }
        if self.decoder.is_contrastive() && self.amateur.is_none() {
            return Err(Error::invalid(format!("decoder {} needs an amateur", self.decoder)));
        }
        if matches!(self.expert, BackendSpec::Uniform | BackendSpec::DynamicNgram { .. }) {
            return Err(Error::invalid("the expert must carry its own vocabulary (ngram or http)"));
        }
        Ok(())
    }

    /// Contrast settings after applying the ablation flags.
    pub fn effective_contrast(&self) -> ContrastConfig {
        let mut c = self.contrast;
        if self.ablation.disable_vhead {
            c.plausibility_filter = false;
        }
        if self.ablation.full_prompt_amateur {
            c.amateur.context_window = ContextWindow::Unlimited;
        }
        c
    }

    pub fn canonical_json(&self) -> Result<String> {
        // serde_json's default map is ordered, so a round trip through
        // `Value` sorts every object's keys.
        Ok(serde_json::to_string(&serde_json::to_value(self)?)?)
    }

    /// Hex sha256 of [`Self::canonical_json`].
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical_json()?.as_bytes())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Seed for one prompt: the first 8 bytes (little endian) of
/// `sha256(global_seed as LE bytes ++ prompt id)`. Independent of worker
/// count and prompt order.
pub fn prompt_seed(global_seed: u64, prompt_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(prompt_id.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 has 32 bytes"))
}

enum AmateurModel {
    Plain(Box<dyn LanguageModel>),
    PrefixFitted(DynamicNGramModel),
}

/// Models loaded from an [`ExperimentConfig`].
pub struct LoadedModels {
    pub vocab: Vocabulary,
    expert: Box<dyn LanguageModel>,
    amateur: Option<AmateurModel>,
    scorer: Option<Box<dyn LanguageModel>>,
}

impl LoadedModels {
    pub fn expert(&self) -> &dyn LanguageModel {
        self.expert.as_ref()
    }

    pub fn scorer(&self) -> &dyn LanguageModel {
        self.scorer.as_deref().unwrap_or(self.expert.as_ref())
    }
}

fn load_with_vocab(spec: &BackendSpec) -> Result<(Box<dyn LanguageModel>, Vocabulary)> {
    match spec {
        BackendSpec::Ngram { path } => {
            let m = NGramModel::load(path)?;
            let v = m.vocab().clone();
            Ok((Box::new(m), v))
        }
        BackendSpec::Http {
            endpoint,
            vocab,
            options,
        } => {
            let v = Vocabulary::load(vocab)?;
            Ok((Box::new(HttpBackend::connect(endpoint, &v, *options)?), v))
        }
        _ => Err(Error::invalid("backend has no vocabulary of its own")),
    }
}

fn load_secondary(spec: &BackendSpec, vocab: &Vocabulary) -> Result<AmateurModel> {
    let model = match spec {
        BackendSpec::Uniform => AmateurModel::Plain(Box::new(UniformModel::new(vocab)?)),
        BackendSpec::DynamicNgram { order, k } => {
            AmateurModel::PrefixFitted(DynamicNGramModel::empty(vocab.clone(), *order, *k, None)?)
        }
        other => {
            let (m, v) = load_with_vocab(other)?;
            if v.tokens() != vocab.tokens() {
                return Err(Error::ContractViolation(format!(
                    "vocabulary mismatch: expert has {} tokens, other model {} (or a different order)",
                    vocab.len(),
                    v.len()
                )));
            }
            AmateurModel::Plain(m)
        }
    };
    Ok(model)
}

pub fn load_models(cfg: &ExperimentConfig) -> Result<LoadedModels> {
    cfg.validate()?;
    let (expert, vocab) = load_with_vocab(&cfg.expert)?;
    let amateur = cfg.amateur.as_ref().map(|s| load_secondary(s, &vocab)).transpose()?;
    let scorer = match &cfg.scorer {
        None => None,
        Some(s) => match load_secondary(s, &vocab)? {
            AmateurModel::Plain(m) => Some(m),
            AmateurModel::PrefixFitted(_) => {
                return Err(Error::invalid("a dynamic n-gram cannot score perplexity"));
            }
        },
    };
    Ok(LoadedModels {
        vocab,
        expert,
        amateur,
        scorer,
    })
}

/// One decoded prompt with its metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub prompt_id: String,
    pub config_digest: String,
    pub decoder: String,
    pub seed: u64,
    pub prompt_ids: Vec<TokenId>,
    pub prompt_text: String,
    pub reference_text: String,
    pub continuation_ids: Vec<TokenId>,
    pub continuation_text: String,
    pub metrics: MetricsReport,
    pub diagnostics: Vec<Diagnostic>,
    pub engine_version: String,
    /// Wall-clock decode time; the only field that varies between runs.
    pub wall_ms: u64,
}

impl EvalRecord {
    /// Recomputes metrics from the stored token ids.
    pub fn recompute_metrics(&self, emb: &dyn Embedder, scorer: Option<&dyn LanguageModel>) -> Result<MetricsReport> {
        MetricsReport::compute(&self.prompt_ids, &self.continuation_ids, emb, scorer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Decoding threads. Never affects output.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Prompt length the amateur actually sees under `window`.
fn visible_prompt_len(window: ContextWindow, prompt_len: usize) -> usize {
    match window {
        ContextWindow::Unlimited => prompt_len,
        ContextWindow::Last(w) => w.min(prompt_len),
    }
}

fn decode_one(
    cfg: &ExperimentConfig,
    models: &LoadedModels,
    contrast: &ContrastConfig,
    digest: &str,
    p: &PromptInstance,
) -> Result<EvalRecord> {
    let seed = prompt_seed(cfg.params.seed, &p.id);
    let params = DecodeParams { seed, ..cfg.params };
    let started = Instant::now();
    let fitted;
    let amateur: Option<&dyn LanguageModel> = match &models.amateur {
        None => None,
        Some(AmateurModel::Plain(m)) => Some(m.as_ref()),
        Some(AmateurModel::PrefixFitted(m)) => {
            fitted = PrefixFittedAmateur::new(m, visible_prompt_len(contrast.amateur.context_window, p.prompt.len()));
            Some(&fitted)
        }
    };
    let out = cfg.decoder.run(models.expert(), amateur, &p.prompt, contrast, &params)?;
    let wall_ms = started.elapsed().as_millis() as u64;
    let emb = BagOfWords::new(models.vocab.len());
    let metrics = MetricsReport::compute(&p.prompt, &out.continuation, &emb, Some(models.scorer()))?;
    Ok(EvalRecord {
        prompt_id: p.id.clone(),
        config_digest: digest.to_string(),
        decoder: cfg.decoder.to_string(),
        seed,
        prompt_text: models.vocab.decode(&p.prompt),
        reference_text: models.vocab.decode(&p.reference),
        prompt_ids: p.prompt.clone(),
        continuation_text: models.vocab.decode(&out.continuation),
        continuation_ids: out.continuation,
        metrics,
        diagnostics: out.diagnostics,
        engine_version: crate::ENGINE_VERSION.to_string(),
        wall_ms,
    })
}

/// Decodes every prompt on a bounded worker pool. Records come back in
/// prompt order.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    models: &LoadedModels,
    prompts: &[PromptInstance],
    opts: RunOptions,
) -> Result<Vec<EvalRecord>> {
    cfg.validate()?;
    let digest = cfg.digest()?;
    let contrast = cfg.effective_contrast();
    for p in prompts {
        models.vocab.check_ids(&p.prompt)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let records = pool.install(|| {
        prompts
            .par_iter()
            .map(|p| decode_one(cfg, models, &contrast, &digest, p))
            .collect::<Result<Vec<_>>>()
    })?;
    log::info!("{}: decoded {} prompts", cfg.decoder, records.len());
    Ok(records)
}

/// Corpus-level means over records where each metric is defined.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub records: usize,
    pub rep_2: Option<f64>,
    pub rep_3: Option<f64>,
    pub rep_4: Option<f64>,
    pub diversity: Option<f64>,
    pub coherence: Option<f64>,
    pub ppl: Option<f64>,
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = xs.flatten().collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub fn summarize(records: &[EvalRecord]) -> MetricsSummary {
    let m = |f: fn(&MetricsReport) -> Option<f64>| mean(records.iter().map(|r| f(&r.metrics)));
    MetricsSummary {
        records: records.len(),
        rep_2: m(|x| x.rep_2),
        rep_3: m(|x| x.rep_3),
        rep_4: m(|x| x.rep_4),
        diversity: m(|x| x.diversity),
        coherence: m(|x| x.coherence),
        ppl: m(|x| x.ppl),
    }
}

/// Appends records as JSONL; existing lines are never rewritten.
pub fn append_records(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// The export line layout consumed by external scoring tools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportedGeneration {
    pub id: String,
    pub prompt: String,
    pub generation: String,
    pub reference: String,
    pub config_digest: String,
    pub seed: u64,
}

impl From<&EvalRecord> for ExportedGeneration {
    fn from(r: &EvalRecord) -> Self {
        ExportedGeneration {
            id: r.prompt_id.clone(),
            prompt: r.prompt_text.clone(),
            generation: r.continuation_text.clone(),
            reference: r.reference_text.clone(),
            config_digest: r.config_digest.clone(),
            seed: r.seed,
        }
    }
}

/// Writes one JSON object per record. Fails without touching the file
/// system when `records` is empty.
pub fn export_generations(records: &[EvalRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("nothing to export: no records"));
    }
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, &ExportedGeneration::from(r))?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::AmateurConfig;
    use crate::ngram::train_ngram;
    use crate::synthetic::generate_corpus;

    struct Fixture {
        _dir: tempfile::TempDir,
        model_path: PathBuf,
        unigram_path: PathBuf,
        prompts: Vec<PromptInstance>,
    }

    fn fixture(n_prompts: usize) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let train = generate_corpus(21, 120_000);
        let vocab = Vocabulary::build([train.as_str()]);
        let passages = split_passages(&train, CorpusFormat::Txt, Path::new("train")).unwrap();
        let seqs: Vec<Vec<TokenId>> = passages.iter().map(|p| vocab.encode(p)).collect();
        let expert = train_ngram(&seqs, vocab.clone(), 3, 0.01, None).unwrap();
        let unigram = train_ngram(&seqs, vocab.clone(), 1, 1e-3, None).unwrap();
        let model_path = dir.path().join("expert.json");
        let unigram_path = dir.path().join("unigram.json");
        expert.save(&model_path).unwrap();
        unigram.save(&unigram_path).unwrap();
        let held = generate_corpus(22, 20_000);
        let passages = split_passages(&held, CorpusFormat::Txt, Path::new("held")).unwrap();
        let mut prompts = build_prompts("held", &passages, &vocab);
        prompts.truncate(n_prompts);
        Fixture {
            _dir: dir,
            model_path,
            unigram_path,
            prompts,
        }
    }

    fn config(f: &Fixture, decoder: Decoder, m: usize) -> ExperimentConfig {
        ExperimentConfig {
            expert: BackendSpec::Ngram {
                path: f.model_path.clone(),
            },
            amateur: Some(BackendSpec::Ngram {
                path: f.unigram_path.clone(),
            }),
            scorer: None,
            decoder,
            contrast: ContrastConfig::default(),
            params: DecodeParams {
                max_new_tokens: m,
                seed: 5,
                ..Default::default()
            },
            ablation: Ablation::default(),
        }
    }

    fn without_time(mut rs: Vec<EvalRecord>) -> Vec<EvalRecord> {
        rs.iter_mut().for_each(|r| r.wall_ms = 0);
        rs
    }

    #[test]
    fn greedy_bookkeeping() {
        let f = fixture(2);
        let cfg = config(&f, Decoder::Greedy, 4);
        let models = load_models(&cfg).unwrap();
        let rs = run_experiment(&cfg, &models, &f.prompts, RunOptions { workers: 2 }).unwrap();
        assert_eq!(rs.len(), 2);
        assert!(rs.iter().all(|r| r.continuation_ids.len() == 4));
        assert_eq!(rs[0].prompt_id, f.prompts[0].id);
        assert_eq!(rs[0].config_digest, cfg.digest().unwrap());
    }

    #[test]
    fn worker_count_does_not_change_records() {
        let f = fixture(6);
        let cfg = config(&f, Decoder::CdSample, 12);
        let models = load_models(&cfg).unwrap();
        let a = run_experiment(&cfg, &models, &f.prompts, RunOptions { workers: 1 }).unwrap();
        let b = run_experiment(&cfg, &models, &f.prompts, RunOptions { workers: 4 }).unwrap();
        assert_eq!(without_time(a), without_time(b));
    }

    #[test]
    fn stored_metrics_are_recomputable() {
        let f = fixture(3);
        let cfg = config(&f, Decoder::CdSearch, 16);
        let models = load_models(&cfg).unwrap();
        let rs = run_experiment(&cfg, &models, &f.prompts, RunOptions { workers: 2 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        append_records(&path, &rs).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back, rs);
        let emb = BagOfWords::new(models.vocab.len());
        for r in &back {
            assert_eq!(r.recompute_metrics(&emb, Some(models.scorer())).unwrap(), r.metrics);
        }
        append_records(&path, &rs[..1]).unwrap();
        assert_eq!(read_records(&path).unwrap().len(), 4);
    }

    #[test]
    fn vhead_flag_is_noop_for_uniform_amateur_at_alpha_zero() {
        let f = fixture(3);
        let mut cfg = config(&f, Decoder::CdSearch, 8);
        cfg.amateur = Some(BackendSpec::Uniform);
        cfg.contrast.alpha = 0.0;
        let models = load_models(&cfg).unwrap();
        let on = run_experiment(&cfg, &models, &f.prompts, RunOptions::default()).unwrap();
        cfg.ablation.disable_vhead = true;
        let off = run_experiment(&cfg, &models, &f.prompts, RunOptions::default()).unwrap();
        for (a, b) in on.iter().zip(&off) {
            assert_eq!(a.continuation_ids, b.continuation_ids);
            assert_eq!(a.metrics, b.metrics);
        }
    }

    #[test]
    fn ablation_mapping() {
        let f = fixture(0);
        let mut cfg = config(&f, Decoder::CdSearch, 8);
        cfg.contrast.amateur = AmateurConfig {
            temperature: 0.5,
            context_window: ContextWindow::Last(1),
        };
        cfg.ablation = Ablation {
            disable_vhead: true,
            full_prompt_amateur: true,
        };
        let c = cfg.effective_contrast();
        assert!(!c.plausibility_filter);
        assert_eq!(c.amateur.context_window, ContextWindow::Unlimited);
        assert_eq!(c.amateur.temperature, 0.5);
        cfg.decoder = Decoder::Greedy;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn digest_is_canonical() {
        let f = fixture(0);
        let cfg = config(&f, Decoder::TopK { k: 50 }, 8);
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.digest().unwrap(), cfg.digest().unwrap());
        assert_eq!(cfg.digest().unwrap().len(), 64);
        let mut other = cfg.clone();
        other.params.seed += 1;
        assert_ne!(other.digest().unwrap(), cfg.digest().unwrap());
        let canon = cfg.canonical_json().unwrap();
        assert!(canon.find("\"ablation\"").unwrap() < canon.find("\"amateur\"").unwrap());
    }

    #[test]
    fn prompt_seeds_differ_by_id() {
        assert_eq!(prompt_seed(1, "a:0"), prompt_seed(1, "a:0"));
        assert_ne!(prompt_seed(1, "a:0"), prompt_seed(1, "a:1"));
        assert_ne!(prompt_seed(1, "a:0"), prompt_seed(2, "a:0"));
    }

    #[test]
    fn vocabulary_mismatch_is_rejected() {
        let f = fixture(0);
        let dir = tempfile::tempdir().unwrap();
        let other_path = dir.path().join("other.json");
        let (ids, v) = crate::vocab::tokenize_build("x y z x y");
        train_ngram(&[ids], v, 2, 0.1, None).unwrap().save(&other_path).unwrap();
        let mut cfg = config(&f, Decoder::CdSearch, 4);
        cfg.amateur = Some(BackendSpec::Ngram { path: other_path });
        assert!(matches!(load_models(&cfg), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn export_layout() {
        let f = fixture(2);
        let cfg = config(&f, Decoder::Greedy, 3);
        let models = load_models(&cfg).unwrap();
        let mut rs = run_experiment(&cfg, &models, &f.prompts, RunOptions { workers: 1 }).unwrap();
        rs[0].continuation_text = "naïve café – 東京 🚀".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.jsonl");
        export_generations(&rs, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("{\"id\":"));
        let back: ExportedGeneration = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(back, ExportedGeneration::from(&rs[0]));
        assert_eq!(back.generation, "naïve café – 東京 🚀");

        let empty = dir.path().join("none.jsonl");
        assert!(export_generations(&[], &empty).is_err());
        assert!(!empty.exists());
    }

    #[test]
    fn dynamic_amateur_runs() {
        let f = fixture(2);
        let mut cfg = config(&f, Decoder::CdSearch, 10);
        cfg.amateur = Some(BackendSpec::DynamicNgram { order: 3, k: 1e-3 });
        let models = load_models(&cfg).unwrap();
        let rs = run_experiment(&cfg, &models, &f.prompts, RunOptions { workers: 2 }).unwrap();
        assert!(rs.iter().all(|r| r.continuation_ids.len() == 10));
    }
}
