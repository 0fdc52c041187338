use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use contrastive_core::harness::{
    append_records, compare_report, export_generations, group_by_config, ingest_corpus, load_models, read_records,
    run_experiment, split_passages, summarize, Ablation, BackendSpec, CorpusFormat, ExperimentConfig, HttpOptions,
    PromptInstance, RunOptions,
};
use contrastive_core::ngram::train_ngram;
use contrastive_core::synthetic::generate_corpus;
use contrastive_core::{ContextWindow, ContrastConfig, DecodeParams, Decoder, TokenId, Vocabulary};

#[derive(Parser)]
#[command(name = "cdx", version, about = "Contrastive decoding with n-gram and remote language models")]
struct Cli {
    #[command(flatten)]
    global: GlobalFlags,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

/// Experiment settings shared by `decode` and `eval`. Any flag given here
/// overrides the matching field of a `--config` file.
#[derive(Args, Default)]
struct GlobalFlags {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Plausibility threshold in [0, 1].
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    amateur_temp: Option<f64>,
    /// Prompt tokens visible to the amateur: a count or `unlimited`.
    #[arg(long, global = true)]
    amateur_window: Option<ContextWindow>,
    #[arg(long, global = true)]
    beam: Option<usize>,
    #[arg(long, global = true)]
    max_new_tokens: Option<usize>,
    /// greedy, beam, top-k[=K], nucleus[=P], typical[=MASS], cd, cd-sample.
    #[arg(long, global = true)]
    decoder: Option<Decoder>,
    /// Model file, or an http(s) URL (needs --http-vocab).
    #[arg(long, global = true)]
    expert: Option<String>,
    /// Model file, URL, `uniform`, or `dynamic:ORDER[:K]`.
    #[arg(long, global = true)]
    amateur: Option<String>,
    /// Perplexity scorer; defaults to the expert.
    #[arg(long, global = true)]
    scorer: Option<String>,
    /// Vocabulary file for http backends.
    #[arg(long, global = true)]
    http_vocab: Option<PathBuf>,
    #[arg(long, global = true)]
    disable_vhead: bool,
    #[arg(long, global = true)]
    full_prompt_amateur: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train an interpolated add-k n-gram model.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        format: Option<CorpusFormat>,
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[arg(long, default_value_t = 0.01)]
        k: f64,
        /// Comma-separated interpolation weights, unigram first.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        /// Build the vocabulary from these files too (e.g. held-out text).
        #[arg(long)]
        vocab_from: Vec<PathBuf>,
        /// Reuse an existing vocabulary file instead of building one.
        #[arg(long, conflicts_with = "vocab_from")]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode one prompt.
    Decode {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the full evaluation record as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Decode every prompt of a corpus and record metrics.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        format: Option<CorpusFormat>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSONL file records are appended to.
        #[arg(long)]
        records: PathBuf,
        /// Also write generations in export layout.
        #[arg(long)]
        export: Option<PathBuf>,
        #[arg(long)]
        max_prompts: Option<usize>,
        /// Decoding threads; never changes output.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write generations from a records file in export layout.
    Export {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only records with this config digest (or digest prefix).
        #[arg(long)]
        digest: Option<String>,
    },
    /// Compare corpus means across configurations.
    Compare {
        /// Records files; configurations are split by digest.
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate a synthetic encyclopedia-style corpus.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1_200_000)]
        bytes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the canonical config and its digest.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_backend(spec: &str, http_vocab: Option<&Path>) -> Result<BackendSpec> {
    if spec == "uniform" {
        return Ok(BackendSpec::Uniform);
    }
    if let Some(rest) = spec.strip_prefix("dynamic:") {
        let mut parts = rest.split(':');
        let order = parts.next().unwrap_or("").parse().context("dynamic:ORDER[:K] needs an integer order")?;
        let k = match parts.next() {
            Some(k) => k.parse().context("dynamic:ORDER[:K] needs a numeric k")?,
            None => 1e-3,
        };
        return Ok(BackendSpec::DynamicNgram { order, k });
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        let vocab = http_vocab.context("http backends need --http-vocab")?;
        return Ok(BackendSpec::Http {
            endpoint: spec.to_string(),
            vocab: vocab.to_path_buf(),
            options: HttpOptions::default(),
        });
    }
    Ok(BackendSpec::Ngram { path: spec.into() })
}

fn build_config(flags: &GlobalFlags, file: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match file {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => {
            let expert = flags.expert.as_deref().context("--expert is required without --config")?;
            ExperimentConfig {
                expert: parse_backend(expert, flags.http_vocab.as_deref())?,
                amateur: None,
                scorer: None,
                decoder: Decoder::CdSearch,
                contrast: ContrastConfig::default(),
                params: DecodeParams::default(),
                ablation: Ablation::default(),
            }
        }
    };
    let vocab = flags.http_vocab.as_deref();
    if file.is_some() {
        if let Some(e) = &flags.expert {
            cfg.expert = parse_backend(e, vocab)?;
        }
    }
    if let Some(a) = &flags.amateur {
        cfg.amateur = Some(parse_backend(a, vocab)?);
    }
    if let Some(s) = &flags.scorer {
        cfg.scorer = Some(parse_backend(s, vocab)?);
    }
    if let Some(d) = flags.decoder {
        cfg.decoder = d;
    }
    if let Some(x) = flags.seed {
        cfg.params.seed = x;
    }
    if let Some(x) = flags.alpha {
        cfg.contrast.alpha = x;
    }
    if let Some(x) = flags.amateur_temp {
        cfg.contrast.amateur.temperature = x;
    }
    if let Some(x) = flags.amateur_window {
        cfg.contrast.amateur.context_window = x;
    }
    if let Some(x) = flags.beam {
        cfg.params.beam_width = x;
    }
    if let Some(x) = flags.max_new_tokens {
        cfg.params.max_new_tokens = x;
    }
    cfg.ablation.disable_vhead |= flags.disable_vhead;
    cfg.ablation.full_prompt_amateur |= flags.full_prompt_amateur;
    cfg.validate()?;
    Ok(cfg)
}

#[allow(clippy::too_many_arguments)]
fn train(
    corpus: &Path,
    format: Option<CorpusFormat>,
    order: usize,
    k: f64,
    lambdas: Option<Vec<f64>>,
    vocab_from: &[PathBuf],
    vocab_file: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let text = read(corpus)?;
    let format = format.unwrap_or_else(|| CorpusFormat::from_path(corpus));
    let passages = split_passages(&text, format, corpus)?;
    let vocab = match vocab_file {
        Some(p) => Vocabulary::load(p)?,
        None => {
            let mut texts = passages.clone();
            for extra in vocab_from {
                let t = read(extra)?;
                texts.extend(split_passages(&t, CorpusFormat::from_path(extra), extra)?);
            }
            Vocabulary::build(texts.iter().map(String::as_str))
        }
    };
    let seqs: Vec<Vec<TokenId>> = passages.iter().map(|p| vocab.encode(p)).collect();
    let tokens: usize = seqs.iter().map(Vec::len).sum();
    let model = train_ngram(&seqs, vocab, order, k, lambdas)?;
    model.save(out)?;
    eprintln!(
        "trained {order}-gram on {tokens} tokens ({} types) -> {}",
        model.vocab().len(),
        out.display()
    );
    Ok(())
}

/// Runs through the harness so seeding and dynamic amateurs behave exactly
/// as in `eval`; the prompt id is `cli:0`.
fn decode(cfg: &ExperimentConfig, prompt: &str, json: bool) -> Result<()> {
    let models = load_models(cfg)?;
    let ids = models.vocab.encode(prompt);
    if ids.is_empty() {
        bail!("prompt is empty");
    }
    let instance = PromptInstance {
        id: "cli:0".into(),
        passage_len: ids.len(),
        prompt: ids,
        reference: Vec::new(),
    };
    let record = run_experiment(cfg, &models, &[instance], RunOptions { workers: 1 })?.remove(0);
    if json {
        println!("{}", serde_json::to_string(&record)?);
    } else {
        println!("{}", record.continuation_text);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    cfg: &ExperimentConfig,
    corpus: &Path,
    format: Option<CorpusFormat>,
    records_path: &Path,
    export: Option<&Path>,
    max_prompts: Option<usize>,
    workers: Option<usize>,
) -> Result<()> {
    let models = load_models(cfg)?;
    let format = format.unwrap_or_else(|| CorpusFormat::from_path(corpus));
    let mut prompts = ingest_corpus(corpus, format, &models.vocab)?;
    if let Some(n) = max_prompts {
        prompts.truncate(n);
    }
    if prompts.is_empty() {
        eprintln!("warning: no prompts in {}; nothing to do", corpus.display());
        return Ok(());
    }
    let opts = workers.map_or_else(RunOptions::default, |w| RunOptions { workers: w });
    let records = run_experiment(cfg, &models, &prompts, opts)?;
    append_records(records_path, &records)?;
    if let Some(p) = export {
        export_generations(&records, p)?;
    }
    let s = summarize(&records);
    let show = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{x:.4}"));
    println!(
        "{} prompts  digest {}  rep-2 {}  rep-3 {}  rep-4 {}  div {}  coh {}  ppl {}",
        s.records,
        cfg.digest()?,
        show(s.rep_2),
        show(s.rep_3),
        show(s.rep_4),
        show(s.diversity),
        show(s.coherence),
        show(s.ppl)
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train {
            corpus,
            format,
            order,
            k,
            lambdas,
            vocab_from,
            vocab,
            out,
        } => train(corpus, *format, *order, *k, lambdas.clone(), vocab_from, vocab.as_deref(), out),
        Command::Decode { prompt, config, json } => {
            let cfg = build_config(&cli.global, config.as_deref())?;
            decode(&cfg, prompt, *json)
        }
        Command::Eval {
            corpus,
            format,
            config,
            records,
            export,
            max_prompts,
            workers,
        } => {
            let cfg = build_config(&cli.global, config.as_deref())?;
            eval(&cfg, corpus, *format, records, export.as_deref(), *max_prompts, *workers)
        }
        Command::Export { records, out, digest } => {
            let mut rs = read_records(records)?;
            if let Some(d) = digest {
                rs.retain(|r| r.config_digest.starts_with(d.as_str()));
            }
            export_generations(&rs, out)?;
            eprintln!("wrote {} generations to {}", rs.len(), out.display());
            Ok(())
        }
        Command::Compare { records, csv } => {
            let mut all = Vec::new();
            for p in records {
                all.extend(read_records(p)?);
            }
            let report = compare_report(&group_by_config(&all))?;
            print!("{}", report.to_text());
            if let Some(p) = csv {
                fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
            }
            Ok(())
        }
        Command::Synth { seed, bytes, out } => {
            let text = generate_corpus(*seed, *bytes);
            fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("wrote {} bytes to {}", text.len(), out.display());
            Ok(())
        }
        Command::Config { config } => {
            let cfg = build_config(&cli.global, config.as_deref())?;
            println!("{}", cfg.canonical_json()?);
            println!("{}", cfg.digest()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
